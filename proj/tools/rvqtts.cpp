#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "rvqtts/alignment/corpus_layout.hpp"
#include "rvqtts/codec/audio_io.hpp"
#include "rvqtts/codec/codec.hpp"
#include "rvqtts/corpus/corpus.hpp"
#include "rvqtts/errors.hpp"
#include "rvqtts/eval/eval.hpp"
#include "rvqtts/model/acoustic_model.hpp"
#include "rvqtts/pipeline.hpp"
#include "rvqtts/streaming/streaming.hpp"
#include "rvqtts/training/training.hpp"

namespace fs = std::filesystem;
using namespace rvqtts;

namespace {

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << text;
    if (!out) throw IoError("failed writing " + path.string());
}

void emit_report(const std::string& report_path, const std::string& text) {
    if (report_path.empty() || report_path == "-") {
        std::cout << text;
    } else {
        write_text(report_path, text);
    }
}

struct TrainFlags {
    std::string corpus, codec, config, out, log;
    std::vector<std::string> overrides;
    std::optional<std::uint64_t> steps, seed;
    std::optional<std::string> mode;
};

training::ExperimentConfig resolve_config(const std::string& config_path, const std::vector<std::string>& overrides) {
    training::ExperimentConfig cfg;
    if (!config_path.empty()) cfg = training::load_config(config_path);
    for (const auto& kv : overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
        if (!training::apply_config_key(cfg, kv.substr(0, eq), kv.substr(eq + 1))) {
            throw UsageError("unknown config key '" + kv.substr(0, eq) + "'");
        }
    }
    return cfg;
}

int cmd_train(const TrainFlags& f) {
    auto cfg = resolve_config(f.config, f.overrides);
    if (f.steps) cfg.train.max_steps = *f.steps;
    if (f.seed) cfg.train.seed = *f.seed;
    if (f.mode) cfg.model.decoding_mode = model::parse_decoding_mode(*f.mode);
    const auto codebooks = codec::load_codebooks(f.codec);
    const auto vocab = pipeline::corpus_vocabulary(f.corpus);
    auto corpus = pipeline::aligned_corpus(f.corpus, codebooks);
    const auto mc = pipeline::bind_model_config(cfg.model, vocab, codebooks);
    training::Trainer trainer(std::move(corpus), vocab, mc, cfg.train);
    training::TrainOutputs outputs;
    outputs.checkpoint = f.out;
    if (!f.log.empty()) outputs.log = f.log;
    const auto ck = training::train(trainer, outputs);
    std::fprintf(stderr, "trained %llu steps -> %s\n", static_cast<unsigned long long>(ck.step), f.out.c_str());
    return 0;
}

struct AblateSettings {
    std::string corpus, codec;
    std::vector<std::size_t> depths{8, 16, 32};
    training::ExperimentConfig experiment;
};

AblateSettings load_ablate_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    AblateSettings s;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw FormatError(path + ":" + std::to_string(n) + ": expected key=value");
        auto trim = [](std::string v) {
            const auto a = v.find_first_not_of(" \t\r");
            const auto b = v.find_last_not_of(" \t\r");
            return a == std::string::npos ? std::string{} : v.substr(a, b - a + 1);
        };
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key == "corpus") {
            s.corpus = value;
        } else if (key == "codec") {
            s.codec = value;
        } else if (key == "depths") {
            s.depths.clear();
            std::stringstream ss(value);
            std::string item;
            while (std::getline(ss, item, ',')) s.depths.push_back(std::stoul(trim(item)));
        } else if (!training::apply_config_key(s.experiment, key, value)) {
            throw ConfigError(path + ":" + std::to_string(n) + ": unknown key '" + key + "'");
        }
    }
    if (s.corpus.empty() || s.codec.empty()) throw ConfigError(path + ": 'corpus' and 'codec' are required");
    return s;
}

int cmd_ablate(const std::string& kind, const std::string& config_path, const std::string& report) {
    const auto s = load_ablate_config(config_path);
    const auto codebooks = codec::load_codebooks(s.codec);
    const auto corpus = pipeline::aligned_corpus(s.corpus, codebooks);
    const auto refs = pipeline::reference_waves(s.corpus, corpus);
    if (kind == "depth") {
        emit_report(report, eval::format_depth_table(eval::ablate_codebook_depth(codebooks, refs, s.depths)));
        return 0;
    }
    const auto vocab = pipeline::corpus_vocabulary(s.corpus);
    auto mc = pipeline::bind_model_config(s.experiment.model, vocab, codebooks);
    model::Checkpoint ckpts[2];
    for (int i = 0; i < 2; ++i) {
        mc.decoding_mode = i == 0 ? model::DecodingMode::depthwise : model::DecodingMode::parallel;
        training::Trainer trainer(corpus, vocab, mc, s.experiment.train);
        ckpts[i] = training::train(trainer, {});
    }
    emit_report(report, eval::format_decoding_table(eval::ablate_decoding_mode(ckpts[0], ckpts[1], corpus, refs,
                                                                               codebooks)));
    return 0;
}

int run(int argc, char** argv) {
    CLI::App app{"Residual-vector-quantised token TTS toolkit"};
    app.require_subcommand(1);

    std::uint64_t seed = 0;
    std::size_t count = 8, inventory = 12;
    std::string out, corpus_dir, codec_path, ckpt_path, report, phonemes, config;

    auto* gen = app.add_subcommand("gen-corpus", "Generate a deterministic synthetic corpus");
    gen->add_option("--seed", seed, "Corpus seed")->default_val(0);
    gen->add_option("--count", count, "Number of utterances")->default_val(8)->check(CLI::PositiveNumber);
    gen->add_option("--inventory", inventory, "Speech symbols in the inventory")->default_val(12)->check(
        CLI::Range(1, 12));
    gen->add_option("--out", out, "Output directory")->required();

    codec::CodecConfig codec_cfg;
    codec::KMeansOptions km;
    auto* tc = app.add_subcommand("train-codec", "Fit the residual codebooks on a corpus");
    tc->add_option("--corpus", corpus_dir, "Corpus directory")->required();
    tc->add_option("--quantizers", codec_cfg.num_quantizers, "Codebook layers Q")->default_val(32);
    tc->add_option("--codebook-size", codec_cfg.codebook_size, "Codevectors per layer V")->default_val(2048);
    tc->add_option("--iters", km.iterations, "Lloyd iterations per layer")->default_val(25);
    tc->add_option("--seed", km.seed, "k-means seed")->default_val(0);
    tc->add_option("--out", out, "Codebook file")->required();

    auto* pre = app.add_subcommand("preprocess", "Align the corpus and build the training cache");
    pre->add_option("--corpus", corpus_dir, "Corpus directory")->required();
    pre->add_option("--codec", codec_path, "Codebook file")->required();

    TrainFlags tf;
    std::uint64_t steps_flag = 0, seed_flag = 0;
    std::string mode_flag;
    auto* tr = app.add_subcommand("train", "Train the acoustic model");
    tr->add_option("--corpus", tf.corpus, "Corpus directory")->required();
    tr->add_option("--codec", tf.codec, "Codebook file")->required();
    tr->add_option("--config", tf.config, "key=value configuration file");
    tr->add_option("--set", tf.overrides, "Override a configuration key (key=value), repeatable");
    auto* steps_opt = tr->add_option("--steps", steps_flag, "Override max_steps");
    auto* seed_opt = tr->add_option("--seed", seed_flag, "Override seed");
    auto* mode_opt = tr->add_option("--mode", mode_flag, "Override decoding_mode")->check(
        CLI::IsMember({"depthwise", "parallel"}));
    tr->add_option("--out", tf.out, "Checkpoint file")->required();
    tr->add_option("--log", tf.log, "Per-step loss log (TSV)");

    auto* sy = app.add_subcommand("synth", "Synthesise a phoneme string");
    sy->add_option("--ckpt", ckpt_path, "Checkpoint")->required();
    sy->add_option("--codec", codec_path, "Codebook file")->required();
    sy->add_option("--phonemes", phonemes, "Space-separated phoneme symbols")->required();
    sy->add_option("--out", out, "Output WAV")->required();

    std::size_t block_frames = 4, repeats = 3, chunk_phonemes = 5;
    auto* sb = app.add_subcommand("stream-bench", "Measure streaming latency over the corpus sentences");
    sb->add_option("--ckpt", ckpt_path, "Checkpoint")->required();
    sb->add_option("--codec", codec_path, "Codebook file")->required();
    sb->add_option("--corpus", corpus_dir, "Corpus providing the request texts")->required();
    sb->add_option("--block-frames", block_frames, "Frames per emitted block")->default_val(4)->check(
        CLI::PositiveNumber);
    sb->add_option("--repeats", repeats, "Passes over the requests; the first is warm-up")->default_val(3)->check(
        CLI::Range(3, 1000));
    sb->add_option("--chunk-phonemes", chunk_phonemes, "Phonemes per incoming chunk (0: whole sentence)")
        ->default_val(5);
    sb->add_option("--report", report, "Report file (TSV); stdout when omitted");

    auto* ev = app.add_subcommand("eval", "Objective metrics against a reference corpus");
    ev->add_option("--ref-corpus", corpus_dir, "Reference corpus directory")->required();
    ev->add_option("--ckpt", ckpt_path, "Checkpoint")->required();
    ev->add_option("--codec", codec_path, "Codebook file")->required();
    ev->add_option("--report", report, "Report file (TSV); stdout when omitted");

    std::string ablate_kind;
    auto* ab = app.add_subcommand("ablate", "Codebook depth or decoding strategy ablation");
    ab->add_option("kind", ablate_kind, "depth or decoding")->required()->check(CLI::IsMember({"depth", "decoding"}));
    ab->add_option("--config", config, "key=value file: corpus, codec, depths and training keys")->required();
    ab->add_option("--report", report, "Report file (TSV); stdout when omitted");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    if (gen->parsed()) {
        corpus::gen_corpus(out, seed, count, inventory);
        return 0;
    }
    if (tc->parsed()) {
        const auto set = pipeline::train_codec(corpus_dir, codec_cfg, km);
        codec::save_codebooks(set, out);
        return 0;
    }
    if (pre->parsed()) {
        const auto r = alignment::preprocess_corpus(corpus_dir, codec::load_codebooks(codec_path));
        std::fprintf(stderr, "aligned %zu utterances, %zu placeholder phonemes\n", r.utterances, r.dummy_phonemes);
        return 0;
    }
    if (tr->parsed()) {
        if (*steps_opt) tf.steps = steps_flag;
        if (*seed_opt) tf.seed = seed_flag;
        if (*mode_opt) tf.mode = mode_flag;
        return cmd_train(tf);
    }
    if (sy->parsed()) {
        const auto ck = model::load_checkpoint(ckpt_path);
        const auto codebooks = codec::load_codebooks(codec_path);
        const auto ids = ck.vocabulary.parse(phonemes);
        codec::write_waveform(out, {codebooks.config.sample_rate,
                                    streaming::synthesize_offline(ids, ck, codebooks)});
        return 0;
    }
    if (sb->parsed()) {
        const auto ck = model::load_checkpoint(ckpt_path);
        const auto codebooks = codec::load_codebooks(codec_path);
        const auto requests = pipeline::bench_requests(corpus_dir, ck.vocabulary, chunk_phonemes);
        emit_report(report, streaming::format_report_tsv(
                                streaming::bench(requests, ck, codebooks, repeats, block_frames)));
        return 0;
    }
    if (ev->parsed()) {
        const auto ck = model::load_checkpoint(ckpt_path);
        const auto codebooks = codec::load_codebooks(codec_path);
        const auto corpus = pipeline::aligned_corpus(corpus_dir, codebooks);
        const auto refs = pipeline::reference_waves(corpus_dir, corpus);
        emit_report(report, eval::format_metric_table(eval::evaluate_corpus(ck, codebooks, corpus, refs)));
        return 0;
    }
    return cmd_ablate(ablate_kind, config, report);
}

} // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const UsageError& e) {
        std::fprintf(stderr, "usage error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
