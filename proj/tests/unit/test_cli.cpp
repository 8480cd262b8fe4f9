#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>

#include "rvqtts/codec/audio_io.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path kWork = fs::temp_directory_path() / "rvqtts_cli_test";

// Runs the tool with stdout captured to out.txt and stderr to err.txt.
int run(const std::string& args) {
    const std::string cmd = std::string(RVQTTS_CLI) + " " + args + " >" + (kWork / "out.txt").string() + " 2>" +
                            (kWork / "err.txt").string();
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

std::string path(const std::string& name) { return (kWork / name).string(); }

const std::string kTiny = " --set hidden_dim=16 --set ffn_dim=16 --set predictor_filter=8 --set postnet_channels=8"
                          " --set batch_size=2 --set warmup_steps=5 --set peak_lr=0.005";

} // namespace

TEST_CASE("usage and file errors map to distinct exit codes") {
    fs::remove_all(kWork);
    fs::create_directories(kWork);
    CHECK(run("--help") == 0);
    CHECK(slurp(kWork / "out.txt").find("stream-bench") != std::string::npos);
    CHECK(run("") == 2);
    CHECK(run("gen-corpus --seed 1") == 2);
    CHECK(run("gen-corpus --out x --bogus 3") == 2);
    CHECK(run("no-such-command") == 2);
    CHECK(run("ablate sideways --config x") == 2);
    CHECK(run("train-codec --corpus " + path("missing") + " --out " + path("c.bin")) == 1);
    const std::string err = slurp(kWork / "err.txt");
    CHECK(err.rfind("error: ", 0) == 0);
    CHECK(std::count(err.begin(), err.end(), '\n') == 1);
}

TEST_CASE("the pipeline runs end to end") {
    fs::create_directories(kWork);
    const std::string corpus = path("corpus"), codec = path("codec.bin"), ckpt = path("model.ckpt");
    REQUIRE(run("gen-corpus --seed 3 --count 3 --out " + corpus) == 0);
    REQUIRE(run("train-codec --corpus " + corpus + " --quantizers 4 --codebook-size 8 --iters 5 --out " + codec) == 0);
    REQUIRE(run("preprocess --corpus " + corpus + " --codec " + codec) == 0);
    CHECK(fs::exists(fs::path(corpus) / "cache" / "stats.txt"));

    const std::string train = "train --corpus " + corpus + " --codec " + codec + kTiny + " --steps 6 --seed 2";
    REQUIRE(run(train + " --out " + ckpt + " --log " + path("loss.tsv")) == 0);
    REQUIRE(run(train + " --out " + path("again.ckpt") + " --log " + path("again.tsv")) == 0);
    CHECK(slurp(ckpt) == slurp(path("again.ckpt")));
    CHECK(slurp(path("loss.tsv")) == slurp(path("again.tsv")));
    CHECK(run("train --corpus " + corpus + " --codec " + codec + " --set nope=1 --out " + path("x.ckpt")) == 2);
    CHECK(run("train --corpus " + corpus + " --codec " + codec + " --mode diagonal --out " + path("x.ckpt")) == 2);

    SUBCASE("synthesis") {
        REQUIRE(run("synth --ckpt " + ckpt + " --codec " + codec + " --phonemes \"\" --out " + path("empty.wav")) == 0);
        const auto empty = rvqtts::codec::read_waveform(path("empty.wav"));
        CHECK(empty.samples.empty());
        CHECK(empty.sample_rate == 24000);
        REQUIRE(run("synth --ckpt " + ckpt + " --codec " + codec + " --phonemes \"sil a sil\" --out " + path("a.wav")) == 0);
        const auto a = rvqtts::codec::read_waveform(path("a.wav"));
        CHECK(a.samples.size() % 1920 == 0);
        CHECK(!a.samples.empty());
        CHECK(run("synth --ckpt " + ckpt + " --codec " + codec + " --phonemes \"sil zz\" --out " + path("b.wav")) == 1);
    }
    SUBCASE("streaming benchmark") {
        CHECK(run("stream-bench --ckpt " + ckpt + " --codec " + codec + " --corpus " + corpus + " --repeats 2") == 2);
        REQUIRE(run("stream-bench --ckpt " + ckpt + " --codec " + codec + " --corpus " + corpus + " --repeats 3 --report " +
                    path("bench.tsv")) == 0);
        const auto report = slurp(path("bench.tsv"));
        CHECK(report.find("ttfb_mean_ms\tttfb_p50_ms\tttfb_p90_ms\ttotal_wall_ms\taudio_ms\trtf") != std::string::npos);
    }
    SUBCASE("evaluation") {
        REQUIRE(run("eval --ref-corpus " + corpus + " --ckpt " + ckpt + " --codec " + codec) == 0);
        const auto table = slurp(kWork / "out.txt");
        CHECK(table.rfind("utterance\tmcd_db\tf0_rmse_hz\tvuv_error_pct\n", 0) == 0);
        CHECK(table.find("\nmean\t") != std::string::npos);
    }
    SUBCASE("ablations") {
        std::ofstream(path("ablate.cfg")) << "corpus=" << corpus << "\ncodec=" << codec
                                          << "\ndepths=1,2,4\nhidden_dim=16\nffn_dim=16\npredictor_filter=8\n"
                                             "postnet_channels=8\nbatch_size=2\nwarmup_steps=5\nmax_steps=4\n";
        REQUIRE(run("ablate depth --config " + path("ablate.cfg") + " --report " + path("depth.tsv")) == 0);
        const auto depth = slurp(path("depth.tsv"));
        CHECK(depth.rfind("codebooks\trecon_mse\tmcd_db\tf0_rmse_hz\tvuv_error_pct\n1\t", 0) == 0);
        REQUIRE(run("ablate decoding --config " + path("ablate.cfg") + " --report " + path("dec.tsv")) == 0);
        const auto dec = slurp(path("dec.tsv"));
        CHECK(dec.rfind("strategy\tacc_band1\tacc_band2\tacc_band3\tmcd_db\tf0_rmse_hz\tvuv_error_pct\nnaive_parallel\t",
                        0) == 0);
        CHECK(dec.find("\ndepthwise_sequential\t") != std::string::npos);
        std::ofstream(path("bad.cfg")) << "corpus=" << corpus << "\ncodec=" << codec << "\ncolour=blue\n";
        CHECK(run("ablate depth --config " + path("bad.cfg")) == 1);
    }
}
