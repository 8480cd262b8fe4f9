#include "rvqtts/alignment/corpus_layout.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "rvqtts/codec/audio_io.hpp"
#include "rvqtts/errors.hpp"

namespace rvqtts::alignment {

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream in(s);
    while (std::getline(in, cur, sep)) out.push_back(cur);
    return out;
}

double parse_double(const std::string& s, const std::string& where) {
    double v = 0.0;
    const char* end = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(s.data(), end, v);
    if (ec != std::errc() || ptr != end) throw FormatError(where + ": bad number '" + s + "'");
    return v;
}

std::string format_double(double v) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

} // namespace

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<ManifestEntry> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const std::string where = path.string() + ":" + std::to_string(lineno);
        auto fields = split(line, '\t');
        if (fields.size() != 3) throw FormatError(where + ": expected 3 tab-separated fields");
        ManifestEntry e;
        e.id = fields[0];
        std::istringstream sym(fields[1]);
        for (std::string s; sym >> s;) e.symbols.push_back(s);
        if (!fields[2].empty()) {
            for (const auto& d : split(fields[2], ',')) e.durations.push_back(parse_double(d, where));
        }
        if (e.symbols.size() != e.durations.size()) {
            throw FormatError(where + ": symbol and duration counts differ");
        }
        out.push_back(std::move(e));
    }
    return out;
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries) {
    std::ofstream out(path, std::ios::trunc | std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    for (const auto& e : entries) {
        out << e.id << '\t';
        for (std::size_t i = 0; i < e.symbols.size(); ++i) out << (i ? " " : "") << e.symbols[i];
        out << '\t';
        for (std::size_t i = 0; i < e.durations.size(); ++i) out << (i ? "," : "") << format_double(e.durations[i]);
        out << '\n';
    }
}

void save_stats(const VarianceStats& s, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc | std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << "log_f0_mean=" << format_double(s.log_f0_mean) << '\n'
        << "log_f0_std=" << format_double(s.log_f0_std) << '\n'
        << "energy_mean=" << format_double(s.energy_mean) << '\n'
        << "energy_std=" << format_double(s.energy_std) << '\n';
}

VarianceStats load_stats(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::map<std::string, double> kv;
    for (std::string line; std::getline(in, line);) {
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw FormatError(path.string() + ": malformed line '" + line + "'");
        kv[line.substr(0, eq)] = parse_double(line.substr(eq + 1), path.string());
    }
    auto get = [&](const char* k) {
        auto it = kv.find(k);
        if (it == kv.end()) throw FormatError(path.string() + ": missing " + k);
        return it->second;
    };
    return {get("log_f0_mean"), get("log_f0_std"), get("energy_mean"), get("energy_std")};
}

AlignedUtterance align_utterance(const ManifestEntry& entry, std::span<const double> waveform,
                                 const Vocabulary& vocab, const codec::RvqCodebookSet& codebooks,
                                 const dsp::MelAnalyzer& mel) {
    const auto& cfg = codebooks.config;
    const double rate = cfg.frame_rate();
    AlignedUtterance u;
    u.id = entry.id;
    const Matrix features = codec::analyze(waveform, cfg);
    u.tokens = codec::encode(features, codebooks);
    const std::size_t t = u.tokens.frames;

    const auto alloc = durations_to_frames(entry.durations, rate, t);
    for (std::size_t i = 0; i < alloc.size(); ++i) {
        const auto id = vocab.id_of(entry.symbols[i]);
        u.phonemes.push_back({id, alloc[i].frames, alloc[i].is_dummy, vocab.is_silence(id)});
    }

    const auto f0 = extract_f0(waveform, cfg.sample_rate, rate);
    const auto energy = extract_energy(waveform, cfg.sample_rate, rate);
    u.variances = build_variance_track(f0, energy, rate, t);

    const auto k = static_cast<int>(std::lround(static_cast<double>(cfg.hop) / mel.config().hop));
    if (static_cast<std::uint32_t>(k) * mel.config().hop != cfg.hop) {
        throw ConfigError("mel hop must divide the codec hop");
    }
    u.mel_high = mel.log_mel(waveform, t * static_cast<std::size_t>(k));
    u.mel_aligned = pool_mel(u.mel_high, k);
    check_synchronized(u);
    return u;
}

PreprocessResult preprocess_corpus(const std::filesystem::path& corpus_dir,
                                   const codec::RvqCodebookSet& codebooks) {
    const CorpusPaths paths{corpus_dir};
    const auto manifest = read_manifest(paths.manifest());
    const auto vocab = Vocabulary::load(paths.symbols());
    const dsp::MelAnalyzer mel;

    std::vector<AlignedUtterance> utts;
    PreprocessResult result;
    for (const auto& e : manifest) {
        const auto wave = codec::read_waveform(paths.wav(e.id));
        if (wave.sample_rate != codebooks.config.sample_rate) {
            throw ConfigError(e.id + ": sample rate differs from the codec");
        }
        utts.push_back(align_utterance(e, wave.samples, vocab, codebooks, mel));
        for (const auto& p : utts.back().phonemes) result.dummy_phonemes += p.is_dummy;
    }
    std::vector<StatsInput> inputs;
    for (const auto& u : utts) inputs.push_back({&u.variances, silence_mask(u.phonemes)});
    result.stats = compute_stats(inputs);
    result.utterances = utts.size();

    std::filesystem::create_directories(paths.cache_dir());
    for (auto& u : utts) {
        u.variances = normalize(u.variances, result.stats);
        save_aligned(u, paths.cache(u.id));
    }
    save_stats(result.stats, paths.stats());
    return result;
}

std::vector<AlignedUtterance> load_cached_corpus(const std::filesystem::path& corpus_dir) {
    const CorpusPaths paths{corpus_dir};
    std::vector<AlignedUtterance> out;
    for (const auto& e : read_manifest(paths.manifest())) out.push_back(load_aligned(paths.cache(e.id)));
    return out;
}

} // namespace rvqtts::alignment
