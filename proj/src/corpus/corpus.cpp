#include "rvqtts/corpus/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

#include "rvqtts/alignment/alignment.hpp"
#include "rvqtts/codec/audio_io.hpp"
#include "rvqtts/errors.hpp"
#include "rvqtts/numerics/ops.hpp"

namespace rvqtts::corpus {

namespace {

// Timbres belong to the speaker, not to a particular corpus draw.
constexpr std::uint64_t kTimbreSeed = 0x7A3C915E0B42D861ULL;

struct VoicedShape {
    const char* symbol;
    double f0, f1, f2, rms;
};

struct FricativeShape {
    const char* symbol;
    double lo, hi, rms;
};

SyntheticPhonemeSpec voiced(const VoicedShape& v) {
    SyntheticPhonemeSpec s;
    s.symbol = v.symbol;
    s.cls = PhonemeClass::voiced;
    s.base_f0 = v.f0;
    s.rms = v.rms;
    s.min_duration = 0.08;
    s.max_duration = 0.25;
    for (int k = 1; k * v.f0 <= 5000.0; ++k) {
        const double f = k * v.f0;
        const double formants = std::exp(-std::pow((f - v.f1) / 150.0, 2)) +
                                0.6 * std::exp(-std::pow((f - v.f2) / 200.0, 2));
        s.harmonic_amplitudes.push_back(formants + 0.5 / k);
    }
    return s;
}

SyntheticPhonemeSpec fricative(const FricativeShape& f) {
    SyntheticPhonemeSpec s;
    s.symbol = f.symbol;
    s.cls = PhonemeClass::fricative;
    s.band_lo = f.lo;
    s.band_hi = f.hi;
    s.rms = f.rms;
    s.min_duration = 0.06;
    s.max_duration = 0.18;
    return s;
}

std::uint64_t uniform_int(std::mt19937_64& rng, std::uint64_t lo, std::uint64_t hi) {
    return lo + rng() % (hi - lo + 1);
}

} // namespace

std::vector<SyntheticPhonemeSpec> default_inventory(std::size_t inventory_size) {
    if (inventory_size < 1 || inventory_size > 12) throw ContractError("inventory size must be in [1, 12]");
    // Interleaved so that small inventories still mix both classes.
    const std::vector<SyntheticPhonemeSpec> speech = {
        voiced({"a", 125.0, 700, 1200, 0.15}),   fricative({"s", 100, 6000, 0.08}),
        voiced({"i", 175.0, 400, 2200, 0.12}),   voiced({"m", 100.0, 250, 1000, 0.06}),
        voiced({"o", 112.5, 450, 850, 0.15}),    fricative({"f", 100, 3000, 0.05}),
        voiced({"e", 150.0, 500, 1900, 0.14}),   voiced({"n", 162.5, 250, 1500, 0.06}),
        voiced({"u", 137.5, 320, 800, 0.13}),    fricative({"sh", 100, 4500, 0.08}),
        voiced({"l", 187.5, 350, 1200, 0.08}),   fricative({"h", 100, 2000, 0.04}),
    };
    SyntheticPhonemeSpec sil;
    sil.symbol = std::string(kSilenceSymbol);
    sil.cls = PhonemeClass::silence;
    sil.rms = 0.0;
    sil.min_duration = 0.12;
    sil.max_duration = 0.30;
    std::vector<SyntheticPhonemeSpec> out{sil};
    out.insert(out.end(), speech.begin(), speech.begin() + static_cast<long>(inventory_size));
    return out;
}

Vocabulary inventory_vocabulary(const std::vector<SyntheticPhonemeSpec>& inventory) {
    std::vector<std::string> symbols;
    for (const auto& s : inventory) symbols.push_back(s.symbol);
    return Vocabulary(std::move(symbols));
}

std::vector<double> render_period(const SyntheticPhonemeSpec& spec, std::size_t symbol_index) {
    std::vector<double> x(kPeriodSamples, 0.0);
    if (spec.cls == PhonemeClass::silence) return x;
    const double w = 2.0 * std::numbers::pi / kSampleRate;
    auto add_partial = [&](double freq, double amp, std::uint64_t k) {
        const double phase = 2.0 * std::numbers::pi * nn::hash_uniform(kTimbreSeed, symbol_index, k);
        for (std::size_t n = 0; n < kPeriodSamples; ++n) x[n] += amp * std::sin(w * freq * static_cast<double>(n) + phase);
    };
    if (spec.cls == PhonemeClass::voiced) {
        for (std::size_t k = 0; k < spec.harmonic_amplitudes.size(); ++k) {
            add_partial(spec.base_f0 * static_cast<double>(k + 1), spec.harmonic_amplitudes[k], k);
        }
    } else {
        const double grid = static_cast<double>(kSampleRate) / kPeriodSamples;
        const auto first = static_cast<std::uint64_t>(std::ceil(spec.band_lo / grid));
        const auto last = static_cast<std::uint64_t>(std::floor(spec.band_hi / grid));
        for (std::uint64_t m = first; m <= last; ++m) add_partial(grid * static_cast<double>(m), 1.0, m);
    }
    double energy = 0.0;
    for (double v : x) energy += v * v;
    const double scale = spec.rms / std::sqrt(energy / kPeriodSamples);
    for (double& v : x) v *= scale;
    return x;
}

Generator::Generator(std::uint64_t seed, std::size_t inventory_size)
    : seed_(seed), inventory_(default_inventory(inventory_size)), vocab_(inventory_vocabulary(inventory_)) {
    for (std::size_t i = 0; i < inventory_.size(); ++i) periods_.push_back(render_period(inventory_[i], i));
}

std::vector<double> Generator::render(const std::vector<std::string>& symbols,
                                      const std::vector<double>& seconds) const {
    if (symbols.size() != seconds.size()) throw DimensionError("symbol and duration counts differ");
    std::vector<std::size_t> bounds{0};
    for (double d : seconds) bounds.push_back(bounds.back() + static_cast<std::size_t>(std::llround(d * kSampleRate)));
    std::vector<double> out(bounds.back(), 0.0);
    const auto half = static_cast<long>(std::llround(kCrossfadeSeconds * kSampleRate / 2));
    const double ramp = 2.0 * static_cast<double>(half);
    const long total = static_cast<long>(out.size());
    for (std::size_t p = 0; p < symbols.size(); ++p) {
        const auto& period = periods_[vocab_.id_of(symbols[p])];
        const long s = static_cast<long>(bounds[p]);
        const long e = static_cast<long>(bounds[p + 1]);
        const bool first = p == 0, last = p + 1 == symbols.size();
        const long lo = first ? 0 : std::max(0L, s - half);
        const long hi = last ? total : std::min(total, e + half);
        for (long n = lo; n < hi; ++n) {
            double g = 1.0;
            if (!first) g = std::min(g, static_cast<double>(n - (s - half)) / ramp);
            if (!last) g = std::min(g, static_cast<double>((e + half) - n) / ramp);
            if (g <= 0.0) continue;
            out[n] += std::min(g, 1.0) * period[static_cast<std::size_t>(n) % kPeriodSamples];
        }
    }
    return out;
}

GeneratedUtterance Generator::utterance(std::size_t index) const {
    std::mt19937_64 rng(nn::mix64(seed_ ^ nn::mix64(index + 1)));
    auto draw_ms = [&](double lo, double hi) {
        const auto ms = uniform_int(rng, static_cast<std::uint64_t>(std::llround(lo * 1000)),
                                    static_cast<std::uint64_t>(std::llround(hi * 1000)));
        return static_cast<double>(ms) / 1000.0;
    };
    const std::size_t speech_symbols = inventory_.size() - 1;
    for (;;) {
        const std::size_t n = uniform_int(rng, 3, 15);
        std::vector<std::string> symbols;
        std::vector<double> seconds;
        symbols.push_back(inventory_[0].symbol);
        seconds.push_back(draw_ms(inventory_[0].min_duration, inventory_[0].max_duration));
        for (std::size_t i = 0; i + 2 < n; ++i) {
            const auto& spec = inventory_[1 + uniform_int(rng, 0, speech_symbols - 1)];
            symbols.push_back(spec.symbol);
            seconds.push_back(draw_ms(spec.min_duration, spec.max_duration));
        }
        symbols.push_back(inventory_[0].symbol);
        seconds.push_back(draw_ms(inventory_[0].min_duration, inventory_[0].max_duration));
        // One phoneme shorter than half a codec frame exercises the placeholder path.
        const std::size_t short_idx = 1 + uniform_int(rng, 0, n - 3);
        seconds[short_idx] = draw_ms(kSubFrameMin, kSubFrameMax);

        std::uint64_t total_ms = 0;
        for (double s : seconds) total_ms += static_cast<std::uint64_t>(std::llround(s * 1000));
        const std::size_t samples = total_ms * kSampleRate / 1000;
        const std::size_t frames = (samples + kPeriodSamples - 1) / kPeriodSamples;
        try {
            alignment::durations_to_frames(seconds, static_cast<double>(kSampleRate) / kPeriodSamples, frames);
        } catch (const AlignmentError&) {
            continue;
        }
        char id[32];
        std::snprintf(id, sizeof id, "utt%04zu", index);
        GeneratedUtterance u;
        u.entry = {id, symbols, seconds};
        u.samples = render(symbols, seconds);
        return u;
    }
}

void gen_corpus(const std::filesystem::path& dir, std::uint64_t seed, std::size_t count, std::size_t inventory_size) {
    if (count < 1) throw ContractError("corpus needs at least one utterance");
    const alignment::CorpusPaths paths{dir};
    std::filesystem::create_directories(dir / "wav");
    const Generator gen(seed, inventory_size);
    gen.vocabulary().save(paths.symbols());
    std::vector<alignment::ManifestEntry> manifest;
    for (std::size_t i = 0; i < count; ++i) {
        auto u = gen.utterance(i);
        codec::write_waveform(paths.wav(u.entry.id), {kSampleRate, u.samples});
        manifest.push_back(std::move(u.entry));
    }
    alignment::write_manifest(paths.manifest(), manifest);
}

} // namespace rvqtts::corpus
