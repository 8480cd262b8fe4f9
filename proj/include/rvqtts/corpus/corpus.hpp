#pragma once

// Deterministic synthetic single-speaker corpus.
//
// Every symbol's waveform is periodic in one codec frame (all partials sit
// on a 12.5 Hz grid and phases are tied to absolute time), so any codec
// frame lying wholly inside one phoneme is sample-identical to every other
// such frame of that symbol.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "rvqtts/alignment/corpus_layout.hpp"
#include "rvqtts/vocabulary.hpp"

namespace rvqtts::corpus {

enum class PhonemeClass { voiced, fricative, silence };

struct SyntheticPhonemeSpec {
    std::string symbol;
    PhonemeClass cls = PhonemeClass::voiced;
    double base_f0 = 0.0;                  // Hz, voiced only
    std::vector<double> harmonic_amplitudes; // voiced: partial k+1; fricative: unused
    double band_lo = 0.0, band_hi = 0.0;   // fricative noise band, Hz
    double min_duration = 0.06, max_duration = 0.25; // seconds
    double rms = 0.1;
};

inline constexpr std::uint32_t kSampleRate = 24000;
inline constexpr std::size_t kPeriodSamples = 1920; // one codec frame
inline constexpr double kCrossfadeSeconds = 0.005;
inline constexpr double kSubFrameMin = 0.020;
inline constexpr double kSubFrameMax = 0.035;

// "sil" followed by inventory_size speech symbols (at most 12).
std::vector<SyntheticPhonemeSpec> default_inventory(std::size_t inventory_size = 12);
Vocabulary inventory_vocabulary(const std::vector<SyntheticPhonemeSpec>& inventory);

// One period (kPeriodSamples) of the symbol's waveform at absolute time 0.
std::vector<double> render_period(const SyntheticPhonemeSpec& spec, std::size_t symbol_index);

struct GeneratedUtterance {
    alignment::ManifestEntry entry;
    std::vector<double> samples;
};

class Generator {
public:
    explicit Generator(std::uint64_t seed, std::size_t inventory_size = 12);

    const std::vector<SyntheticPhonemeSpec>& inventory() const { return inventory_; }
    const Vocabulary& vocabulary() const { return vocab_; }

    GeneratedUtterance utterance(std::size_t index) const;
    // Renders an arbitrary symbol/duration sequence with the corpus timbres.
    std::vector<double> render(const std::vector<std::string>& symbols, const std::vector<double>& seconds) const;

private:
    std::uint64_t seed_;
    std::vector<SyntheticPhonemeSpec> inventory_;
    Vocabulary vocab_;
    std::vector<std::vector<double>> periods_;
};

// Writes manifest, symbol table and WAV files for utterances 0..count-1.
void gen_corpus(const std::filesystem::path& dir, std::uint64_t seed, std::size_t count,
                std::size_t inventory_size = 12);

} // namespace rvqtts::corpus
