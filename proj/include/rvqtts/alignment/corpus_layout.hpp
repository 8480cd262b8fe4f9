#pragma once

// On-disk corpus layout:
//   DIR/manifest.tsv       id <TAB> space-separated symbols <TAB> comma-separated seconds
//   DIR/symbols.txt        vocabulary, one symbol per line
//   DIR/wav/<id>.wav       24 kHz mono 16-bit PCM
//   DIR/cache/<id>.bin     preprocessed AlignedUtterance
//   DIR/cache/stats.txt    corpus variance statistics

#include <filesystem>
#include <string>
#include <vector>

#include "rvqtts/alignment/alignment.hpp"
#include "rvqtts/codec/codec.hpp"
#include "rvqtts/dsp/mel.hpp"
#include "rvqtts/vocabulary.hpp"

namespace rvqtts::alignment {

struct ManifestEntry {
    std::string id;
    std::vector<std::string> symbols;
    std::vector<double> durations; // seconds

    bool operator==(const ManifestEntry&) const = default;
};

struct CorpusPaths {
    std::filesystem::path root;

    std::filesystem::path manifest() const { return root / "manifest.tsv"; }
    std::filesystem::path symbols() const { return root / "symbols.txt"; }
    std::filesystem::path wav(const std::string& id) const { return root / "wav" / (id + ".wav"); }
    std::filesystem::path cache_dir() const { return root / "cache"; }
    std::filesystem::path cache(const std::string& id) const { return cache_dir() / (id + ".bin"); }
    std::filesystem::path stats() const { return cache_dir() / "stats.txt"; }
};

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);

void save_stats(const VarianceStats& stats, const std::filesystem::path& path);
VarianceStats load_stats(const std::filesystem::path& path);

// Builds the un-normalised aligned targets for one utterance.
AlignedUtterance align_utterance(const ManifestEntry& entry, std::span<const double> waveform,
                                 const Vocabulary& vocab, const codec::RvqCodebookSet& codebooks,
                                 const dsp::MelAnalyzer& mel);

struct PreprocessResult {
    std::size_t utterances = 0;
    std::size_t dummy_phonemes = 0;
    VarianceStats stats;
};

// Aligns every manifest entry, fits corpus statistics on the non-silent
// frames, normalises and writes the cache directory.
PreprocessResult preprocess_corpus(const std::filesystem::path& corpus_dir,
                                   const codec::RvqCodebookSet& codebooks);

// Loads every cached utterance in manifest order.
std::vector<AlignedUtterance> load_cached_corpus(const std::filesystem::path& corpus_dir);

} // namespace rvqtts::alignment
