#pragma once

// Glue shared by the command-line tool and the end-to-end tests: codec
// training over a corpus directory, cache loading and request building.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "rvqtts/alignment/alignment.hpp"
#include "rvqtts/alignment/corpus_layout.hpp"
#include "rvqtts/codec/codec.hpp"
#include "rvqtts/model/acoustic_model.hpp"
#include "rvqtts/training/training.hpp"

namespace rvqtts::pipeline {

// Every codec frame of every manifest utterance, stacked.
Matrix corpus_frames(const std::filesystem::path& corpus_dir, const codec::CodecConfig& config);

codec::RvqCodebookSet train_codec(const std::filesystem::path& corpus_dir, const codec::CodecConfig& config,
                                  const codec::KMeansOptions& options);

// Cached utterances in manifest order; builds the cache when it is absent.
std::vector<alignment::AlignedUtterance> aligned_corpus(const std::filesystem::path& corpus_dir,
                                                        const codec::RvqCodebookSet& codebooks);

std::vector<std::vector<double>> reference_waves(const std::filesystem::path& corpus_dir,
                                                 std::span<const alignment::AlignedUtterance> corpus);

Vocabulary corpus_vocabulary(const std::filesystem::path& corpus_dir);

// Takes Q and V from the codec and the vocabulary size from `vocab`.
model::ModelConfig bind_model_config(model::ModelConfig c, const Vocabulary& vocab,
                                     const codec::RvqCodebookSet& codebooks);

// One request per manifest utterance, cut into chunks of `chunk_phonemes`
// symbols (0 keeps the utterance whole).
std::vector<std::vector<std::vector<std::uint32_t>>> bench_requests(const std::filesystem::path& corpus_dir,
                                                                    const Vocabulary& vocab,
                                                                    std::size_t chunk_phonemes);

} // namespace rvqtts::pipeline
