#include "rvqtts/pipeline.hpp"

#include <algorithm>

#include "rvqtts/codec/audio_io.hpp"
#include "rvqtts/errors.hpp"

namespace rvqtts::pipeline {

namespace fs = std::filesystem;

Matrix corpus_frames(const fs::path& corpus_dir, const codec::CodecConfig& config) {
    const alignment::CorpusPaths paths{corpus_dir};
    Matrix all(0, config.feature_dim);
    for (const auto& e : alignment::read_manifest(paths.manifest())) {
        const auto wave = codec::read_waveform(paths.wav(e.id), config.sample_rate);
        const Matrix f = codec::analyze(wave.samples, config);
        all.data.insert(all.data.end(), f.data.begin(), f.data.end());
        all.rows += f.rows;
    }
    return all;
}

codec::RvqCodebookSet train_codec(const fs::path& corpus_dir, const codec::CodecConfig& config,
                                  const codec::KMeansOptions& options) {
    config.validate();
    return codec::train_rvq(corpus_frames(corpus_dir, config), config, options);
}

std::vector<alignment::AlignedUtterance> aligned_corpus(const fs::path& corpus_dir,
                                                        const codec::RvqCodebookSet& codebooks) {
    const alignment::CorpusPaths paths{corpus_dir};
    if (!fs::exists(paths.stats())) alignment::preprocess_corpus(corpus_dir, codebooks);
    auto corpus = alignment::load_cached_corpus(corpus_dir);
    for (const auto& u : corpus) {
        if (u.tokens.num_quantizers != codebooks.config.num_quantizers) {
            throw ConfigError("cached tokens of " + u.id + " were built with a different codec; rerun preprocess");
        }
    }
    return corpus;
}

std::vector<std::vector<double>> reference_waves(const fs::path& corpus_dir,
                                                 std::span<const alignment::AlignedUtterance> corpus) {
    const alignment::CorpusPaths paths{corpus_dir};
    std::vector<std::vector<double>> out;
    for (const auto& u : corpus) out.push_back(codec::read_waveform(paths.wav(u.id)).samples);
    return out;
}

Vocabulary corpus_vocabulary(const fs::path& corpus_dir) {
    return Vocabulary::load(alignment::CorpusPaths{corpus_dir}.symbols());
}

model::ModelConfig bind_model_config(model::ModelConfig c, const Vocabulary& vocab,
                                     const codec::RvqCodebookSet& codebooks) {
    c.vocab_size = static_cast<std::uint32_t>(vocab.size());
    c.num_quantizers = codebooks.config.num_quantizers;
    c.codebook_size = codebooks.config.codebook_size;
    c.validate();
    return c;
}

std::vector<std::vector<std::vector<std::uint32_t>>> bench_requests(const fs::path& corpus_dir,
                                                                    const Vocabulary& vocab,
                                                                    std::size_t chunk_phonemes) {
    std::vector<std::vector<std::vector<std::uint32_t>>> out;
    for (const auto& e : alignment::read_manifest(alignment::CorpusPaths{corpus_dir}.manifest())) {
        std::vector<std::uint32_t> ids;
        for (const auto& s : e.symbols) ids.push_back(vocab.id_of(s));
        const std::size_t step = chunk_phonemes == 0 ? std::max<std::size_t>(ids.size(), 1) : chunk_phonemes;
        std::vector<std::vector<std::uint32_t>> chunks;
        for (std::size_t i = 0; i < ids.size(); i += step) {
            chunks.emplace_back(ids.begin() + static_cast<long>(i),
                                ids.begin() + static_cast<long>(std::min(ids.size(), i + step)));
        }
        out.push_back(std::move(chunks));
    }
    return out;
}

} // namespace rvqtts::pipeline
