#pragma once

// Toy residual-vector-quantisation codec.
//
// Front end: non-overlapping rectangular frames of `hop` samples, each
// reduced to its first `feature_dim` orthonormal DCT-II coefficients.
// Back end: zero-pad the coefficients to `hop` and apply the inverse DCT.
// Between the two sits a stack of `num_quantizers` codebooks trained by
// k-means on successive residuals, so a frame becomes one token per layer.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "rvqtts/errors.hpp"
#include "rvqtts/matrix.hpp"

namespace rvqtts::codec {

struct CodecConfig {
    std::uint32_t sample_rate = 24000;
    std::uint32_t hop = 1920; // 80 ms at 24 kHz
    std::uint32_t feature_dim = 64;
    std::uint32_t num_quantizers = 32;
    std::uint32_t codebook_size = 2048;

    double frame_rate() const { return static_cast<double>(sample_rate) / hop; }
    void validate() const;
    bool operator==(const CodecConfig&) const = default;
};

// Q x T token indices, layer-major.
struct TokenGrid {
    std::size_t num_quantizers = 0;
    std::size_t frames = 0;
    double frame_rate = 12.5;
    std::vector<std::uint32_t> indices;

    TokenGrid() = default;
    TokenGrid(std::size_t q, std::size_t t, double rate)
        : num_quantizers(q), frames(t), frame_rate(rate), indices(q * t, 0) {}

    std::uint32_t& at(std::size_t layer, std::size_t frame) { return indices[layer * frames + frame]; }
    std::uint32_t at(std::size_t layer, std::size_t frame) const { return indices[layer * frames + frame]; }
    std::span<const std::uint32_t> layer(std::size_t q) const { return {indices.data() + q * frames, frames}; }

    // Frames [start, start + count) of every layer.
    TokenGrid slice(std::size_t start, std::size_t count) const;
    bool operator==(const TokenGrid&) const = default;
};

struct RvqCodebookSet {
    CodecConfig config;
    std::vector<Matrix> codebooks; // num_quantizers entries, each V x D

    bool operator==(const RvqCodebookSet&) const = default;
};

class CorruptTokenError : public IndexError {
public:
    using IndexError::IndexError;
};

// T x D features, T = ceil(len / hop); the last frame is zero padded.
Matrix analyze(std::span<const double> waveform, const CodecConfig& config);

// Inverse of analyze restricted to the first-D DCT subspace; T * hop samples.
std::vector<double> synthesize(const Matrix& features, const CodecConfig& config);

struct KMeansOptions {
    std::size_t iterations = 25;
    std::uint64_t seed = 0;
};

// Greedy layer-by-layer k-means (k-means++ seeding, Lloyd updates). Layers
// after the first keep codevector 0 pinned at the origin, which makes the
// per-frame residual norm non-increasing under greedy encoding.
RvqCodebookSet train_rvq(const Matrix& frames, const CodecConfig& config, const KMeansOptions& options);

// Single-layer k-means used by train_rvq; exposed for tests.
Matrix kmeans(const Matrix& points, std::size_t k, const KMeansOptions& options, bool pin_zero);

// Index of the nearest row of `codebook` to `v`, lowest index on ties.
std::uint32_t nearest_codevector(const Matrix& codebook, std::span<const double> v);

TokenGrid encode(const Matrix& frames, const RvqCodebookSet& codebooks);

// Mean squared residual after each layer (entry q = after layers 0..q).
std::vector<double> residual_energy_by_layer(const Matrix& frames, const RvqCodebookSet& codebooks);

// Sum of the first `depth` layers' codevectors per frame.
Matrix dequantize(const TokenGrid& tokens, const RvqCodebookSet& codebooks,
                  std::optional<std::size_t> depth = std::nullopt);

std::vector<double> decode_tokens(const TokenGrid& tokens, const RvqCodebookSet& codebooks,
                                  std::optional<std::size_t> depth = std::nullopt);

void save_codebooks(const RvqCodebookSet& set, const std::filesystem::path& path);
RvqCodebookSet load_codebooks(const std::filesystem::path& path);

} // namespace rvqtts::codec
