#pragma once

// Non-autoregressive acoustic model: phoneme encoder, variance adaptor with
// length regulation, frame decoder, depth-wise cascaded token heads and an
// auxiliary mel branch used only during training.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rvqtts/codec/codec.hpp"
#include "rvqtts/numerics/ops.hpp"
#include "rvqtts/numerics/tensor.hpp"
#include "rvqtts/vocabulary.hpp"

namespace rvqtts::model {

using nn::Tensor;

enum class DecodingMode { depthwise, parallel };

std::string to_string(DecodingMode m);
DecodingMode parse_decoding_mode(const std::string& s);

struct ModelConfig {
    std::uint32_t vocab_size = 13;
    std::uint32_t hidden_dim = 128;
    std::uint32_t encoder_blocks = 2;
    std::uint32_t decoder_blocks = 2;
    std::uint32_t attention_heads = 2;
    std::uint32_t conv_kernel = 3;
    std::uint32_t ffn_dim = 256;          // inner width of the block feed-forward
    std::uint32_t predictor_filter = 128; // variance predictor channels
    std::uint32_t postnet_channels = 128;
    std::uint32_t postnet_kernel = 5;
    double dropout = 0.1;
    std::uint32_t num_quantizers = 32;
    std::uint32_t codebook_size = 2048;
    std::uint32_t mel_channels = 80;
    DecodingMode decoding_mode = DecodingMode::depthwise;

    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

struct FftBlock {
    nn::AttentionWeights attn;
    Tensor ln1_g, ln1_b;
    Tensor conv1_w, conv1_b; // kernel conv_kernel, hidden -> ffn
    Tensor conv2_w, conv2_b; // kernel 1, ffn -> hidden
    Tensor ln2_g, ln2_b;
};

struct VariancePredictor {
    Tensor conv1_w, conv1_b, ln1_g, ln1_b;
    Tensor conv2_w, conv2_b, ln2_g, ln2_b;
    Tensor out_w, out_b; // filter -> 1
};

struct ModelParameters {
    Tensor phoneme_embedding; // vocab x H
    std::vector<FftBlock> encoder;
    std::vector<FftBlock> decoder;
    VariancePredictor duration, pitch, energy;
    Tensor pitch_w, pitch_b, energy_w, energy_b; // 1 x H each
    std::vector<Tensor> head_w;                  // Q of H x V
    std::vector<Tensor> head_b;                  // Q of 1 x V
    std::vector<Tensor> code_embedding;          // Q of V x H; the last one is never read
    Tensor mel_w, mel_b;                         // H x 80, 1 x 80
    std::vector<Tensor> postnet_w, postnet_b;    // 5 convs

    // Stable order used by the checkpoint format and the optimiser.
    std::vector<std::pair<std::string, Tensor*>> named();
    std::vector<std::pair<std::string, const Tensor*>> named() const;
};

// Seeded initialisation. Every tensor requires grad.
ModelParameters init_parameters(const ModelConfig& config, std::uint64_t seed);

// Identical-valued copy with fresh leaves.
ModelParameters clone_parameters(const ModelParameters& p);

// Counter-based dropout bookkeeping for one forward pass.
class DropoutStream {
public:
    DropoutStream() = default; // inference: identity
    DropoutStream(double p, std::uint64_t seed, std::uint64_t stream)
        : p_(p), seed_(seed), stream_(stream), training_(true) {}

    Tensor operator()(const Tensor& x);
    bool training() const { return training_; }

private:
    double p_ = 0.0;
    std::uint64_t seed_ = 0, stream_ = 0, next_ = 0;
    bool training_ = false;
};

Tensor sinusoidal_positions(std::size_t length, std::size_t dim);

Tensor fft_block(const Tensor& x, const FftBlock& b, std::size_t heads, DropoutStream& drop);

Tensor encode_phonemes(std::span<const std::uint32_t> ids, const ModelParameters& p, const ModelConfig& c,
                       DropoutStream& drop);

// One scalar per row of `hidden`.
Tensor predict_variance(const Tensor& hidden, const VariancePredictor& vp, DropoutStream& drop);

// Row p of `hidden` repeated frames[p] times.
Tensor length_regulate(const Tensor& hidden, std::span<const std::uint32_t> frames);

Tensor condition_variances(const Tensor& regulated, const Tensor& pitch, const Tensor& energy,
                           const ModelParameters& p);

Tensor decode_frames(const Tensor& conditioned, const ModelParameters& p, const ModelConfig& c,
                     DropoutStream& drop);

struct DepthwiseOutput {
    std::vector<Tensor> logits; // Q tensors of T x V
    codec::TokenGrid tokens;    // argmax per layer
};

// Teacher tokens condition later layers when given; otherwise each layer's
// argmax is chained into the next. Parallel mode ignores both.
DepthwiseOutput depthwise_predict(const Tensor& h, const ModelParameters& p, const ModelConfig& c,
                                  const codec::TokenGrid* teacher = nullptr);

struct MelOutput {
    Tensor before, after;
};

MelOutput predict_mel(const Tensor& conditioned, const ModelParameters& p);

struct TeacherInputs {
    std::span<const std::uint32_t> durations;
    const codec::TokenGrid* tokens = nullptr;
    std::span<const double> pitch;  // normalised log F0 per frame
    std::span<const double> energy; // normalised energy per frame
};

struct ForwardOutput {
    std::vector<Tensor> token_logits; // Q of T x V
    Tensor log_duration;              // N x 1
    Tensor pitch, energy;             // T x 1
    Tensor mel_before, mel_after;     // T x mel
    Tensor h;                         // T x H
};

// Training-time pass with ground-truth durations, variances and tokens.
ForwardOutput forward(std::span<const std::uint32_t> ids, const TeacherInputs& teacher, const ModelParameters& p,
                      const ModelConfig& c, DropoutStream& drop);

// Frame count from a predicted log(d + 1); the bool is the placeholder flag.
std::pair<std::uint32_t, bool> frames_from_log_duration(double log_d);

struct Backbone {
    std::vector<std::uint32_t> frames;
    std::vector<bool> dummy;       // per phoneme
    std::vector<bool> dummy_frame; // per frame
    Tensor h;                      // T x H
};

// Ground-truth lengths used in place of the duration head (evaluation).
struct ForcedDurations {
    std::vector<std::uint32_t> frames;
    std::vector<bool> dummy;
};

// Everything up to the base hidden states, without the mel branch.
Backbone run_backbone(std::span<const std::uint32_t> ids, const ModelParameters& p, const ModelConfig& c,
                      const ForcedDurations* forced = nullptr);

struct InferenceResult {
    codec::TokenGrid tokens;
    std::vector<std::uint32_t> frames;
    std::vector<bool> dummy;
    std::vector<bool> dummy_frame;
};

InferenceResult infer(std::span<const std::uint32_t> ids, const ModelParameters& p, const ModelConfig& c,
                      const ForcedDurations* forced = nullptr);

struct Checkpoint {
    ModelConfig config;
    Vocabulary vocabulary;
    ModelParameters params;
    std::uint64_t step = 0;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Throws ConfigError when the model's Q or V differs from the codec's.
void check_compatible(const ModelConfig& c, const codec::RvqCodebookSet& codebooks);

} // namespace rvqtts::model
