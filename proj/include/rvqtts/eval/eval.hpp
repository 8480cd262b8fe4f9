#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rvqtts/alignment/alignment.hpp"
#include "rvqtts/codec/codec.hpp"
#include "rvqtts/dsp/mel.hpp"
#include "rvqtts/matrix.hpp"
#include "rvqtts/model/acoustic_model.hpp"

namespace rvqtts::eval {

inline constexpr std::size_t kCepstralOrder = 13;

// Orthonormal DCT-II across the channels of each log-mel frame; columns
// c0..c_order.
Matrix mel_cepstrum(const Matrix& log_mel, std::size_t order = kCepstralOrder);

// Frames whose energy lies within range_db of the loudest frame.
std::vector<bool> non_silent_frames(const Matrix& log_mel, double range_db = 60.0);

// Mean over kept frames of (10/ln10) * sqrt(2 * sum_{k>=1} (c_k - c'_k)^2).
// An empty mask keeps every frame.
double mcd_from_cepstra(const Matrix& ref, const Matrix& hyp, const std::vector<bool>& keep = {});

// Waveforms must have equal length (frame-exact comparison). Silent
// reference frames are excluded.
double mcd(std::span<const double> ref, std::span<const double> hyp, const dsp::MelAnalyzer& mel);

// RMSE over frames voiced in both tracks; nullopt when there are none.
std::optional<double> f0_rmse(const alignment::F0Track& ref, const alignment::F0Track& hyp);
// Percentage of frames whose voicing flags differ.
double vuv_error(const alignment::F0Track& ref, const alignment::F0Track& hyp);

struct MetricReport {
    double mcd_db = 0.0;
    std::optional<double> f0_rmse_hz;
    double vuv_error_pct = 0.0;
};

MetricReport evaluate_pair(std::span<const double> ref, std::span<const double> hyp, std::uint32_t sample_rate,
                           const dsp::MelAnalyzer& mel);
// Mean of each field; f0 averages only the utterances where it is defined.
MetricReport mean_report(std::span<const MetricReport> reports);

struct BandAccuracy {
    std::array<double, 3> band{0.0, 0.0, 0.0};
    std::vector<double> per_layer;
};

// Teacher-forced top-1 token accuracy over non-placeholder frames.
BandAccuracy teacher_forced_accuracy(const model::ModelParameters& p, const model::ModelConfig& c,
                                     std::span<const alignment::AlignedUtterance> corpus);

// Reference audio padded with zeros (or trimmed) to `samples`.
std::vector<double> fit_length(std::span<const double> wave, std::size_t samples);

struct DepthRow {
    std::size_t depth = 0;
    double recon_mse = 0.0; // feature-domain
    MetricReport metrics;   // codec resynthesis against the reference audio
};

std::vector<DepthRow> ablate_codebook_depth(const codec::RvqCodebookSet& codebooks,
                                            std::span<const std::vector<double>> waveforms,
                                            std::span<const std::size_t> depths);

struct DecodingRow {
    std::string strategy;
    BandAccuracy accuracy;
    MetricReport metrics;
};

// Both checkpoints must differ only in decoding mode. Synthesis uses the
// ground-truth durations so that frames align with the references.
std::vector<DecodingRow> ablate_decoding_mode(const model::Checkpoint& depthwise, const model::Checkpoint& parallel,
                                              std::span<const alignment::AlignedUtterance> corpus,
                                              std::span<const std::vector<double>> references,
                                              const codec::RvqCodebookSet& codebooks);

struct UtteranceMetrics {
    std::string id;
    MetricReport metrics;
};

// Ground-truth-duration synthesis of every utterance against its reference.
std::vector<UtteranceMetrics> evaluate_corpus(const model::Checkpoint& ckpt, const codec::RvqCodebookSet& codebooks,
                                              std::span<const alignment::AlignedUtterance> corpus,
                                              std::span<const std::vector<double>> references);

std::string format_metric_table(std::span<const UtteranceMetrics> rows);
std::string format_depth_table(std::span<const DepthRow> rows);
std::string format_decoding_table(std::span<const DecodingRow> rows);

} // namespace rvqtts::eval
