#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rvqtts/alignment/alignment.hpp"
#include "rvqtts/model/acoustic_model.hpp"

namespace rvqtts::training {

using nn::Tensor;

struct TrainConfig {
    std::uint32_t batch_size = 16;
    std::uint32_t warmup_steps = 4000;
    double peak_lr = 1e-3;
    double decay_rate = 0.9995;
    std::uint64_t max_steps = 1000;
    std::uint64_t seed = 0;
    double lambda_dur = 2.0;
    double lambda_mel = 10.0;
    std::array<double, 3> stage_weights{1.0, 0.5, 0.1};
    std::uint64_t checkpoint_interval = 0; // 0: only at the end

    void validate() const;
};

struct LossBreakdown {
    double token = 0.0;
    double duration = 0.0;
    double pitch = 0.0;
    double energy = 0.0;
    double mel = 0.0;
    double postnet = 0.0;
    double total = 0.0;

    // Recomputes the total from the components.
    double weighted_sum(double lambda_dur, double lambda_mel) const {
        return token + lambda_dur * duration + pitch + energy + lambda_mel * (mel + postnet);
    }
};

// Band (1, 2 or 3) of a 1-based layer for Q quantizers. The band edges are
// ceil(4Q/32) and ceil(16Q/32).
int weight_band(std::size_t layer, std::size_t num_quantizers);
double staged_weight(std::size_t layer, std::size_t num_quantizers,
                     const std::array<double, 3>& weights = {1.0, 0.5, 0.1});

// sum_i w_i * CE_i / sum_i w_i where CE_i averages over kept frames.
Tensor token_loss(std::span<const Tensor> logits, const codec::TokenGrid& targets, std::span<const bool> keep,
                  const std::array<double, 3>& weights = {1.0, 0.5, 0.1});

// Mean over kept phonemes of (pred - ln(d + 1))^2; zero when nothing is kept.
Tensor duration_loss(const Tensor& pred_log_d, std::span<const std::uint32_t> frames, std::span<const bool> keep);

std::pair<Tensor, Tensor> variance_losses(const Tensor& pitch, const Tensor& energy, std::span<const double> pitch_target,
                                          std::span<const double> energy_target, std::span<const bool> keep);

std::pair<Tensor, Tensor> mel_losses(const Tensor& before, const Tensor& after, const Matrix& target,
                                     std::span<const bool> keep);

struct UtteranceLoss {
    Tensor total;
    LossBreakdown values;
};

UtteranceLoss utterance_loss(const model::ForwardOutput& out, const alignment::AlignedUtterance& utt,
                             const TrainConfig& config);

double lr_schedule(std::uint64_t step, const TrainConfig& config);

class Adam {
public:
    Adam(double beta1 = 0.9, double beta2 = 0.98, double eps = 1e-9) : beta1_(beta1), beta2_(beta2), eps_(eps) {}

    // Updates every tensor from its accumulated gradient and clears it.
    // Throws DivergenceError (before touching anything) on a non-finite gradient.
    void step(std::span<Tensor* const> params, double lr);
    std::uint64_t steps() const { return t_; }

private:
    double beta1_, beta2_, eps_;
    std::uint64_t t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

// Forward pass inputs for one utterance. The result points into both
// arguments.
model::TeacherInputs teacher_inputs(const alignment::AlignedUtterance& utt, std::span<const std::uint32_t> durations);

class Trainer {
public:
    Trainer(std::vector<alignment::AlignedUtterance> corpus, Vocabulary vocab, model::ModelConfig model_config,
            TrainConfig config);

    // One optimiser step; returns the batch-mean loss breakdown.
    LossBreakdown step();

    std::uint64_t steps_done() const { return step_; }
    const model::ModelParameters& params() const { return params_; }
    const model::ModelConfig& model_config() const { return model_config_; }
    const TrainConfig& config() const { return config_; }
    const std::vector<alignment::AlignedUtterance>& corpus() const { return corpus_; }
    model::Checkpoint checkpoint() const;

private:
    std::vector<std::size_t> next_batch();

    std::vector<alignment::AlignedUtterance> corpus_;
    Vocabulary vocab_;
    model::ModelConfig model_config_;
    TrainConfig config_;
    model::ModelParameters params_;
    std::vector<Tensor*> param_list_;
    Adam adam_;
    std::uint64_t step_ = 0;
    std::vector<std::size_t> order_;
    std::size_t cursor_ = 0;
    std::uint64_t epoch_ = 0;
};

// step, lr, token, duration, pitch, energy, mel, postnet, total
std::string format_log_line(std::uint64_t step, double lr, const LossBreakdown& l);
LossBreakdown parse_log_line(const std::string& line, std::uint64_t* step = nullptr, double* lr = nullptr);

struct TrainOutputs {
    std::optional<std::filesystem::path> checkpoint;
    std::optional<std::filesystem::path> log;
    std::function<void(const Trainer&, const LossBreakdown&)> on_step;
};

// Runs max_steps steps. On divergence the parameters from before the
// failing step are written to the checkpoint path and DivergenceError is
// rethrown.
model::Checkpoint train(Trainer& trainer, const TrainOutputs& outputs);

struct ExperimentConfig {
    model::ModelConfig model;
    TrainConfig train;
};

// Flat key=value text ('#' starts a comment). Unknown keys are errors.
ExperimentConfig parse_config(const std::string& text, ExperimentConfig base = {});
ExperimentConfig load_config(const std::filesystem::path& path, ExperimentConfig base = {});
std::string format_config(const ExperimentConfig& c);
// Applies one key=value pair; returns false for an unknown key.
bool apply_config_key(ExperimentConfig& c, const std::string& key, const std::string& value);

} // namespace rvqtts::training
