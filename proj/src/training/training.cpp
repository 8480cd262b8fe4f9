#include "rvqtts/training/training.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <numeric>
#include <random>
#include <sstream>

#include "rvqtts/errors.hpp"

namespace rvqtts::training {

using namespace nn;

void TrainConfig::validate() const {
    if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
    if (warmup_steps < 1) throw ConfigError("warmup_steps must be at least 1");
    if (!(peak_lr > 0.0)) throw ConfigError("peak_lr must be positive");
    if (!(decay_rate > 0.0 && decay_rate <= 1.0)) throw ConfigError("decay_rate must lie in (0, 1]");
    if (!(lambda_dur >= 0.0) || !(lambda_mel >= 0.0)) throw ConfigError("loss weights must be non-negative");
    for (double w : stage_weights) {
        if (!(w >= 0.0)) throw ConfigError("stage weights must be non-negative");
    }
}

int weight_band(std::size_t layer, std::size_t q) {
    if (layer < 1 || layer > q) {
        throw ContractError("layer " + std::to_string(layer) + " outside 1.." + std::to_string(q));
    }
    const std::size_t b1 = (4 * q + 31) / 32;
    const std::size_t b2 = (16 * q + 31) / 32;
    if (layer <= b1) return 1;
    if (layer <= b2) return 2;
    return 3;
}

double staged_weight(std::size_t layer, std::size_t q, const std::array<double, 3>& weights) {
    return weights[static_cast<std::size_t>(weight_band(layer, q) - 1)];
}

Tensor token_loss(std::span<const Tensor> logits, const codec::TokenGrid& targets, std::span<const bool> keep,
                  const std::array<double, 3>& weights) {
    const std::size_t q = logits.size();
    if (q != targets.num_quantizers) throw DimensionError("token_loss: layer count differs from targets");
    if (!keep.empty() && std::find(keep.begin(), keep.end(), true) == keep.end()) {
        throw ContractError("token_loss: every frame is masked");
    }
    Tensor total;
    double wsum = 0.0;
    for (std::size_t i = 0; i < q; ++i) {
        const double w = staged_weight(i + 1, q, weights);
        if (w == 0.0) continue;
        Tensor ce = scale(cross_entropy_rows(logits[i], targets.layer(i), keep), w);
        total = total.defined() ? add(total, ce) : ce;
        wsum += w;
    }
    if (wsum == 0.0) throw ContractError("token_loss: all stage weights are zero");
    return scale(total, 1.0 / wsum);
}

namespace {

Tensor column(std::span<const double> v) { return Tensor::from(v.size(), 1, {v.begin(), v.end()}); }

} // namespace

Tensor duration_loss(const Tensor& pred_log_d, std::span<const std::uint32_t> frames, std::span<const bool> keep) {
    std::vector<double> target(frames.size());
    for (std::size_t i = 0; i < frames.size(); ++i) target[i] = std::log(static_cast<double>(frames[i]) + 1.0);
    return mse_loss(pred_log_d, column(target), keep);
}

std::pair<Tensor, Tensor> variance_losses(const Tensor& pitch, const Tensor& energy, std::span<const double> pitch_target,
                                          std::span<const double> energy_target, std::span<const bool> keep) {
    return {mse_loss(pitch, column(pitch_target), keep), mse_loss(energy, column(energy_target), keep)};
}

std::pair<Tensor, Tensor> mel_losses(const Tensor& before, const Tensor& after, const Matrix& target,
                                     std::span<const bool> keep) {
    Tensor t = Tensor::from(target.rows, target.cols, target.data);
    return {l1_loss(before, t, keep), l1_loss(after, t, keep)};
}

model::TeacherInputs teacher_inputs(const alignment::AlignedUtterance& utt, std::span<const std::uint32_t> durations) {
    model::TeacherInputs in;
    in.durations = durations;
    in.tokens = &utt.tokens;
    in.pitch = utt.variances.log_f0;
    in.energy = utt.variances.energy;
    return in;
}

UtteranceLoss utterance_loss(const model::ForwardOutput& out, const alignment::AlignedUtterance& utt,
                             const TrainConfig& config) {
    const auto dummy_frames = utt.dummy_frame_mask();
    std::unique_ptr<bool[]> keep_frames(new bool[dummy_frames.size()]);
    for (std::size_t t = 0; t < dummy_frames.size(); ++t) keep_frames[t] = !dummy_frames[t];
    std::unique_ptr<bool[]> keep_ph(new bool[utt.phonemes.size()]);
    for (std::size_t i = 0; i < utt.phonemes.size(); ++i) keep_ph[i] = !utt.phonemes[i].is_dummy;
    const std::span<const bool> kf(keep_frames.get(), dummy_frames.size());
    const std::span<const bool> kp(keep_ph.get(), utt.phonemes.size());

    const auto durations = utt.durations();
    Tensor tok = token_loss(out.token_logits, utt.tokens, kf, config.stage_weights);
    Tensor dur = duration_loss(out.log_duration, durations, kp);
    auto [pitch, energy] = variance_losses(out.pitch, out.energy, utt.variances.log_f0, utt.variances.energy, kf);
    auto [mel, post] = mel_losses(out.mel_before, out.mel_after, utt.mel_aligned, kf);

    Tensor total = add(add(add(tok, scale(dur, config.lambda_dur)), add(pitch, energy)),
                       scale(add(mel, post), config.lambda_mel));
    UtteranceLoss r;
    r.values = {tok.item(), dur.item(), pitch.item(), energy.item(), mel.item(), post.item(), total.item()};
    r.total = total;
    return r;
}

double lr_schedule(std::uint64_t step, const TrainConfig& c) {
    if (step <= c.warmup_steps) return c.peak_lr * static_cast<double>(step) / static_cast<double>(c.warmup_steps);
    return c.peak_lr * std::pow(c.decay_rate, static_cast<double>(step - c.warmup_steps));
}

void Adam::step(std::span<Tensor* const> params, double lr) {
    for (const Tensor* p : params) {
        for (double g : p->node()->grad) {
            if (!std::isfinite(g)) throw DivergenceError("non-finite gradient");
        }
    }
    if (m_.empty()) {
        for (const Tensor* p : params) {
            m_.emplace_back(p->size(), 0.0);
            v_.emplace_back(p->size(), 0.0);
        }
    }
    if (m_.size() != params.size()) throw ContractError("Adam: parameter list changed between steps");
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
        Tensor& p = *params[k];
        const auto& g = p.node()->grad;
        auto w = p.mutable_data();
        auto& m = m_[k];
        auto& v = v_[k];
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double gi = g.empty() ? 0.0 : g[i];
            m[i] = beta1_ * m[i] + (1.0 - beta1_) * gi;
            v[i] = beta2_ * v[i] + (1.0 - beta2_) * gi * gi;
            if (m[i] == 0.0) continue;
            w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
        }
        p.zero_grad();
    }
}

Trainer::Trainer(std::vector<alignment::AlignedUtterance> corpus, Vocabulary vocab, model::ModelConfig model_config,
                 TrainConfig config)
    : corpus_(std::move(corpus)), vocab_(std::move(vocab)), model_config_(model_config), config_(config) {
    if (corpus_.empty()) throw InsufficientDataError("training needs at least one utterance");
    config_.validate();
    model_config_.validate();
    for (const auto& u : corpus_) {
        alignment::check_synchronized(u);
        if (u.tokens.num_quantizers != model_config_.num_quantizers) {
            throw ConfigError(u.id + ": token depth differs from the model");
        }
        for (auto id : u.tokens.indices) {
            if (id >= model_config_.codebook_size) throw ConfigError(u.id + ": token outside the model codebook");
        }
    }
    params_ = model::init_parameters(model_config_, config_.seed);
    for (auto& [name, t] : params_.named()) param_list_.push_back(t);
}

std::vector<std::size_t> Trainer::next_batch() {
    const std::size_t n = std::min<std::size_t>(config_.batch_size, corpus_.size());
    std::vector<std::size_t> batch;
    while (batch.size() < n) {
        if (cursor_ == order_.size()) {
            order_.resize(corpus_.size());
            std::iota(order_.begin(), order_.end(), std::size_t{0});
            std::mt19937_64 rng(mix64(config_.seed ^ mix64(++epoch_)));
            for (std::size_t i = order_.size(); i > 1; --i) std::swap(order_[i - 1], order_[rng() % i]);
            cursor_ = 0;
        }
        batch.push_back(order_[cursor_++]);
    }
    return batch;
}

LossBreakdown Trainer::step() {
    const std::uint64_t step = step_ + 1;
    const double lr = lr_schedule(step, config_);
    const auto batch = next_batch();
    const double inv = 1.0 / static_cast<double>(batch.size());
    LossBreakdown mean;
    try {
        for (std::size_t idx : batch) {
            const auto& utt = corpus_[idx];
            model::DropoutStream drop(model_config_.dropout, config_.seed, mix64(step) ^ idx);
            const auto ids = utt.symbol_ids();
            const auto durations = utt.durations();
            const auto out = model::forward(ids, teacher_inputs(utt, durations), params_, model_config_, drop);
            const auto loss = utterance_loss(out, utt, config_);
            if (!std::isfinite(loss.values.total)) {
                throw DivergenceError("non-finite loss on " + utt.id + " at step " + std::to_string(step));
            }
            backward(scale(loss.total, inv));
            mean.token += loss.values.token * inv;
            mean.duration += loss.values.duration * inv;
            mean.pitch += loss.values.pitch * inv;
            mean.energy += loss.values.energy * inv;
            mean.mel += loss.values.mel * inv;
            mean.postnet += loss.values.postnet * inv;
            mean.total += loss.values.total * inv;
        }
        adam_.step(param_list_, lr);
    } catch (const DivergenceError&) {
        for (Tensor* p : param_list_) p->zero_grad();
        throw;
    } catch (const NumericError& e) {
        for (Tensor* p : param_list_) p->zero_grad();
        throw DivergenceError(std::string("step ") + std::to_string(step) + ": " + e.what());
    }
    step_ = step;
    return mean;
}

model::Checkpoint Trainer::checkpoint() const {
    return {model_config_, vocab_, model::clone_parameters(params_), step_};
}

std::string format_log_line(std::uint64_t step, double lr, const LossBreakdown& l) {
    char buf[512];
    std::snprintf(buf, sizeof buf, "%llu\t%.17g\t%.17g\t%.17g\t%.17g\t%.17g\t%.17g\t%.17g\t%.17g",
                  static_cast<unsigned long long>(step), lr, l.token, l.duration, l.pitch, l.energy, l.mel, l.postnet,
                  l.total);
    return buf;
}

namespace {

double to_double(const std::string& s, const std::string& what) {
    double v = 0.0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) throw FormatError(what + ": bad number '" + s + "'");
    return v;
}

std::uint64_t to_u64(const std::string& s, const std::string& what) {
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) throw ConfigError(what + ": bad integer '" + s + "'");
    return v;
}

std::uint32_t to_u32(const std::string& s, const std::string& what) {
    const auto v = to_u64(s, what);
    if (v > 0xffffffffULL) throw ConfigError(what + ": value too large");
    return static_cast<std::uint32_t>(v);
}

double to_real(const std::string& s, const std::string& what) {
    try {
        return to_double(s, what);
    } catch (const FormatError& e) {
        throw ConfigError(e.what());
    }
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

} // namespace

LossBreakdown parse_log_line(const std::string& line, std::uint64_t* step, double* lr) {
    std::vector<std::string> f;
    std::istringstream in(line);
    for (std::string s; std::getline(in, s, '\t');) f.push_back(s);
    if (f.size() != 9) throw FormatError("loss log line has " + std::to_string(f.size()) + " fields, expected 9");
    if (step) *step = std::stoull(f[0]);
    if (lr) *lr = to_double(f[1], "lr");
    return {to_double(f[2], "token"),  to_double(f[3], "duration"), to_double(f[4], "pitch"),
            to_double(f[5], "energy"), to_double(f[6], "mel"),      to_double(f[7], "postnet"),
            to_double(f[8], "total")};
}

model::Checkpoint train(Trainer& trainer, const TrainOutputs& outputs) {
    std::ofstream log;
    if (outputs.log) {
        log.open(*outputs.log, std::ios::trunc | std::ios::binary);
        if (!log) throw IoError("cannot write " + outputs.log->string());
    }
    const auto& cfg = trainer.config();
    while (trainer.steps_done() < cfg.max_steps) {
        LossBreakdown l;
        try {
            l = trainer.step();
        } catch (const DivergenceError&) {
            if (outputs.checkpoint) model::save_checkpoint(trainer.checkpoint(), *outputs.checkpoint);
            throw;
        }
        const auto step = trainer.steps_done();
        if (log.is_open()) log << format_log_line(step, lr_schedule(step, cfg), l) << '\n';
        if (outputs.on_step) outputs.on_step(trainer, l);
        if (outputs.checkpoint && cfg.checkpoint_interval > 0 && step % cfg.checkpoint_interval == 0) {
            model::save_checkpoint(trainer.checkpoint(), *outputs.checkpoint);
        }
    }
    auto ckpt = trainer.checkpoint();
    if (outputs.checkpoint) model::save_checkpoint(ckpt, *outputs.checkpoint);
    return ckpt;
}

bool apply_config_key(ExperimentConfig& c, const std::string& key, const std::string& value) {
    auto& m = c.model;
    auto& t = c.train;
    const std::map<std::string, std::uint32_t*> model_u32 = {
        {"hidden_dim", &m.hidden_dim},       {"encoder_blocks", &m.encoder_blocks},
        {"decoder_blocks", &m.decoder_blocks}, {"attention_heads", &m.attention_heads},
        {"conv_kernel", &m.conv_kernel},     {"ffn_dim", &m.ffn_dim},
        {"predictor_filter", &m.predictor_filter}, {"postnet_channels", &m.postnet_channels},
        {"postnet_kernel", &m.postnet_kernel}, {"batch_size", &t.batch_size},
        {"warmup_steps", &t.warmup_steps},
    };
    const std::map<std::string, double*> reals = {
        {"dropout", &m.dropout},       {"peak_lr", &t.peak_lr},
        {"decay_rate", &t.decay_rate}, {"lambda_dur", &t.lambda_dur},
        {"lambda_mel", &t.lambda_mel}, {"stage_weight_1", &t.stage_weights[0]},
        {"stage_weight_2", &t.stage_weights[1]}, {"stage_weight_3", &t.stage_weights[2]},
    };
    const std::map<std::string, std::uint64_t*> u64s = {
        {"max_steps", &t.max_steps}, {"seed", &t.seed}, {"checkpoint_interval", &t.checkpoint_interval}};
    if (auto it = model_u32.find(key); it != model_u32.end()) {
        *it->second = to_u32(value, key);
    } else if (auto it2 = reals.find(key); it2 != reals.end()) {
        *it2->second = to_real(value, key);
    } else if (auto it3 = u64s.find(key); it3 != u64s.end()) {
        *it3->second = to_u64(value, key);
    } else if (key == "decoding_mode") {
        m.decoding_mode = model::parse_decoding_mode(value);
    } else {
        return false;
    }
    return true;
}

ExperimentConfig parse_config(const std::string& text, ExperimentConfig base) {
    std::istringstream in(text);
    std::size_t lineno = 0;
    for (std::string line; std::getline(in, line);) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key=value");
        const auto key = trim(line.substr(0, eq));
        const auto value = trim(line.substr(eq + 1));
        if (!apply_config_key(base, key, value)) {
            throw ConfigError("line " + std::to_string(lineno) + ": unknown key '" + key + "'");
        }
    }
    base.train.validate();
    return base;
}

ExperimentConfig load_config(const std::filesystem::path& path, ExperimentConfig base) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    try {
        return parse_config(ss.str(), base);
    } catch (const ConfigError& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

std::string format_config(const ExperimentConfig& c) {
    const auto& m = c.model;
    const auto& t = c.train;
    std::ostringstream out;
    char buf[64];
    auto real = [&](double v) {
        const auto r = std::to_chars(buf, buf + sizeof buf, v);
        return std::string(buf, r.ptr);
    };
    out << "hidden_dim=" << m.hidden_dim << "\nencoder_blocks=" << m.encoder_blocks
        << "\ndecoder_blocks=" << m.decoder_blocks << "\nattention_heads=" << m.attention_heads
        << "\nconv_kernel=" << m.conv_kernel << "\nffn_dim=" << m.ffn_dim << "\npredictor_filter=" << m.predictor_filter
        << "\npostnet_channels=" << m.postnet_channels << "\npostnet_kernel=" << m.postnet_kernel
        << "\ndropout=" << real(m.dropout) << "\ndecoding_mode=" << model::to_string(m.decoding_mode)
        << "\nbatch_size=" << t.batch_size << "\nwarmup_steps=" << t.warmup_steps << "\npeak_lr=" << real(t.peak_lr)
        << "\ndecay_rate=" << real(t.decay_rate) << "\nmax_steps=" << t.max_steps << "\nseed=" << t.seed
        << "\nlambda_dur=" << real(t.lambda_dur) << "\nlambda_mel=" << real(t.lambda_mel)
        << "\nstage_weight_1=" << real(t.stage_weights[0]) << "\nstage_weight_2=" << real(t.stage_weights[1])
        << "\nstage_weight_3=" << real(t.stage_weights[2]) << "\ncheckpoint_interval=" << t.checkpoint_interval << '\n';
    return out.str();
}

} // namespace rvqtts::training
