#include "rvqtts/model/acoustic_model.hpp"

#include <algorithm>
#include <cmath>

#include "rvqtts/errors.hpp"

namespace rvqtts::model {

using namespace nn;

std::string to_string(DecodingMode m) { return m == DecodingMode::depthwise ? "depthwise" : "parallel"; }

DecodingMode parse_decoding_mode(const std::string& s) {
    if (s == "depthwise") return DecodingMode::depthwise;
    if (s == "parallel") return DecodingMode::parallel;
    throw ConfigError("unknown decoding mode '" + s + "' (expected depthwise or parallel)");
}

void ModelConfig::validate() const {
    if (vocab_size == 0) throw ConfigError("vocab_size must be positive");
    if (hidden_dim == 0 || attention_heads == 0 || hidden_dim % attention_heads != 0) {
        throw ConfigError("hidden_dim must be a positive multiple of attention_heads");
    }
    if (conv_kernel % 2 == 0 || postnet_kernel % 2 == 0) throw ConfigError("convolution kernels must be odd");
    if (ffn_dim == 0 || predictor_filter == 0 || postnet_channels == 0 || mel_channels == 0) {
        throw ConfigError("layer widths must be positive");
    }
    if (num_quantizers == 0 || codebook_size == 0) throw ConfigError("num_quantizers and codebook_size must be positive");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
}

namespace {

template <typename Params, typename F>
void visit(Params& p, F&& f) {
    f("phoneme_embedding", p.phoneme_embedding);
    auto block = [&](const std::string& prefix, auto& b) {
        f(prefix + ".attn.wq", b.attn.wq);
        f(prefix + ".attn.bq", b.attn.bq);
        f(prefix + ".attn.wk", b.attn.wk);
        f(prefix + ".attn.bk", b.attn.bk);
        f(prefix + ".attn.wv", b.attn.wv);
        f(prefix + ".attn.bv", b.attn.bv);
        f(prefix + ".attn.wo", b.attn.wo);
        f(prefix + ".attn.bo", b.attn.bo);
        f(prefix + ".ln1.g", b.ln1_g);
        f(prefix + ".ln1.b", b.ln1_b);
        f(prefix + ".conv1.w", b.conv1_w);
        f(prefix + ".conv1.b", b.conv1_b);
        f(prefix + ".conv2.w", b.conv2_w);
        f(prefix + ".conv2.b", b.conv2_b);
        f(prefix + ".ln2.g", b.ln2_g);
        f(prefix + ".ln2.b", b.ln2_b);
    };
    for (std::size_t i = 0; i < p.encoder.size(); ++i) block("encoder." + std::to_string(i), p.encoder[i]);
    for (std::size_t i = 0; i < p.decoder.size(); ++i) block("decoder." + std::to_string(i), p.decoder[i]);
    auto predictor = [&](const std::string& prefix, auto& v) {
        f(prefix + ".conv1.w", v.conv1_w);
        f(prefix + ".conv1.b", v.conv1_b);
        f(prefix + ".ln1.g", v.ln1_g);
        f(prefix + ".ln1.b", v.ln1_b);
        f(prefix + ".conv2.w", v.conv2_w);
        f(prefix + ".conv2.b", v.conv2_b);
        f(prefix + ".ln2.g", v.ln2_g);
        f(prefix + ".ln2.b", v.ln2_b);
        f(prefix + ".out.w", v.out_w);
        f(prefix + ".out.b", v.out_b);
    };
    predictor("duration", p.duration);
    predictor("pitch", p.pitch);
    predictor("energy", p.energy);
    f("pitch_proj.w", p.pitch_w);
    f("pitch_proj.b", p.pitch_b);
    f("energy_proj.w", p.energy_w);
    f("energy_proj.b", p.energy_b);
    for (std::size_t i = 0; i < p.head_w.size(); ++i) {
        f("head." + std::to_string(i) + ".w", p.head_w[i]);
        f("head." + std::to_string(i) + ".b", p.head_b[i]);
    }
    for (std::size_t i = 0; i < p.code_embedding.size(); ++i) {
        f("code_embedding." + std::to_string(i), p.code_embedding[i]);
    }
    f("mel.w", p.mel_w);
    f("mel.b", p.mel_b);
    for (std::size_t i = 0; i < p.postnet_w.size(); ++i) {
        f("postnet." + std::to_string(i) + ".w", p.postnet_w[i]);
        f("postnet." + std::to_string(i) + ".b", p.postnet_b[i]);
    }
}

class Initializer {
public:
    explicit Initializer(std::uint64_t seed) : seed_(seed) {}

    Tensor uniform(std::size_t rows, std::size_t cols, double limit) {
        const std::uint64_t stream = next_++;
        std::vector<double> v(rows * cols);
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = limit * (2.0 * hash_uniform(seed_, stream, i) - 1.0);
        return Tensor::from(rows, cols, std::move(v), true);
    }
    // Xavier/Glorot uniform.
    Tensor xavier(std::size_t fan_in, std::size_t fan_out, std::size_t rows, std::size_t cols) {
        return uniform(rows, cols, std::sqrt(6.0 / static_cast<double>(fan_in + fan_out)));
    }
    Tensor linear(std::size_t in, std::size_t out) { return xavier(in, out, in, out); }
    Tensor conv(std::size_t k, std::size_t in, std::size_t out) { return xavier(k * in, out, k * in, out); }
    static Tensor zeros(std::size_t n) { return Tensor::zeros(1, n, true); }
    static Tensor ones(std::size_t n) { return Tensor::full(1, n, 1.0, true); }

private:
    std::uint64_t seed_;
    std::uint64_t next_ = 0;
};

FftBlock make_block(Initializer& init, const ModelConfig& c) {
    const std::size_t h = c.hidden_dim;
    FftBlock b;
    b.attn = {init.linear(h, h), Initializer::zeros(h), init.linear(h, h), Initializer::zeros(h),
              init.linear(h, h), Initializer::zeros(h), init.linear(h, h), Initializer::zeros(h)};
    b.ln1_g = Initializer::ones(h);
    b.ln1_b = Initializer::zeros(h);
    b.conv1_w = init.conv(c.conv_kernel, h, c.ffn_dim);
    b.conv1_b = Initializer::zeros(c.ffn_dim);
    b.conv2_w = init.conv(1, c.ffn_dim, h);
    b.conv2_b = Initializer::zeros(h);
    b.ln2_g = Initializer::ones(h);
    b.ln2_b = Initializer::zeros(h);
    return b;
}

VariancePredictor make_predictor(Initializer& init, const ModelConfig& c) {
    const std::size_t h = c.hidden_dim, f = c.predictor_filter;
    VariancePredictor v;
    v.conv1_w = init.conv(c.conv_kernel, h, f);
    v.conv1_b = Initializer::zeros(f);
    v.ln1_g = Initializer::ones(f);
    v.ln1_b = Initializer::zeros(f);
    v.conv2_w = init.conv(c.conv_kernel, f, f);
    v.conv2_b = Initializer::zeros(f);
    v.ln2_g = Initializer::ones(f);
    v.ln2_b = Initializer::zeros(f);
    v.out_w = init.linear(f, 1);
    v.out_b = Tensor::zeros(1, 1, true);
    return v;
}

Tensor column(std::span<const double> v) { return Tensor::from(v.size(), 1, {v.begin(), v.end()}); }

std::uint32_t argmax_row(std::span<const double> row) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < row.size(); ++j) {
        if (row[j] > row[best]) best = j;
    }
    return static_cast<std::uint32_t>(best);
}

} // namespace

std::vector<std::pair<std::string, Tensor*>> ModelParameters::named() {
    std::vector<std::pair<std::string, Tensor*>> out;
    visit(*this, [&](const std::string& n, Tensor& t) { out.emplace_back(n, &t); });
    return out;
}

std::vector<std::pair<std::string, const Tensor*>> ModelParameters::named() const {
    std::vector<std::pair<std::string, const Tensor*>> out;
    visit(*this, [&](const std::string& n, const Tensor& t) { out.emplace_back(n, &t); });
    return out;
}

ModelParameters init_parameters(const ModelConfig& c, std::uint64_t seed) {
    c.validate();
    Initializer init(seed);
    const std::size_t h = c.hidden_dim;
    ModelParameters p;
    p.phoneme_embedding = init.uniform(c.vocab_size, h, std::sqrt(3.0 / static_cast<double>(h)));
    for (std::uint32_t i = 0; i < c.encoder_blocks; ++i) p.encoder.push_back(make_block(init, c));
    for (std::uint32_t i = 0; i < c.decoder_blocks; ++i) p.decoder.push_back(make_block(init, c));
    p.duration = make_predictor(init, c);
    p.pitch = make_predictor(init, c);
    p.energy = make_predictor(init, c);
    p.pitch_w = init.linear(1, h);
    p.pitch_b = Initializer::zeros(h);
    p.energy_w = init.linear(1, h);
    p.energy_b = Initializer::zeros(h);
    for (std::uint32_t i = 0; i < c.num_quantizers; ++i) {
        p.head_w.push_back(init.linear(h, c.codebook_size));
        p.head_b.push_back(Initializer::zeros(c.codebook_size));
    }
    for (std::uint32_t i = 0; i < c.num_quantizers; ++i) {
        p.code_embedding.push_back(init.uniform(c.codebook_size, h, std::sqrt(3.0 / static_cast<double>(h))));
    }
    p.mel_w = init.linear(h, c.mel_channels);
    p.mel_b = Initializer::zeros(c.mel_channels);
    const std::size_t pc = c.postnet_channels, k = c.postnet_kernel;
    for (int i = 0; i < 5; ++i) {
        const std::size_t in = i == 0 ? c.mel_channels : pc;
        const std::size_t out = i == 4 ? c.mel_channels : pc;
        p.postnet_w.push_back(init.conv(k, in, out));
        p.postnet_b.push_back(Initializer::zeros(out));
    }
    return p;
}

ModelParameters clone_parameters(const ModelParameters& p) {
    ModelParameters out = p;
    for (auto& [name, t] : out.named()) *t = t->clone(true);
    return out;
}

Tensor DropoutStream::operator()(const Tensor& x) {
    if (!training_ || p_ == 0.0) return x;
    return dropout(x, p_, seed_, mix64(stream_) + next_++, true);
}

Tensor sinusoidal_positions(std::size_t length, std::size_t dim) {
    std::vector<double> v(length * dim);
    for (std::size_t t = 0; t < length; ++t) {
        for (std::size_t i = 0; i < dim; ++i) {
            const double rate = std::pow(10000.0, -static_cast<double>(i - i % 2) / static_cast<double>(dim));
            v[t * dim + i] = i % 2 == 0 ? std::sin(static_cast<double>(t) * rate) : std::cos(static_cast<double>(t) * rate);
        }
    }
    return Tensor::from(length, dim, std::move(v));
}

Tensor fft_block(const Tensor& x, const FftBlock& b, std::size_t heads, DropoutStream& drop) {
    Tensor a = drop(self_attention(x, b.attn, heads));
    Tensor y = layer_norm(add(x, a), b.ln1_g, b.ln1_b);
    Tensor f = conv1d(relu(conv1d(y, b.conv1_w, b.conv1_b)), b.conv2_w, b.conv2_b);
    return layer_norm(add(y, drop(f)), b.ln2_g, b.ln2_b);
}

Tensor encode_phonemes(std::span<const std::uint32_t> ids, const ModelParameters& p, const ModelConfig& c,
                       DropoutStream& drop) {
    if (ids.empty()) return Tensor::zeros(0, c.hidden_dim);
    for (auto id : ids) {
        if (id >= c.vocab_size) {
            throw IndexError("phoneme id " + std::to_string(id) + " outside vocabulary of " +
                             std::to_string(c.vocab_size));
        }
    }
    Tensor x = add(gather_rows(p.phoneme_embedding, ids), sinusoidal_positions(ids.size(), c.hidden_dim));
    for (const auto& b : p.encoder) x = fft_block(x, b, c.attention_heads, drop);
    return x;
}

Tensor predict_variance(const Tensor& hidden, const VariancePredictor& v, DropoutStream& drop) {
    Tensor x = drop(layer_norm(relu(conv1d(hidden, v.conv1_w, v.conv1_b)), v.ln1_g, v.ln1_b));
    x = drop(layer_norm(relu(conv1d(x, v.conv2_w, v.conv2_b)), v.ln2_g, v.ln2_b));
    return add_row(matmul(x, v.out_w), v.out_b);
}

Tensor length_regulate(const Tensor& hidden, std::span<const std::uint32_t> frames) {
    if (frames.size() != hidden.rows()) {
        throw ContractError("length_regulate: " + std::to_string(frames.size()) + " durations for " +
                            std::to_string(hidden.rows()) + " phonemes");
    }
    std::vector<std::uint32_t> idx;
    for (std::size_t i = 0; i < frames.size(); ++i) {
        if (frames[i] < 1) throw ContractError("length_regulate: every phoneme needs at least one frame");
        idx.insert(idx.end(), frames[i], static_cast<std::uint32_t>(i));
    }
    return gather_rows(hidden, idx);
}

Tensor condition_variances(const Tensor& regulated, const Tensor& pitch, const Tensor& energy,
                           const ModelParameters& p) {
    if (pitch.rows() != regulated.rows() || energy.rows() != regulated.rows() || pitch.cols() != 1 ||
        energy.cols() != 1) {
        throw ContractError("condition_variances: pitch and energy need one value per frame");
    }
    Tensor x = add(regulated, add_row(matmul(pitch, p.pitch_w), p.pitch_b));
    return add(x, add_row(matmul(energy, p.energy_w), p.energy_b));
}

Tensor decode_frames(const Tensor& conditioned, const ModelParameters& p, const ModelConfig& c,
                     DropoutStream& drop) {
    if (conditioned.rows() == 0) return Tensor::zeros(0, c.hidden_dim);
    Tensor x = add(conditioned, sinusoidal_positions(conditioned.rows(), c.hidden_dim));
    for (const auto& b : p.decoder) x = fft_block(x, b, c.attention_heads, drop);
    return x;
}

DepthwiseOutput depthwise_predict(const Tensor& h, const ModelParameters& p, const ModelConfig& c,
                                  const codec::TokenGrid* teacher) {
    const std::size_t t_len = h.rows(), q = c.num_quantizers;
    if (teacher && (teacher->num_quantizers != q || teacher->frames != t_len)) {
        throw ContractError("depthwise_predict: teacher grid is " + std::to_string(teacher->num_quantizers) + "x" +
                            std::to_string(teacher->frames) + ", expected " + std::to_string(q) + "x" +
                            std::to_string(t_len));
    }
    DepthwiseOutput out;
    out.tokens = codec::TokenGrid(q, t_len, 12.5);
    Tensor acc = h;
    for (std::size_t i = 0; i < q; ++i) {
        Tensor logits = add_row(matmul(acc, p.head_w[i]), p.head_b[i]);
        auto v = logits.data();
        for (std::size_t t = 0; t < t_len; ++t) {
            out.tokens.at(i, t) = argmax_row(v.subspan(t * c.codebook_size, c.codebook_size));
        }
        out.logits.push_back(std::move(logits));
        if (c.decoding_mode == DecodingMode::depthwise && i + 1 < q && t_len > 0) {
            const auto ids = teacher ? teacher->layer(i) : out.tokens.layer(i);
            acc = add(acc, gather_rows(p.code_embedding[i], ids));
        }
    }
    return out;
}

MelOutput predict_mel(const Tensor& conditioned, const ModelParameters& p) {
    Tensor before = add_row(matmul(conditioned, p.mel_w), p.mel_b);
    Tensor x = before;
    for (std::size_t i = 0; i < p.postnet_w.size(); ++i) {
        x = conv1d(x, p.postnet_w[i], p.postnet_b[i]);
        if (i + 1 < p.postnet_w.size()) x = nn::tanh(x);
    }
    return {before, add(before, x)};
}

ForwardOutput forward(std::span<const std::uint32_t> ids, const TeacherInputs& teacher, const ModelParameters& p,
                      const ModelConfig& c, DropoutStream& drop) {
    if (!teacher.tokens) throw ContractError("forward: teacher tokens are required");
    std::size_t total = 0;
    for (auto d : teacher.durations) total += d;
    if (total != teacher.tokens->frames || teacher.pitch.size() != total || teacher.energy.size() != total) {
        throw ContractError("forward: durations, tokens and variance targets disagree on frame count");
    }
    ForwardOutput out;
    Tensor enc = encode_phonemes(ids, p, c, drop);
    out.log_duration = predict_variance(enc, p.duration, drop);
    Tensor regulated = length_regulate(enc, teacher.durations);
    out.pitch = predict_variance(regulated, p.pitch, drop);
    out.energy = predict_variance(regulated, p.energy, drop);
    Tensor conditioned = condition_variances(regulated, column(teacher.pitch), column(teacher.energy), p);
    auto mel = predict_mel(conditioned, p);
    out.mel_before = mel.before;
    out.mel_after = mel.after;
    out.h = decode_frames(conditioned, p, c, drop);
    out.token_logits = depthwise_predict(out.h, p, c, teacher.tokens).logits;
    return out;
}

std::pair<std::uint32_t, bool> frames_from_log_duration(double log_d) {
    if (!std::isfinite(log_d)) throw NumericError("non-finite duration prediction");
    // Anything beyond ~4.6 hours of frames is a broken model, not a duration.
    const double r = std::floor(std::exp(std::min(log_d, 12.0)) - 1.0 + 0.5);
    if (r <= 0.0) return {1, true};
    return {static_cast<std::uint32_t>(r), false};
}

Backbone run_backbone(std::span<const std::uint32_t> ids, const ModelParameters& p, const ModelConfig& c,
                      const ForcedDurations* forced) {
    NoGradGuard guard;
    DropoutStream off;
    Backbone b;
    if (ids.empty()) {
        b.h = Tensor::zeros(0, c.hidden_dim);
        return b;
    }
    Tensor enc = encode_phonemes(ids, p, c, off);
    if (forced) {
        if (forced->frames.size() != ids.size() || forced->dummy.size() != ids.size()) {
            throw ContractError("forced durations must cover every phoneme");
        }
        b.frames = forced->frames;
        b.dummy = forced->dummy;
    } else {
        Tensor log_d = predict_variance(enc, p.duration, off);
        for (std::size_t i = 0; i < ids.size(); ++i) {
            auto [f, dummy] = frames_from_log_duration(log_d.data()[i]);
            b.frames.push_back(f);
            b.dummy.push_back(dummy);
        }
    }
    for (std::size_t i = 0; i < ids.size(); ++i) b.dummy_frame.insert(b.dummy_frame.end(), b.frames[i], b.dummy[i]);
    Tensor regulated = length_regulate(enc, b.frames);
    Tensor pitch = predict_variance(regulated, p.pitch, off);
    Tensor energy = predict_variance(regulated, p.energy, off);
    b.h = decode_frames(condition_variances(regulated, pitch, energy, p), p, c, off);
    return b;
}

InferenceResult infer(std::span<const std::uint32_t> ids, const ModelParameters& p, const ModelConfig& c,
                      const ForcedDurations* forced) {
    Backbone b = run_backbone(ids, p, c, forced);
    NoGradGuard guard;
    InferenceResult r;
    r.tokens = depthwise_predict(b.h, p, c).tokens;
    r.frames = std::move(b.frames);
    r.dummy = std::move(b.dummy);
    r.dummy_frame = std::move(b.dummy_frame);
    return r;
}

void check_compatible(const ModelConfig& c, const codec::RvqCodebookSet& codebooks) {
    if (c.num_quantizers != codebooks.config.num_quantizers || c.codebook_size != codebooks.config.codebook_size) {
        throw ConfigError("model expects " + std::to_string(c.num_quantizers) + "x" + std::to_string(c.codebook_size) +
                          " tokens but the codec has " + std::to_string(codebooks.config.num_quantizers) + "x" +
                          std::to_string(codebooks.config.codebook_size));
    }
}

} // namespace rvqtts::model
