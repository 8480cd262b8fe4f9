#include "rvqtts/eval/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <sstream>

#include "rvqtts/errors.hpp"
#include "rvqtts/streaming/streaming.hpp"
#include "rvqtts/training/training.hpp"

namespace rvqtts::eval {

Matrix mel_cepstrum(const Matrix& log_mel, std::size_t order) {
    const std::size_t m = log_mel.cols;
    if (order >= m) throw ContractError("cepstral order must be below the channel count");
    Matrix basis(order + 1, m);
    for (std::size_t k = 0; k <= order; ++k) {
        const double s = std::sqrt((k == 0 ? 1.0 : 2.0) / static_cast<double>(m));
        for (std::size_t j = 0; j < m; ++j) {
            basis(k, j) = s * std::cos(std::numbers::pi * static_cast<double>(k) * (static_cast<double>(j) + 0.5) /
                                       static_cast<double>(m));
        }
    }
    Matrix out(log_mel.rows, order + 1);
    for (std::size_t t = 0; t < log_mel.rows; ++t) {
        for (std::size_t k = 0; k <= order; ++k) {
            double s = 0.0;
            for (std::size_t j = 0; j < m; ++j) s += basis(k, j) * log_mel(t, j);
            out(t, k) = s;
        }
    }
    return out;
}

std::vector<bool> non_silent_frames(const Matrix& log_mel, double range_db) {
    std::vector<double> level(log_mel.rows);
    for (std::size_t t = 0; t < log_mel.rows; ++t) {
        double e = 0.0;
        for (double v : log_mel.row(t)) e += std::exp(2.0 * v);
        level[t] = 10.0 * std::log10(e);
    }
    const double top = level.empty() ? 0.0 : *std::max_element(level.begin(), level.end());
    std::vector<bool> keep(level.size());
    for (std::size_t t = 0; t < level.size(); ++t) keep[t] = level[t] >= top - range_db;
    return keep;
}

double mcd_from_cepstra(const Matrix& ref, const Matrix& hyp, const std::vector<bool>& keep) {
    if (ref.rows != hyp.rows || ref.cols != hyp.cols) {
        throw AlignmentError("mcd: reference has " + std::to_string(ref.rows) + " frames, hypothesis " +
                             std::to_string(hyp.rows));
    }
    if (!keep.empty() && keep.size() != ref.rows) throw DimensionError("mcd: mask length differs from frame count");
    const double k = 10.0 / std::numbers::ln10;
    double total = 0.0;
    std::size_t n = 0;
    for (std::size_t t = 0; t < ref.rows; ++t) {
        if (!keep.empty() && !keep[t]) continue;
        double s = 0.0;
        for (std::size_t c = 1; c < ref.cols; ++c) {
            const double d = ref(t, c) - hyp(t, c);
            s += d * d;
        }
        total += k * std::sqrt(2.0 * s);
        ++n;
    }
    return n == 0 ? 0.0 : total / static_cast<double>(n);
}

double mcd(std::span<const double> ref, std::span<const double> hyp, const dsp::MelAnalyzer& mel) {
    if (ref.size() != hyp.size()) {
        throw AlignmentError("mcd: waveform lengths differ (" + std::to_string(ref.size()) + " vs " +
                             std::to_string(hyp.size()) + ")");
    }
    const std::size_t frames = mel.frames_for(ref.size());
    const Matrix ref_mel = mel.log_mel(ref, frames);
    const Matrix hyp_mel = mel.log_mel(hyp, frames);
    return mcd_from_cepstra(mel_cepstrum(ref_mel), mel_cepstrum(hyp_mel), non_silent_frames(ref_mel));
}

namespace {

void require_same_length(const alignment::F0Track& a, const alignment::F0Track& b) {
    if (a.size() != b.size() || a.voiced.size() != b.voiced.size()) {
        throw AlignmentError("pitch tracks differ in length (" + std::to_string(a.size()) + " vs " +
                             std::to_string(b.size()) + ")");
    }
}

} // namespace

std::optional<double> f0_rmse(const alignment::F0Track& ref, const alignment::F0Track& hyp) {
    require_same_length(ref, hyp);
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t t = 0; t < ref.size(); ++t) {
        if (!ref.voiced[t] || !hyp.voiced[t]) continue;
        const double d = ref.f0_hz[t] - hyp.f0_hz[t];
        s += d * d;
        ++n;
    }
    if (n == 0) return std::nullopt;
    return std::sqrt(s / static_cast<double>(n));
}

double vuv_error(const alignment::F0Track& ref, const alignment::F0Track& hyp) {
    require_same_length(ref, hyp);
    if (ref.size() == 0) return 0.0;
    std::size_t diff = 0;
    for (std::size_t t = 0; t < ref.size(); ++t) diff += ref.voiced[t] != hyp.voiced[t];
    return 100.0 * static_cast<double>(diff) / static_cast<double>(ref.size());
}

MetricReport evaluate_pair(std::span<const double> ref, std::span<const double> hyp, std::uint32_t sample_rate,
                           const dsp::MelAnalyzer& mel) {
    MetricReport r;
    r.mcd_db = mcd(ref, hyp, mel);
    const double rate = static_cast<double>(sample_rate) / 1920.0;
    const auto f_ref = alignment::extract_f0(ref, sample_rate, rate);
    const auto f_hyp = alignment::extract_f0(hyp, sample_rate, rate);
    r.f0_rmse_hz = f0_rmse(f_ref, f_hyp);
    r.vuv_error_pct = vuv_error(f_ref, f_hyp);
    return r;
}

MetricReport mean_report(std::span<const MetricReport> reports) {
    MetricReport m;
    if (reports.empty()) return m;
    double f0 = 0.0;
    std::size_t f0_n = 0;
    for (const auto& r : reports) {
        m.mcd_db += r.mcd_db;
        m.vuv_error_pct += r.vuv_error_pct;
        if (r.f0_rmse_hz) {
            f0 += *r.f0_rmse_hz;
            ++f0_n;
        }
    }
    m.mcd_db /= static_cast<double>(reports.size());
    m.vuv_error_pct /= static_cast<double>(reports.size());
    if (f0_n > 0) m.f0_rmse_hz = f0 / static_cast<double>(f0_n);
    return m;
}

BandAccuracy teacher_forced_accuracy(const model::ModelParameters& p, const model::ModelConfig& c,
                                     std::span<const alignment::AlignedUtterance> corpus) {
    nn::NoGradGuard guard;
    const std::size_t q = c.num_quantizers;
    std::vector<std::size_t> correct(q, 0);
    std::size_t frames = 0;
    for (const auto& utt : corpus) {
        model::DropoutStream off;
        const auto ids = utt.symbol_ids();
        const auto durations = utt.durations();
        const auto out = model::forward(ids, training::teacher_inputs(utt, durations), p, c, off);
        codec::TokenGrid pred(q, utt.frames(), utt.tokens.frame_rate);
        for (std::size_t i = 0; i < q; ++i) {
            const auto& lg = out.token_logits[i];
            for (std::size_t t = 0; t < utt.frames(); ++t) {
                std::size_t best = 0;
                for (std::size_t v = 1; v < lg.cols(); ++v) {
                    if (lg.at(t, v) > lg.at(t, best)) best = v;
                }
                pred.at(i, t) = static_cast<std::uint32_t>(best);
            }
        }
        const auto dummy = utt.dummy_frame_mask();
        for (std::size_t t = 0; t < utt.frames(); ++t) {
            if (dummy[t]) continue;
            ++frames;
            for (std::size_t i = 0; i < q; ++i) correct[i] += pred.at(i, t) == utt.tokens.at(i, t);
        }
    }
    BandAccuracy acc;
    if (frames == 0) return acc;
    std::array<std::size_t, 3> band_correct{}, band_layers{};
    for (std::size_t i = 0; i < q; ++i) {
        acc.per_layer.push_back(static_cast<double>(correct[i]) / static_cast<double>(frames));
        const auto b = static_cast<std::size_t>(training::weight_band(i + 1, q) - 1);
        band_correct[b] += correct[i];
        ++band_layers[b];
    }
    for (std::size_t b = 0; b < 3; ++b) {
        if (band_layers[b] > 0) {
            acc.band[b] = static_cast<double>(band_correct[b]) / static_cast<double>(frames * band_layers[b]);
        }
    }
    return acc;
}

std::vector<double> fit_length(std::span<const double> wave, std::size_t samples) {
    std::vector<double> out(samples, 0.0);
    std::copy_n(wave.begin(), std::min(samples, wave.size()), out.begin());
    return out;
}

std::vector<DepthRow> ablate_codebook_depth(const codec::RvqCodebookSet& codebooks,
                                            std::span<const std::vector<double>> waveforms,
                                            std::span<const std::size_t> depths) {
    const auto& cfg = codebooks.config;
    for (auto d : depths) {
        if (d < 1 || d > cfg.num_quantizers) {
            throw ContractError("depth " + std::to_string(d) + " outside 1.." + std::to_string(cfg.num_quantizers));
        }
    }
    const dsp::MelAnalyzer mel;
    std::vector<DepthRow> rows;
    for (auto d : depths) rows.push_back({d, 0.0, {}});
    std::vector<std::vector<MetricReport>> reports(depths.size());
    double elems = 0.0;
    for (const auto& wave : waveforms) {
        const Matrix feats = codec::analyze(wave, cfg);
        const auto tokens = codec::encode(feats, codebooks);
        const auto ref = fit_length(wave, feats.rows * cfg.hop);
        elems += static_cast<double>(feats.data.size());
        for (std::size_t k = 0; k < depths.size(); ++k) {
            const Matrix recon = codec::dequantize(tokens, codebooks, depths[k]);
            for (std::size_t i = 0; i < recon.data.size(); ++i) {
                const double diff = recon.data[i] - feats.data[i];
                rows[k].recon_mse += diff * diff;
            }
            reports[k].push_back(evaluate_pair(ref, codec::synthesize(recon, cfg), cfg.sample_rate, mel));
        }
    }
    for (std::size_t k = 0; k < rows.size(); ++k) {
        if (elems > 0.0) rows[k].recon_mse /= elems;
        rows[k].metrics = mean_report(reports[k]);
    }
    return rows;
}

std::vector<UtteranceMetrics> evaluate_corpus(const model::Checkpoint& ckpt, const codec::RvqCodebookSet& codebooks,
                                              std::span<const alignment::AlignedUtterance> corpus,
                                              std::span<const std::vector<double>> references) {
    if (references.size() != corpus.size()) throw DimensionError("one reference waveform per utterance required");
    const dsp::MelAnalyzer mel;
    std::vector<UtteranceMetrics> out;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        const auto& utt = corpus[i];
        model::ForcedDurations forced;
        for (const auto& ph : utt.phonemes) {
            forced.frames.push_back(ph.duration_frames);
            forced.dummy.push_back(ph.is_dummy);
        }
        const auto ids = utt.symbol_ids();
        const auto hyp = streaming::synthesize_offline(ids, ckpt, codebooks, &forced);
        const auto ref = fit_length(references[i], hyp.size());
        out.push_back({utt.id, evaluate_pair(ref, hyp, codebooks.config.sample_rate, mel)});
    }
    return out;
}

std::vector<DecodingRow> ablate_decoding_mode(const model::Checkpoint& depthwise, const model::Checkpoint& parallel,
                                              std::span<const alignment::AlignedUtterance> corpus,
                                              std::span<const std::vector<double>> references,
                                              const codec::RvqCodebookSet& codebooks) {
    auto a = depthwise.config, b = parallel.config;
    if (a.decoding_mode != model::DecodingMode::depthwise || b.decoding_mode != model::DecodingMode::parallel) {
        throw ContractError("decoding ablation needs one depthwise and one parallel checkpoint");
    }
    b.decoding_mode = a.decoding_mode;
    if (!(a == b) || depthwise.step != parallel.step) {
        throw ContractError("decoding ablation checkpoints differ in more than the decoding mode");
    }
    std::vector<DecodingRow> rows;
    for (const auto* ck : {&parallel, &depthwise}) {
        DecodingRow row;
        row.strategy = ck == &parallel ? "naive_parallel" : "depthwise_sequential";
        row.accuracy = teacher_forced_accuracy(ck->params, ck->config, corpus);
        const auto per_utt = evaluate_corpus(*ck, codebooks, corpus, references);
        std::vector<MetricReport> reports;
        for (const auto& u : per_utt) reports.push_back(u.metrics);
        row.metrics = mean_report(reports);
        rows.push_back(std::move(row));
    }
    return rows;
}

namespace {

std::string fmt(double v, const char* spec = "%.4f") {
    char buf[64];
    std::snprintf(buf, sizeof buf, spec, v);
    return buf;
}

std::string fmt_opt(const std::optional<double>& v) { return v ? fmt(*v) : "NA"; }

} // namespace

std::string format_metric_table(std::span<const UtteranceMetrics> rows) {
    std::ostringstream out;
    out << "utterance\tmcd_db\tf0_rmse_hz\tvuv_error_pct\n";
    std::vector<MetricReport> reports;
    for (const auto& r : rows) {
        out << r.id << '\t' << fmt(r.metrics.mcd_db) << '\t' << fmt_opt(r.metrics.f0_rmse_hz) << '\t'
            << fmt(r.metrics.vuv_error_pct) << '\n';
        reports.push_back(r.metrics);
    }
    const auto m = mean_report(reports);
    out << "mean\t" << fmt(m.mcd_db) << '\t' << fmt_opt(m.f0_rmse_hz) << '\t' << fmt(m.vuv_error_pct) << '\n';
    return out.str();
}

std::string format_depth_table(std::span<const DepthRow> rows) {
    std::ostringstream out;
    out << "codebooks\trecon_mse\tmcd_db\tf0_rmse_hz\tvuv_error_pct\n";
    for (const auto& r : rows) {
        out << r.depth << '\t' << fmt(r.recon_mse, "%.9g") << '\t' << fmt(r.metrics.mcd_db) << '\t'
            << fmt_opt(r.metrics.f0_rmse_hz) << '\t' << fmt(r.metrics.vuv_error_pct) << '\n';
    }
    return out.str();
}

std::string format_decoding_table(std::span<const DecodingRow> rows) {
    std::ostringstream out;
    out << "strategy\tacc_band1\tacc_band2\tacc_band3\tmcd_db\tf0_rmse_hz\tvuv_error_pct\n";
    for (const auto& r : rows) {
        out << r.strategy << '\t' << fmt(r.accuracy.band[0]) << '\t' << fmt(r.accuracy.band[1]) << '\t'
            << fmt(r.accuracy.band[2]) << '\t' << fmt(r.metrics.mcd_db) << '\t' << fmt_opt(r.metrics.f0_rmse_hz)
            << '\t' << fmt(r.metrics.vuv_error_pct) << '\n';
    }
    return out.str();
}

} // namespace rvqtts::eval
