#include "rvqtts/alignment/alignment.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "rvqtts/binary_io.hpp"
#include "rvqtts/errors.hpp"

namespace rvqtts::alignment {

std::vector<FrameAllocation> durations_to_frames(std::span<const double> seconds, double frame_rate,
                                                 std::size_t total_frames) {
    const std::size_t n = seconds.size();
    if (total_frames < n) {
        throw AlignmentError("cannot fit " + std::to_string(n) + " phonemes into " +
                             std::to_string(total_frames) + " frames");
    }
    std::vector<FrameAllocation> out(n);
    std::vector<double> remainder(n);
    long assigned = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!(seconds[i] >= 0.0) || !std::isfinite(seconds[i])) {
            throw ContractError("durations must be finite and non-negative");
        }
        const double exact = seconds[i] * frame_rate;
        const double rounded = std::floor(exact + 0.5);
        remainder[i] = exact - rounded;
        if (rounded < 1.0) {
            out[i] = {1, true};
        } else {
            out[i] = {static_cast<std::uint32_t>(rounded), false};
        }
        assigned += out[i].frames;
    }
    long diff = static_cast<long>(total_frames) - assigned;
    if (diff == 0) return out;

    std::vector<std::size_t> adjustable;
    for (std::size_t i = 0; i < n; ++i)
        if (!out[i].is_dummy) adjustable.push_back(i);
    if (diff > 0) {
        // Everything is a placeholder: the extra frames have to land somewhere,
        // and an entry that receives them is no longer a placeholder.
        if (adjustable.empty()) {
            adjustable.resize(n);
            std::iota(adjustable.begin(), adjustable.end(), std::size_t{0});
        }
        std::stable_sort(adjustable.begin(), adjustable.end(),
                         [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
        for (std::size_t k = 0; diff > 0; ++k, --diff) {
            auto& e = out[adjustable[k % adjustable.size()]];
            ++e.frames;
            e.is_dummy = false;
        }
        return out;
    }
    // Too many frames: take from the entries that were rounded up the most,
    // never going below one frame.
    std::stable_sort(adjustable.begin(), adjustable.end(),
                     [&](std::size_t a, std::size_t b) { return remainder[a] < remainder[b]; });
    while (diff < 0) {
        bool progressed = false;
        for (std::size_t idx : adjustable) {
            if (diff == 0) break;
            if (out[idx].frames > 1) {
                --out[idx].frames;
                ++diff;
                progressed = true;
            }
        }
        if (!progressed) {
            throw AlignmentError("cannot shrink durations to " + std::to_string(total_frames) + " frames");
        }
    }
    return out;
}

Matrix pool_mel(const Matrix& mel_high, int k) {
    if (k <= 0) throw ContractError("pool_mel: factor must be positive");
    const std::size_t kk = static_cast<std::size_t>(k);
    const std::size_t out_rows = (mel_high.rows + kk - 1) / kk;
    Matrix out(out_rows, mel_high.cols);
    for (std::size_t t = 0; t < out_rows; ++t) {
        auto dst = out.row(t);
        for (std::size_t j = 0; j < kk; ++j) {
            const std::size_t src = std::min(t * kk + j, mel_high.rows - 1);
            auto row = mel_high.row(src);
            for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += row[c];
        }
        for (double& v : dst) v /= static_cast<double>(kk);
    }
    return out;
}

std::vector<double> cumulative_mean_normalized_difference(std::span<const double> window,
                                                          std::size_t max_lag) {
    if (window.size() <= max_lag) throw ContractError("YIN window shorter than the maximum lag");
    const std::size_t w = window.size() - max_lag;
    std::vector<double> d(max_lag + 1, 0.0);
    for (std::size_t tau = 1; tau <= max_lag; ++tau) {
        double s = 0.0;
        for (std::size_t j = 0; j < w; ++j) {
            const double diff = window[j] - window[j + tau];
            s += diff * diff;
        }
        d[tau] = s;
    }
    std::vector<double> out(max_lag + 1, 1.0);
    double running = 0.0;
    for (std::size_t tau = 1; tau <= max_lag; ++tau) {
        running += d[tau];
        out[tau] = running > 0.0 ? d[tau] * static_cast<double>(tau) / running : 1.0;
    }
    return out;
}

F0Track extract_f0(std::span<const double> waveform, std::uint32_t sample_rate, double frame_rate,
                   const YinOptions& options) {
    const auto hop = static_cast<std::size_t>(std::lround(sample_rate / frame_rate));
    const std::size_t window = hop;
    const auto min_lag = static_cast<std::size_t>(std::floor(sample_rate / options.fmax));
    const auto max_lag = static_cast<std::size_t>(std::ceil(sample_rate / options.fmin));
    if (max_lag + 2 >= window) throw ContractError("YIN window too short for the lowest F0");

    F0Track track;
    track.frame_rate = frame_rate;
    if (waveform.size() < window) {
        track.f0_hz = {0.0};
        track.voiced = {false};
        return track;
    }
    const std::size_t frames = (waveform.size() + hop - 1) / hop;
    track.f0_hz.assign(frames, 0.0);
    track.voiced.assign(frames, false);
    std::vector<double> buf(window);
    const long len = static_cast<long>(waveform.size());
    for (std::size_t t = 0; t < frames; ++t) {
        const long start = static_cast<long>(t * hop + hop / 2) - static_cast<long>(window / 2);
        for (std::size_t i = 0; i < window; ++i) {
            const long src = start + static_cast<long>(i);
            buf[i] = (src >= 0 && src < len) ? waveform[src] : 0.0;
        }
        auto cmnd = cumulative_mean_normalized_difference(buf, max_lag);
        std::size_t tau = min_lag;
        for (; tau < max_lag; ++tau) {
            if (cmnd[tau] < options.threshold) {
                while (tau + 1 < max_lag && cmnd[tau + 1] < cmnd[tau]) ++tau;
                break;
            }
        }
        if (tau >= max_lag) continue;
        double refined = static_cast<double>(tau);
        if (tau > 0 && tau < max_lag) {
            const double a = cmnd[tau - 1], b = cmnd[tau], c = cmnd[tau + 1];
            const double denom = a - 2.0 * b + c;
            if (std::abs(denom) > 1e-12) refined += 0.5 * (a - c) / denom;
        }
        track.f0_hz[t] = std::clamp(sample_rate / refined, options.fmin, options.fmax);
        track.voiced[t] = true;
    }
    return track;
}

EnergyTrack extract_energy(std::span<const double> waveform, std::uint32_t sample_rate, double frame_rate) {
    const auto hop = static_cast<std::size_t>(std::lround(sample_rate / frame_rate));
    EnergyTrack out;
    out.frame_rate = frame_rate;
    const std::size_t frames = (waveform.size() + hop - 1) / hop;
    out.rms.resize(frames);
    for (std::size_t t = 0; t < frames; ++t) {
        const std::size_t end = std::min(waveform.size(), (t + 1) * hop);
        double s = 0.0;
        for (std::size_t i = t * hop; i < end; ++i) s += waveform[i] * waveform[i];
        out.rms[t] = std::sqrt(s / static_cast<double>(hop));
    }
    return out;
}

namespace {

// Linear interpolation of a frame-centred source track at target frame t.
double resample_at(std::span<const double> src, double src_rate, double target_rate, std::size_t t) {
    if (src.empty()) throw ContractError("cannot resample an empty track");
    const double pos = (static_cast<double>(t) + 0.5) * src_rate / target_rate - 0.5;
    const double nearest = std::round(pos);
    if (std::abs(pos - nearest) < 1e-9) {
        const auto i = static_cast<long>(std::clamp(nearest, 0.0, static_cast<double>(src.size() - 1)));
        return src[i];
    }
    if (pos <= 0.0) return src.front();
    if (pos >= static_cast<double>(src.size() - 1)) return src.back();
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const double frac = pos - static_cast<double>(lo);
    return src[lo] * (1.0 - frac) + src[lo + 1] * frac;
}

std::size_t nearest_index(std::size_t n, double src_rate, double target_rate, std::size_t t) {
    const double pos = (static_cast<double>(t) + 0.5) * src_rate / target_rate - 0.5;
    return static_cast<std::size_t>(std::clamp(std::round(pos), 0.0, static_cast<double>(n - 1)));
}

} // namespace

VarianceTrack build_variance_track(const F0Track& f0, const EnergyTrack& energy, double target_rate,
                                   std::size_t target_frames) {
    if (f0.size() == 0 || energy.rms.empty()) throw ContractError("variance source tracks must be non-empty");
    const std::size_t n = f0.size();
    std::vector<double> log_f0(n, 0.0);
    std::vector<std::size_t> voiced_idx;
    for (std::size_t i = 0; i < n; ++i) {
        if (f0.voiced[i]) voiced_idx.push_back(i);
    }
    if (voiced_idx.empty()) {
        std::fill(log_f0.begin(), log_f0.end(), std::log(kUnvoicedFallbackHz));
    } else {
        for (std::size_t i : voiced_idx) log_f0[i] = std::log(f0.f0_hz[i]);
        for (std::size_t i = 0; i < voiced_idx.front(); ++i) log_f0[i] = log_f0[voiced_idx.front()];
        for (std::size_t i = voiced_idx.back() + 1; i < n; ++i) log_f0[i] = log_f0[voiced_idx.back()];
        for (std::size_t k = 0; k + 1 < voiced_idx.size(); ++k) {
            const std::size_t a = voiced_idx[k], b = voiced_idx[k + 1];
            for (std::size_t i = a + 1; i < b; ++i) {
                const double frac = static_cast<double>(i - a) / static_cast<double>(b - a);
                log_f0[i] = log_f0[a] * (1.0 - frac) + log_f0[b] * frac;
            }
        }
    }
    VarianceTrack out;
    out.frame_rate = target_rate;
    out.log_f0.resize(target_frames);
    out.voiced.resize(target_frames);
    out.energy.resize(target_frames);
    for (std::size_t t = 0; t < target_frames; ++t) {
        out.log_f0[t] = resample_at(log_f0, f0.frame_rate, target_rate, t);
        out.voiced[t] = f0.voiced[nearest_index(n, f0.frame_rate, target_rate, t)];
        out.energy[t] = resample_at(energy.rms, energy.frame_rate, target_rate, t);
    }
    return out;
}

std::vector<bool> silence_mask(std::span<const PhonemeEntry> phonemes) {
    std::vector<bool> mask;
    for (const auto& p : phonemes) mask.insert(mask.end(), p.duration_frames, p.is_silence);
    return mask;
}

VarianceStats compute_stats(std::span<const StatsInput> corpus) {
    double f_sum = 0.0, f_sq = 0.0, e_sum = 0.0, e_sq = 0.0;
    std::size_t count = 0;
    // Two passes (mean, then centred squares) for accuracy.
    for (const auto& in : corpus) {
        if (in.silent.size() != in.track->size()) throw DimensionError("silence mask length differs from track");
        for (std::size_t t = 0; t < in.track->size(); ++t) {
            if (in.silent[t]) continue;
            f_sum += in.track->log_f0[t];
            e_sum += in.track->energy[t];
            ++count;
        }
    }
    if (count == 0) throw InsufficientDataError("variance statistics: no non-silent frames");
    VarianceStats s;
    s.log_f0_mean = f_sum / static_cast<double>(count);
    s.energy_mean = e_sum / static_cast<double>(count);
    for (const auto& in : corpus) {
        for (std::size_t t = 0; t < in.track->size(); ++t) {
            if (in.silent[t]) continue;
            f_sq += (in.track->log_f0[t] - s.log_f0_mean) * (in.track->log_f0[t] - s.log_f0_mean);
            e_sq += (in.track->energy[t] - s.energy_mean) * (in.track->energy[t] - s.energy_mean);
        }
    }
    s.log_f0_std = std::max(std::sqrt(f_sq / static_cast<double>(count)), kStdFloor);
    s.energy_std = std::max(std::sqrt(e_sq / static_cast<double>(count)), kStdFloor);
    return s;
}

VarianceTrack normalize(const VarianceTrack& track, const VarianceStats& stats) {
    VarianceTrack out = track;
    for (auto& v : out.log_f0) v = (v - stats.log_f0_mean) / stats.log_f0_std;
    for (auto& v : out.energy) v = (v - stats.energy_mean) / stats.energy_std;
    return out;
}

std::vector<std::uint32_t> AlignedUtterance::symbol_ids() const {
    std::vector<std::uint32_t> ids;
    for (const auto& p : phonemes) ids.push_back(p.symbol_id);
    return ids;
}

std::vector<std::uint32_t> AlignedUtterance::durations() const {
    std::vector<std::uint32_t> d;
    for (const auto& p : phonemes) d.push_back(p.duration_frames);
    return d;
}

std::vector<bool> AlignedUtterance::dummy_frame_mask() const {
    std::vector<bool> mask;
    for (const auto& p : phonemes) mask.insert(mask.end(), p.duration_frames, p.is_dummy);
    return mask;
}

void check_synchronized(const AlignedUtterance& utt) {
    std::size_t total = 0;
    for (const auto& p : utt.phonemes) {
        if (p.duration_frames < 1) throw AlignmentError(utt.id + ": phoneme with zero frames");
        total += p.duration_frames;
    }
    const std::size_t t = utt.tokens.frames;
    if (total != t || utt.variances.size() != t || utt.variances.energy.size() != t ||
        utt.variances.voiced.size() != t || utt.mel_aligned.rows != t) {
        throw AlignmentError(utt.id + ": frame counts disagree (durations " + std::to_string(total) +
                             ", tokens " + std::to_string(t) + ", variances " +
                             std::to_string(utt.variances.size()) + ", mel " +
                             std::to_string(utt.mel_aligned.rows) + ")");
    }
}

namespace {
constexpr char kCacheMagic[] = "RVQUTTR1";
constexpr std::uint32_t kCacheVersion = 1;
} // namespace

void save_aligned(const AlignedUtterance& utt, const std::filesystem::path& path) {
    check_synchronized(utt);
    binary::Writer w;
    w.bytes(std::string_view(kCacheMagic, 8));
    w.u32(kCacheVersion);
    w.str(utt.id);
    w.u32(static_cast<std::uint32_t>(utt.phonemes.size()));
    for (const auto& p : utt.phonemes) {
        w.u32(p.symbol_id);
        w.u32(p.duration_frames);
        w.u8(p.is_dummy);
        w.u8(p.is_silence);
    }
    const auto& g = utt.tokens;
    w.u32(static_cast<std::uint32_t>(g.num_quantizers));
    w.u32(static_cast<std::uint32_t>(g.frames));
    w.f64(g.frame_rate);
    for (auto v : g.indices) w.u32(v);
    const auto& v = utt.variances;
    w.f64(v.frame_rate);
    for (std::size_t t = 0; t < v.size(); ++t) {
        w.f64(v.log_f0[t]);
        w.u8(v.voiced[t]);
        w.f64(v.energy[t]);
    }
    w.u32(static_cast<std::uint32_t>(utt.mel_aligned.cols));
    for (double x : utt.mel_aligned.data) w.f64(x);
    w.save(path);
}

AlignedUtterance load_aligned(const std::filesystem::path& path) {
    auto r = binary::Reader::open(path);
    if (r.bytes(8) != std::string_view(kCacheMagic, 8)) throw FormatError(path.string() + ": not an utterance cache");
    if (r.u32() != kCacheVersion) throw FormatError(path.string() + ": unsupported cache version");
    AlignedUtterance u;
    u.id = r.str();
    const std::uint32_t n = r.u32();
    for (std::uint32_t i = 0; i < n; ++i) {
        PhonemeEntry p;
        p.symbol_id = r.u32();
        p.duration_frames = r.u32();
        p.is_dummy = r.u8() != 0;
        p.is_silence = r.u8() != 0;
        u.phonemes.push_back(p);
    }
    const std::uint32_t q = r.u32();
    const std::uint32_t t = r.u32();
    const double rate = r.f64();
    u.tokens = codec::TokenGrid(q, t, rate);
    for (auto& v : u.tokens.indices) v = r.u32();
    u.variances.frame_rate = r.f64();
    for (std::uint32_t i = 0; i < t; ++i) {
        u.variances.log_f0.push_back(r.f64());
        u.variances.voiced.push_back(r.u8() != 0);
        u.variances.energy.push_back(r.f64());
    }
    const std::uint32_t cols = r.u32();
    u.mel_aligned = Matrix(t, cols);
    for (double& x : u.mel_aligned.data) x = r.f64();
    if (r.remaining() != 0) throw FormatError(path.string() + ": trailing bytes");
    check_synchronized(u);
    return u;
}

} // namespace rvqtts::alignment
