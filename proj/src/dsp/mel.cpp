#include "rvqtts/dsp/mel.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>

#include "rvqtts/dsp/fft.hpp"
#include "rvqtts/errors.hpp"

namespace rvqtts::dsp {

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

MelAnalyzer::MelAnalyzer(MelConfig config) : config_(config), window_(config.n_fft) {
    if (config_.channels == 0 || config_.hop == 0) throw ConfigError("mel: channels and hop must be positive");
    const std::size_t n = config_.n_fft;
    for (std::size_t i = 0; i < n; ++i) {
        window_[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
    }
    const std::size_t bins = n / 2 + 1;
    const double mel_lo = hz_to_mel(config_.fmin);
    const double mel_hi = hz_to_mel(config_.fmax);
    std::vector<double> edges(config_.channels + 2);
    for (std::size_t i = 0; i < edges.size(); ++i) {
        edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) /
                                          static_cast<double>(config_.channels + 1));
    }
    const double bin_hz = static_cast<double>(config_.sample_rate) / static_cast<double>(n);
    for (std::size_t m = 0; m < config_.channels; ++m) {
        const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
        std::size_t first = bins;
        std::vector<double> weights;
        for (std::size_t b = 0; b < bins; ++b) {
            const double f = static_cast<double>(b) * bin_hz;
            double w = 0.0;
            if (f > lo && f <= mid) w = (f - lo) / (mid - lo);
            else if (f > mid && f < hi) w = (hi - f) / (hi - mid);
            if (w <= 0.0) {
                if (first != bins) break;
                continue;
            }
            if (first == bins) first = b;
            weights.push_back(w);
        }
        // Narrow low filters may fall between bins; give them the nearest bin.
        if (weights.empty()) {
            first = std::min(bins - 1, static_cast<std::size_t>(std::lround(mid / bin_hz)));
            weights.push_back(1.0);
        }
        filters_.emplace_back(first, std::move(weights));
    }
}

Matrix MelAnalyzer::log_mel(std::span<const double> waveform, std::size_t frames) const {
    const std::size_t n = config_.n_fft;
    const long hop = config_.hop;
    Matrix out(frames, config_.channels);
    std::vector<std::complex<double>> buf(n);
    std::vector<double> mag(n / 2 + 1);
    const long len = static_cast<long>(waveform.size());
    for (std::size_t m = 0; m < frames; ++m) {
        const long centre = static_cast<long>(m) * hop + hop / 2;
        const long start = centre - static_cast<long>(n / 2);
        for (std::size_t i = 0; i < n; ++i) {
            const long src = start + static_cast<long>(i);
            const double s = (src >= 0 && src < len) ? waveform[src] : 0.0;
            buf[i] = {s * window_[i], 0.0};
        }
        fft(buf);
        for (std::size_t b = 0; b < mag.size(); ++b) mag[b] = std::abs(buf[b]);
        for (std::size_t c = 0; c < filters_.size(); ++c) {
            const auto& [first, w] = filters_[c];
            double e = 0.0;
            for (std::size_t k = 0; k < w.size(); ++k) e += w[k] * mag[first + k];
            out(m, c) = std::log(std::max(e, config_.floor));
        }
    }
    return out;
}

} // namespace rvqtts::dsp
