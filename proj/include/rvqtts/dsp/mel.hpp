#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "rvqtts/matrix.hpp"

namespace rvqtts::dsp {

// Log-magnitude mel front end shared by the training targets and MCD.
// The hop is 240 samples so that exactly eight mel frames tile one 1920-
// sample codec frame.
struct MelConfig {
    std::uint32_t sample_rate = 24000;
    std::uint32_t n_fft = 1024;
    std::uint32_t hop = 240;
    std::uint32_t channels = 80;
    double fmin = 0.0;
    double fmax = 12000.0;
    double floor = 1e-5;
};

class MelAnalyzer {
public:
    explicit MelAnalyzer(MelConfig config = {});

    const MelConfig& config() const { return config_; }

    // `frames` x channels log-mel matrix. Frame m is centred on the middle of
    // hop segment m, i.e. sample m*hop + hop/2; samples outside the signal
    // read as zero.
    Matrix log_mel(std::span<const double> waveform, std::size_t frames) const;

    // Frame count that tiles ceil(len / hop) hop segments.
    std::size_t frames_for(std::size_t samples) const { return (samples + config_.hop - 1) / config_.hop; }

private:
    MelConfig config_;
    std::vector<double> window_;
    // Triangular filters stored as (first bin, weights).
    std::vector<std::pair<std::size_t, std::vector<double>>> filters_;
};

double hz_to_mel(double hz);
double mel_to_hz(double mel);

} // namespace rvqtts::dsp
