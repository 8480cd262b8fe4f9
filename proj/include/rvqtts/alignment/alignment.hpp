#pragma once

// Frame-exact training targets at the codec frame rate: integer durations
// with one-frame placeholders for sub-frame phonemes, pooled mel targets,
// and pitch/energy tracks resampled onto the codec grid.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "rvqtts/codec/codec.hpp"
#include "rvqtts/matrix.hpp"

namespace rvqtts::alignment {

struct PhonemeEntry {
    std::uint32_t symbol_id = 0;
    std::uint32_t duration_frames = 1;
    bool is_dummy = false;
    bool is_silence = false;

    bool operator==(const PhonemeEntry&) const = default;
};

struct FrameAllocation {
    std::uint32_t frames = 1;
    bool is_dummy = false;

    bool operator==(const FrameAllocation&) const = default;
};

// Rounds each duration to the frame grid, clamps zero-frame entries to one
// frame (flagged dummy) and reconciles the total with a largest-remainder
// pass over the non-dummy entries. The result always sums to total_frames
// and every entry is at least one frame.
std::vector<FrameAllocation> durations_to_frames(std::span<const double> seconds, double frame_rate,
                                                 std::size_t total_frames);

// Row t of the result is the mean of rows [t*k, (t+1)*k). A ragged tail is
// padded by repeating the final row.
Matrix pool_mel(const Matrix& mel_high, int k);

struct YinOptions {
    double fmin = 50.0;
    double fmax = 500.0;
    double threshold = 0.3;
};

struct F0Track {
    double frame_rate = 12.5;
    std::vector<double> f0_hz; // 0 on unvoiced frames
    std::vector<bool> voiced;

    std::size_t size() const { return f0_hz.size(); }
};

// YIN over one window of 1/frame_rate seconds centred on each frame.
F0Track extract_f0(std::span<const double> waveform, std::uint32_t sample_rate, double frame_rate,
                   const YinOptions& options = {});

// Cumulative-mean-normalised difference d'(tau) for tau in [0, max_lag] of a
// single window. Every lag sums over the same window.size() - max_lag
// products.
std::vector<double> cumulative_mean_normalized_difference(std::span<const double> window,
                                                          std::size_t max_lag);

struct EnergyTrack {
    double frame_rate = 12.5;
    std::vector<double> rms;
};

// RMS of each 1/frame_rate-second frame (a ragged tail is zero padded).
EnergyTrack extract_energy(std::span<const double> waveform, std::uint32_t sample_rate, double frame_rate);

struct VarianceTrack {
    double frame_rate = 12.5;
    std::vector<double> log_f0;
    std::vector<bool> voiced;
    std::vector<double> energy;

    std::size_t size() const { return log_f0.size(); }
    bool operator==(const VarianceTrack&) const = default;
};

inline constexpr double kUnvoicedFallbackHz = 150.0;

// Converts F0 to natural log, fills unvoiced gaps by linear interpolation
// between flanking voiced frames (edges held), then resamples everything
// to target_frames frames at target_rate (linear for values, nearest
// neighbour for the voiced flags). Frame centres are aligned.
VarianceTrack build_variance_track(const F0Track& f0, const EnergyTrack& energy, double target_rate,
                                   std::size_t target_frames);

struct VarianceStats {
    double log_f0_mean = 0.0;
    double log_f0_std = 1.0;
    double energy_mean = 0.0;
    double energy_std = 1.0;

    bool operator==(const VarianceStats&) const = default;
};

inline constexpr double kStdFloor = 1e-6;

// Per-frame silence flags from regulated phoneme entries.
std::vector<bool> silence_mask(std::span<const PhonemeEntry> phonemes);

struct StatsInput {
    const VarianceTrack* track = nullptr;
    std::vector<bool> silent; // one per frame
};

// Mean and standard deviation over every non-silent frame of the corpus.
VarianceStats compute_stats(std::span<const StatsInput> corpus);

VarianceTrack normalize(const VarianceTrack& track, const VarianceStats& stats);

struct AlignedUtterance {
    std::string id;
    std::vector<PhonemeEntry> phonemes;
    codec::TokenGrid tokens;
    VarianceTrack variances;
    Matrix mel_aligned; // T x 80
    Matrix mel_high;    // 8T x 80, not persisted in the cache

    std::size_t frames() const { return tokens.frames; }
    std::vector<std::uint32_t> symbol_ids() const;
    std::vector<std::uint32_t> durations() const;
    // One flag per frame: true where the frame belongs to a dummy phoneme.
    std::vector<bool> dummy_frame_mask() const;
};

// Checks the one-to-one synchronisation invariant; throws AlignmentError.
void check_synchronized(const AlignedUtterance& utt);

void save_aligned(const AlignedUtterance& utt, const std::filesystem::path& path);
AlignedUtterance load_aligned(const std::filesystem::path& path);

} // namespace rvqtts::alignment
