#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace rvqtts::codec {

struct Waveform {
    std::uint32_t sample_rate = 24000;
    std::vector<double> samples;
};

// ".wav" selects 16-bit PCM mono RIFF; ".f64" or ".raw" selects headerless
// little-endian 64-bit floats (sample rate is not stored and must be known).
Waveform read_waveform(const std::filesystem::path& path, std::uint32_t raw_sample_rate = 24000);
void write_waveform(const std::filesystem::path& path, const Waveform& wave);

// 16-bit quantisation used by the WAV writer (clips to [-1, 1]).
std::int16_t to_pcm16(double sample);

} // namespace rvqtts::codec
