#include "rvqtts/codec/audio_io.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "rvqtts/binary_io.hpp"

namespace rvqtts::codec {

namespace {

enum class Container { Wav, Raw };

Container container_for(const std::filesystem::path& path) {
    auto ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".wav") return Container::Wav;
    if (ext == ".f64" || ext == ".raw") return Container::Raw;
    throw FormatError(path.string() + ": unknown audio extension (expected .wav, .f64 or .raw)");
}

Waveform read_wav(const std::filesystem::path& path) {
    auto r = binary::Reader::open(path);
    if (r.bytes(4) != "RIFF") throw FormatError(path.string() + ": missing RIFF header");
    r.u32();
    if (r.bytes(4) != "WAVE") throw FormatError(path.string() + ": not a WAVE file");
    Waveform w;
    bool have_fmt = false;
    while (r.remaining() >= 8) {
        const std::string id = r.bytes(4);
        const std::uint32_t size = r.u32();
        if (id == "fmt ") {
            if (size < 16 || size > r.remaining()) throw FormatError(path.string() + ": bad fmt chunk");
            const std::uint16_t tag = r.u16();
            const std::uint16_t channels = r.u16();
            w.sample_rate = r.u32();
            r.u32(); // byte rate
            r.u16(); // block align
            const std::uint16_t bits = r.u16();
            if (tag != 1 || channels != 1 || bits != 16) {
                throw FormatError(path.string() + ": only 16-bit PCM mono WAV is supported");
            }
            r.bytes(size - 16 + (size & 1));
            have_fmt = true;
            continue;
        }
        if (id == "data") {
            if (!have_fmt) throw FormatError(path.string() + ": data chunk before fmt chunk");
            if (size > r.remaining()) throw IoError(path.string() + ": truncated data chunk");
            w.samples.resize(size / 2);
            for (auto& s : w.samples) {
                const auto lo = r.u8();
                const auto hi = r.u8();
                const auto v = static_cast<std::int16_t>(static_cast<std::uint16_t>(lo | (hi << 8)));
                s = static_cast<double>(v) / 32768.0;
            }
            return w;
        }
        if (size > r.remaining()) throw IoError(path.string() + ": truncated chunk");
        r.bytes(size + (size & 1));
    }
    throw FormatError(path.string() + ": no data chunk");
}

} // namespace

std::int16_t to_pcm16(double sample) {
    const double clipped = std::clamp(sample, -1.0, 1.0);
    return static_cast<std::int16_t>(std::lround(std::min(clipped * 32768.0, 32767.0)));
}

Waveform read_waveform(const std::filesystem::path& path, std::uint32_t raw_sample_rate) {
    if (container_for(path) == Container::Wav) return read_wav(path);
    auto r = binary::Reader::open(path);
    if (r.remaining() % 8 != 0) throw FormatError(path.string() + ": raw float file length not a multiple of 8");
    Waveform w;
    w.sample_rate = raw_sample_rate;
    w.samples.resize(r.remaining() / 8);
    for (auto& s : w.samples) s = r.f64();
    return w;
}

void write_waveform(const std::filesystem::path& path, const Waveform& wave) {
    binary::Writer w;
    if (container_for(path) == Container::Raw) {
        for (double s : wave.samples) w.f64(s);
        w.save(path);
        return;
    }
    const auto data_bytes = static_cast<std::uint32_t>(wave.samples.size() * 2);
    w.bytes("RIFF");
    w.u32(36 + data_bytes);
    w.bytes("WAVE");
    w.bytes("fmt ");
    w.u32(16);
    w.u32(1u | (1u << 16)); // PCM, mono
    w.u32(wave.sample_rate);
    w.u32(wave.sample_rate * 2);
    w.u32(2u | (16u << 16)); // block align, bits per sample
    w.bytes("data");
    w.u32(data_bytes);
    for (double s : wave.samples) {
        const auto v = static_cast<std::uint16_t>(to_pcm16(s));
        w.u8(static_cast<std::uint8_t>(v & 0xff));
        w.u8(static_cast<std::uint8_t>(v >> 8));
    }
    w.save(path);
}

} // namespace rvqtts::codec
