#pragma once

// Little-endian serialisation helpers shared by the on-disk formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "rvqtts/errors.hpp"

namespace rvqtts::binary {

class Writer {
public:
    void bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
    void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void str(std::string_view s) {
        u32(static_cast<std::uint32_t>(s.size()));
        bytes(s);
    }

    const std::vector<char>& buffer() const { return buf_; }
    // Writes atomically enough for our purposes: whole buffer, then close.
    void save(const std::filesystem::path& path) const;

private:
    std::vector<char> buf_;
};

class Reader {
public:
    explicit Reader(std::vector<char> data, std::string name)
        : data_(std::move(data)), name_(std::move(name)) {}
    static Reader open(const std::filesystem::path& path);

    std::size_t remaining() const { return data_.size() - pos_; }
    std::string bytes(std::size_t n) {
        need(n);
        std::string s(data_.data() + pos_, n);
        pos_ += n;
        return s;
    }
    std::uint8_t u8() {
        need(1);
        return static_cast<std::uint8_t>(data_[pos_++]);
    }
    std::uint16_t u16() {
        need(2);
        const auto lo = static_cast<unsigned char>(data_[pos_]);
        const auto hi = static_cast<unsigned char>(data_[pos_ + 1]);
        pos_ += 2;
        return static_cast<std::uint16_t>(lo | (hi << 8));
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
        pos_ += 8;
        return v;
    }
    double f64() { return std::bit_cast<double>(u64()); }
    std::string str() { return bytes(u32()); }

private:
    void need(std::size_t n) const {
        if (remaining() < n) throw IoError(name_ + ": unexpected end of file");
    }

    std::vector<char> data_;
    std::string name_;
    std::size_t pos_ = 0;
};

} // namespace rvqtts::binary
