#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace rvqtts {

inline constexpr std::string_view kSilenceSymbol = "sil";

// Ordered phoneme symbol table; a symbol's id is its position.
class Vocabulary {
public:
    Vocabulary() = default;
    explicit Vocabulary(std::vector<std::string> symbols);

    std::size_t size() const { return symbols_.size(); }
    const std::vector<std::string>& symbols() const { return symbols_; }
    const std::string& symbol(std::uint32_t id) const;
    // Throws IndexError for unknown symbols.
    std::uint32_t id_of(std::string_view symbol) const;
    bool is_silence(std::uint32_t id) const { return symbol(id) == kSilenceSymbol; }

    // Whitespace separated symbols; empty input gives an empty sequence.
    std::vector<std::uint32_t> parse(std::string_view text) const;

    void save(const std::filesystem::path& path) const;
    static Vocabulary load(const std::filesystem::path& path);

    bool operator==(const Vocabulary&) const = default;

private:
    std::vector<std::string> symbols_;
};

} // namespace rvqtts
