#include "rvqtts/vocabulary.hpp"

#include <fstream>
#include <sstream>

#include "rvqtts/errors.hpp"

namespace rvqtts {

Vocabulary::Vocabulary(std::vector<std::string> symbols) : symbols_(std::move(symbols)) {
    for (std::size_t i = 0; i < symbols_.size(); ++i) {
        for (std::size_t j = 0; j < i; ++j) {
            if (symbols_[i] == symbols_[j]) throw FormatError("duplicate phoneme symbol '" + symbols_[i] + "'");
        }
    }
}

const std::string& Vocabulary::symbol(std::uint32_t id) const {
    if (id >= symbols_.size()) throw IndexError("phoneme id " + std::to_string(id) + " outside vocabulary");
    return symbols_[id];
}

std::uint32_t Vocabulary::id_of(std::string_view symbol) const {
    for (std::size_t i = 0; i < symbols_.size(); ++i) {
        if (symbols_[i] == symbol) return static_cast<std::uint32_t>(i);
    }
    throw IndexError("unknown phoneme symbol '" + std::string(symbol) + "'");
}

std::vector<std::uint32_t> Vocabulary::parse(std::string_view text) const {
    std::istringstream in{std::string(text)};
    std::vector<std::uint32_t> ids;
    std::string tok;
    while (in >> tok) ids.push_back(id_of(tok));
    return ids;
}

void Vocabulary::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    for (const auto& s : symbols_) out << s << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<std::string> symbols;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty()) symbols.push_back(line);
    }
    return Vocabulary(std::move(symbols));
}

} // namespace rvqtts
