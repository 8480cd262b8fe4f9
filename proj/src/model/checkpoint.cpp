#include <cstring>

#include "rvqtts/binary_io.hpp"
#include "rvqtts/errors.hpp"
#include "rvqtts/model/acoustic_model.hpp"

namespace rvqtts::model {

namespace {

constexpr char kMagic[] = "RVQTTSCK";
constexpr std::uint32_t kVersion = 1;

void write_config(binary::Writer& w, const ModelConfig& c) {
    for (std::uint32_t v : {c.vocab_size, c.hidden_dim, c.encoder_blocks, c.decoder_blocks, c.attention_heads,
                            c.conv_kernel, c.ffn_dim, c.predictor_filter, c.postnet_channels, c.postnet_kernel,
                            c.num_quantizers, c.codebook_size, c.mel_channels}) {
        w.u32(v);
    }
    w.f64(c.dropout);
    w.u8(c.decoding_mode == DecodingMode::depthwise ? 0 : 1);
}

ModelConfig read_config(binary::Reader& r) {
    ModelConfig c;
    for (std::uint32_t* v : {&c.vocab_size, &c.hidden_dim, &c.encoder_blocks, &c.decoder_blocks, &c.attention_heads,
                             &c.conv_kernel, &c.ffn_dim, &c.predictor_filter, &c.postnet_channels, &c.postnet_kernel,
                             &c.num_quantizers, &c.codebook_size, &c.mel_channels}) {
        *v = r.u32();
    }
    c.dropout = r.f64();
    const auto mode = r.u8();
    if (mode > 1) throw FormatError("checkpoint: unknown decoding mode");
    c.decoding_mode = mode == 0 ? DecodingMode::depthwise : DecodingMode::parallel;
    return c;
}

} // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    binary::Writer w;
    w.bytes(std::string_view(kMagic, 8));
    w.u32(kVersion);
    write_config(w, ckpt.config);
    w.u64(ckpt.step);
    w.u32(static_cast<std::uint32_t>(ckpt.vocabulary.size()));
    for (const auto& s : ckpt.vocabulary.symbols()) w.str(s);
    const auto named = ckpt.params.named();
    w.u32(static_cast<std::uint32_t>(named.size()));
    for (const auto& [name, t] : named) {
        w.str(name);
        w.u32(static_cast<std::uint32_t>(t->rows()));
        w.u32(static_cast<std::uint32_t>(t->cols()));
        for (double v : t->data()) w.f64(v);
    }
    w.save(path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    auto r = binary::Reader::open(path);
    const std::string where = path.string();
    if (r.bytes(8) != std::string_view(kMagic, 8)) throw FormatError(where + ": not a model checkpoint");
    const auto version = r.u32();
    if (version != kVersion) throw FormatError(where + ": unsupported checkpoint version " + std::to_string(version));
    Checkpoint ckpt;
    ckpt.config = read_config(r);
    try {
        ckpt.config.validate();
    } catch (const ConfigError& e) {
        throw FormatError(where + ": " + e.what());
    }
    ckpt.step = r.u64();
    std::vector<std::string> symbols(r.u32());
    for (auto& s : symbols) s = r.str();
    ckpt.vocabulary = Vocabulary(std::move(symbols));
    ckpt.params = init_parameters(ckpt.config, 0);
    auto named = ckpt.params.named();
    if (r.u32() != named.size()) throw FormatError(where + ": parameter count does not match the config");
    for (auto& [name, t] : named) {
        const auto stored = r.str();
        if (stored != name) throw FormatError(where + ": expected tensor '" + name + "', found '" + stored + "'");
        const auto rows = r.u32(), cols = r.u32();
        if (rows != t->rows() || cols != t->cols()) throw FormatError(where + ": tensor '" + name + "' has wrong shape");
        auto dst = t->mutable_data();
        for (double& v : dst) v = r.f64();
    }
    if (r.remaining() != 0) throw FormatError(where + ": trailing bytes");
    return ckpt;
}

} // namespace rvqtts::model
