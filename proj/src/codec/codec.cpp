#include "rvqtts/codec/codec.hpp"

#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <random>

#include "rvqtts/binary_io.hpp"

namespace rvqtts::codec {

namespace {

constexpr char kMagic[] = "RVQCBOOK";
constexpr std::uint32_t kVersion = 1;

// Orthonormal DCT-II basis, first D rows of the N x N transform.
struct DctBasis {
    std::size_t n = 0;
    std::size_t d = 0;
    std::vector<double> table; // d x n

    DctBasis(std::size_t n_, std::size_t d_) : n(n_), d(d_), table(d_ * n_) {
        const double s0 = std::sqrt(1.0 / static_cast<double>(n));
        const double sk = std::sqrt(2.0 / static_cast<double>(n));
        for (std::size_t k = 0; k < d; ++k) {
            const double s = k == 0 ? s0 : sk;
            for (std::size_t i = 0; i < n; ++i) {
                table[k * n + i] = s * std::cos(std::numbers::pi * (static_cast<double>(i) + 0.5) *
                                                static_cast<double>(k) / static_cast<double>(n));
            }
        }
    }
};

std::shared_ptr<const DctBasis> basis_for(std::size_t n, std::size_t d) {
    static std::mutex mu;
    static std::map<std::pair<std::size_t, std::size_t>, std::shared_ptr<const DctBasis>> cache;
    std::lock_guard lock(mu);
    auto& slot = cache[{n, d}];
    if (!slot) slot = std::make_shared<const DctBasis>(n, d);
    return slot;
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

// 53-bit uniform in [0, 1), independent of the standard library's distributions.
double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

void check_tokens(const TokenGrid& tokens, const RvqCodebookSet& codebooks, std::size_t depth) {
    const std::size_t v = codebooks.config.codebook_size;
    for (std::size_t q = 0; q < depth; ++q) {
        for (std::size_t t = 0; t < tokens.frames; ++t) {
            if (tokens.at(q, t) >= v) {
                throw CorruptTokenError("token " + std::to_string(tokens.at(q, t)) + " at layer " +
                                        std::to_string(q) + " frame " + std::to_string(t) +
                                        " exceeds codebook size " + std::to_string(v));
            }
        }
    }
}

} // namespace

void CodecConfig::validate() const {
    if (sample_rate == 0 || hop == 0) throw ConfigError("codec: sample rate and hop must be positive");
    if (feature_dim == 0 || feature_dim > hop) throw ConfigError("codec: feature_dim must lie in [1, hop]");
    if (num_quantizers < 1) throw ConfigError("codec: need at least one quantizer");
    if (codebook_size < 1) throw ConfigError("codec: codebook size must be at least 1");
}

TokenGrid TokenGrid::slice(std::size_t start, std::size_t count) const {
    if (start + count > frames) throw ContractError("token slice exceeds grid");
    TokenGrid out(num_quantizers, count, frame_rate);
    for (std::size_t q = 0; q < num_quantizers; ++q)
        for (std::size_t t = 0; t < count; ++t) out.at(q, t) = at(q, start + t);
    return out;
}

Matrix analyze(std::span<const double> waveform, const CodecConfig& config) {
    const std::size_t hop = config.hop, d = config.feature_dim;
    const std::size_t frames = (waveform.size() + hop - 1) / hop;
    Matrix out(frames, d);
    if (frames == 0) return out;
    auto basis = basis_for(hop, d);
    std::vector<double> buf(hop);
    for (std::size_t t = 0; t < frames; ++t) {
        const std::size_t start = t * hop;
        const std::size_t avail = std::min(hop, waveform.size() - start);
        std::fill(buf.begin(), buf.end(), 0.0);
        std::copy_n(waveform.data() + start, avail, buf.begin());
        for (std::size_t k = 0; k < d; ++k) {
            const double* b = basis->table.data() + k * hop;
            double s = 0.0;
            for (std::size_t i = 0; i < hop; ++i) s += b[i] * buf[i];
            out(t, k) = s;
        }
    }
    return out;
}

std::vector<double> synthesize(const Matrix& features, const CodecConfig& config) {
    const std::size_t hop = config.hop, d = config.feature_dim;
    if (features.rows > 0 && features.cols != d) {
        throw DimensionError("synthesize: features have " + std::to_string(features.cols) +
                             " coefficients, codec expects " + std::to_string(d));
    }
    std::vector<double> out(features.rows * hop, 0.0);
    if (features.rows == 0) return out;
    auto basis = basis_for(hop, d);
    for (std::size_t t = 0; t < features.rows; ++t) {
        double* dst = out.data() + t * hop;
        for (std::size_t k = 0; k < d; ++k) {
            const double c = features(t, k);
            if (c == 0.0) continue;
            const double* b = basis->table.data() + k * hop;
            for (std::size_t i = 0; i < hop; ++i) dst[i] += c * b[i];
        }
    }
    return out;
}

std::uint32_t nearest_codevector(const Matrix& codebook, std::span<const double> v) {
    std::uint32_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < codebook.rows; ++i) {
        const double dist = squared_distance(codebook.row(i), v);
        if (dist < best_d) {
            best_d = dist;
            best = static_cast<std::uint32_t>(i);
        }
    }
    return best;
}

Matrix kmeans(const Matrix& points, std::size_t k, const KMeansOptions& options, bool pin_zero) {
    const std::size_t n = points.rows, dim = points.cols;
    if (k == 0) throw ContractError("kmeans: need at least one cluster");
    if (n < k) {
        throw InsufficientDataError("kmeans: " + std::to_string(n) + " points cannot fill " +
                                    std::to_string(k) + " clusters");
    }
    if (options.iterations < 1) throw ContractError("kmeans: need at least one iteration");

    std::mt19937_64 rng(options.seed);
    Matrix centers(k, dim);
    std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
    auto absorb = [&](std::size_t c) {
        for (std::size_t i = 0; i < n; ++i)
            nearest[i] = std::min(nearest[i], squared_distance(points.row(i), centers.row(c)));
    };

    // k-means++ seeding.
    std::size_t first = 0;
    if (pin_zero) {
        absorb(0);
        first = 1;
    } else {
        const auto pick = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n));
        std::copy_n(points.row(pick).begin(), dim, centers.row(0).begin());
        absorb(0);
        first = 1;
    }
    for (std::size_t c = first; c < k; ++c) {
        double total = 0.0;
        for (double d : nearest) total += d;
        std::size_t pick = 0;
        if (total > 0.0) {
            const double target = uniform01(rng) * total;
            double acc = 0.0;
            pick = n - 1;
            for (std::size_t i = 0; i < n; ++i) {
                acc += nearest[i];
                if (acc > target && nearest[i] > 0.0) {
                    pick = i;
                    break;
                }
            }
        } else {
            pick = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n));
        }
        std::copy_n(points.row(pick).begin(), dim, centers.row(c).begin());
        absorb(c);
    }

    // Lloyd iterations.
    std::vector<std::uint32_t> assign(n);
    std::vector<double> dist(n);
    std::vector<std::size_t> counts(k);
    for (std::size_t it = 0; it < options.iterations; ++it) {
        for (std::size_t i = 0; i < n; ++i) {
            assign[i] = nearest_codevector(centers, points.row(i));
            dist[i] = squared_distance(points.row(i), centers.row(assign[i]));
        }
        Matrix sums(k, dim);
        std::fill(counts.begin(), counts.end(), 0);
        for (std::size_t i = 0; i < n; ++i) {
            auto dst = sums.row(assign[i]);
            auto src = points.row(i);
            for (std::size_t j = 0; j < dim; ++j) dst[j] += src[j];
            ++counts[assign[i]];
        }
        for (std::size_t c = pin_zero ? 1 : 0; c < k; ++c) {
            if (counts[c] > 0) {
                for (std::size_t j = 0; j < dim; ++j)
                    centers(c, j) = sums(c, j) / static_cast<double>(counts[c]);
                continue;
            }
            // Empty cluster: move it onto the point worst served so far.
            std::size_t far = 0;
            for (std::size_t i = 1; i < n; ++i)
                if (dist[i] > dist[far]) far = i;
            std::copy_n(points.row(far).begin(), dim, centers.row(c).begin());
            dist[far] = 0.0;
        }
    }
    return centers;
}

RvqCodebookSet train_rvq(const Matrix& frames, const CodecConfig& config, const KMeansOptions& options) {
    config.validate();
    if (frames.cols != config.feature_dim) {
        throw DimensionError("train_rvq: frames have dimension " + std::to_string(frames.cols) +
                             ", codec expects " + std::to_string(config.feature_dim));
    }
    if (frames.rows < config.codebook_size) {
        throw InsufficientDataError("train_rvq: " + std::to_string(frames.rows) +
                                    " frames for codebook size " + std::to_string(config.codebook_size));
    }
    RvqCodebookSet set;
    set.config = config;
    Matrix residual = frames;
    for (std::size_t q = 0; q < config.num_quantizers; ++q) {
        KMeansOptions layer_opts = options;
        layer_opts.seed = options.seed * 0x9e3779b97f4a7c15ULL + q;
        Matrix cb = kmeans(residual, config.codebook_size, layer_opts, q > 0);
        for (std::size_t i = 0; i < residual.rows; ++i) {
            auto r = residual.row(i);
            auto c = cb.row(nearest_codevector(cb, r));
            for (std::size_t j = 0; j < r.size(); ++j) r[j] -= c[j];
        }
        set.codebooks.push_back(std::move(cb));
    }
    return set;
}

TokenGrid encode(const Matrix& frames, const RvqCodebookSet& codebooks) {
    const auto& cfg = codebooks.config;
    if (frames.rows > 0 && frames.cols != cfg.feature_dim) {
        throw DimensionError("encode: frames have dimension " + std::to_string(frames.cols) +
                             ", codebooks expect " + std::to_string(cfg.feature_dim));
    }
    TokenGrid grid(codebooks.codebooks.size(), frames.rows, cfg.frame_rate());
    std::vector<double> r(cfg.feature_dim);
    for (std::size_t t = 0; t < frames.rows; ++t) {
        std::copy_n(frames.row(t).begin(), r.size(), r.begin());
        for (std::size_t q = 0; q < codebooks.codebooks.size(); ++q) {
            const auto& cb = codebooks.codebooks[q];
            const std::uint32_t idx = nearest_codevector(cb, r);
            grid.at(q, t) = idx;
            auto c = cb.row(idx);
            for (std::size_t j = 0; j < r.size(); ++j) r[j] -= c[j];
        }
    }
    return grid;
}

std::vector<double> residual_energy_by_layer(const Matrix& frames, const RvqCodebookSet& codebooks) {
    const std::size_t q_count = codebooks.codebooks.size();
    std::vector<double> energy(q_count, 0.0);
    if (frames.rows == 0) return energy;
    TokenGrid grid = encode(frames, codebooks);
    std::vector<double> r(frames.cols);
    for (std::size_t t = 0; t < frames.rows; ++t) {
        std::copy_n(frames.row(t).begin(), r.size(), r.begin());
        for (std::size_t q = 0; q < q_count; ++q) {
            auto c = codebooks.codebooks[q].row(grid.at(q, t));
            double e = 0.0;
            for (std::size_t j = 0; j < r.size(); ++j) {
                r[j] -= c[j];
                e += r[j] * r[j];
            }
            energy[q] += e;
        }
    }
    for (double& e : energy) e /= static_cast<double>(frames.rows);
    return energy;
}

Matrix dequantize(const TokenGrid& tokens, const RvqCodebookSet& codebooks, std::optional<std::size_t> depth) {
    const std::size_t q_count = codebooks.codebooks.size();
    const std::size_t use = depth.value_or(q_count);
    if (use > q_count || use > tokens.num_quantizers) {
        throw ContractError("decode depth " + std::to_string(use) + " exceeds available layers");
    }
    check_tokens(tokens, codebooks, use);
    const std::size_t dim = codebooks.config.feature_dim;
    Matrix features(tokens.frames, dim);
    for (std::size_t t = 0; t < tokens.frames; ++t) {
        auto dst = features.row(t);
        for (std::size_t q = 0; q < use; ++q) {
            auto c = codebooks.codebooks[q].row(tokens.at(q, t));
            for (std::size_t j = 0; j < dim; ++j) dst[j] += c[j];
        }
    }
    return features;
}

std::vector<double> decode_tokens(const TokenGrid& tokens, const RvqCodebookSet& codebooks,
                                  std::optional<std::size_t> depth) {
    return synthesize(dequantize(tokens, codebooks, depth), codebooks.config);
}

void save_codebooks(const RvqCodebookSet& set, const std::filesystem::path& path) {
    const auto& c = set.config;
    if (set.codebooks.size() != c.num_quantizers) throw ContractError("codebook count disagrees with config");
    binary::Writer w;
    w.bytes(std::string_view(kMagic, 8));
    w.u32(kVersion);
    w.u32(c.num_quantizers);
    w.u32(c.codebook_size);
    w.u32(c.feature_dim);
    w.u32(c.sample_rate);
    w.u32(c.hop);
    for (const auto& cb : set.codebooks) {
        if (cb.rows != c.codebook_size || cb.cols != c.feature_dim) {
            throw ContractError("codebook shape disagrees with config");
        }
        for (double v : cb.data) w.f64(v);
    }
    w.save(path);
}

RvqCodebookSet load_codebooks(const std::filesystem::path& path) {
    auto r = binary::Reader::open(path);
    if (r.bytes(8) != std::string_view(kMagic, 8)) throw FormatError(path.string() + ": not a codebook file");
    const std::uint32_t version = r.u32();
    if (version != kVersion) {
        throw FormatError(path.string() + ": unsupported codebook version " + std::to_string(version));
    }
    RvqCodebookSet set;
    auto& c = set.config;
    c.num_quantizers = r.u32();
    c.codebook_size = r.u32();
    c.feature_dim = r.u32();
    c.sample_rate = r.u32();
    c.hop = r.u32();
    try {
        c.validate();
    } catch (const ConfigError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
    const std::uint64_t expected = std::uint64_t{c.num_quantizers} * c.codebook_size * c.feature_dim * 8;
    if (r.remaining() != expected) {
        throw FormatError(path.string() + ": payload holds " + std::to_string(r.remaining()) +
                          " bytes, header declares " + std::to_string(expected));
    }
    for (std::size_t q = 0; q < c.num_quantizers; ++q) {
        Matrix cb(c.codebook_size, c.feature_dim);
        for (double& v : cb.data) v = r.f64();
        set.codebooks.push_back(std::move(cb));
    }
    return set;
}

} // namespace rvqtts::codec
