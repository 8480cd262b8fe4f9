#pragma once

// Finite-difference sweep over every differentiable op. Each op is probed
// through a random linear read-out so that no gradient is trivially zero.

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "rvqtts/numerics/gradcheck.hpp"
#include "rvqtts/numerics/ops.hpp"

namespace rvqtts::testing {

using nn::Tensor;

inline Tensor random_tensor(std::mt19937_64& rng, std::size_t r, std::size_t c, double scale = 1.0,
                            bool requires_grad = false) {
    std::normal_distribution<double> n(0.0, scale);
    std::vector<double> v(r * c);
    for (auto& x : v) x = n(rng);
    return Tensor::from(r, c, std::move(v), requires_grad);
}

// Values bounded away from zero so kinks stay outside the difference stencil.
inline Tensor away_from_zero(std::mt19937_64& rng, std::size_t r, std::size_t c) {
    std::uniform_real_distribution<double> u(0.1, 1.5);
    std::bernoulli_distribution sign(0.5);
    std::vector<double> v(r * c);
    for (auto& x : v) x = sign(rng) ? u(rng) : -u(rng);
    return Tensor::from(r, c, std::move(v));
}

inline Tensor readout(const Tensor& y, const Tensor& w) { return nn::sum(nn::mul(y, w)); }

struct GradCase {
    std::string name;
    // Builds a probe for one trial: the point and the scalar function of it.
    std::function<std::pair<Tensor, std::function<Tensor(const Tensor&)>>(std::mt19937_64&)> make;
};

inline std::vector<GradCase> op_grad_cases() {
    std::vector<GradCase> cases;
    auto unary = [&](std::string name, std::size_t r, std::size_t c, std::function<Tensor(const Tensor&)> op,
                     bool kinked = false) {
        cases.push_back({name, [=](std::mt19937_64& rng) {
                             Tensor x = kinked ? away_from_zero(rng, r, c) : random_tensor(rng, r, c);
                             Tensor probe = op(x.detach());
                             Tensor w = random_tensor(rng, probe.rows(), probe.cols());
                             return std::pair{x, std::function<Tensor(const Tensor&)>(
                                                     [=](const Tensor& p) { return readout(op(p), w); })};
                         }});
    };
    auto scalar_valued = [&](std::string name, std::size_t r, std::size_t c,
                             std::function<Tensor(const Tensor&)> op) {
        cases.push_back({name, [=](std::mt19937_64& rng) {
                             Tensor x = random_tensor(rng, r, c);
                             return std::pair{x, op};
                         }});
    };

    // Binary ops are checked in each argument with the other held fixed.
    auto binary = [&](std::string name, std::size_t ar, std::size_t ac, std::size_t br, std::size_t bc,
                      std::function<Tensor(const Tensor&, const Tensor&)> op) {
        cases.push_back({name + "/lhs", [=](std::mt19937_64& rng) {
                             Tensor a = random_tensor(rng, ar, ac);
                             Tensor b = random_tensor(rng, br, bc);
                             Tensor probe = op(a, b);
                             Tensor w = random_tensor(rng, probe.rows(), probe.cols());
                             return std::pair{a, std::function<Tensor(const Tensor&)>(
                                                     [=](const Tensor& p) { return readout(op(p, b), w); })};
                         }});
        cases.push_back({name + "/rhs", [=](std::mt19937_64& rng) {
                             Tensor a = random_tensor(rng, ar, ac);
                             Tensor b = random_tensor(rng, br, bc);
                             Tensor probe = op(a, b);
                             Tensor w = random_tensor(rng, probe.rows(), probe.cols());
                             return std::pair{b, std::function<Tensor(const Tensor&)>(
                                                     [=](const Tensor& p) { return readout(op(a, p), w); })};
                         }});
    };

    binary("matmul", 3, 4, 4, 2, [](const Tensor& a, const Tensor& b) { return nn::matmul(a, b); });
    binary("matmul_nt", 3, 4, 5, 4, [](const Tensor& a, const Tensor& b) { return nn::matmul_nt(a, b); });
    binary("add", 3, 4, 3, 4, [](const Tensor& a, const Tensor& b) { return nn::add(a, b); });
    binary("sub", 3, 4, 3, 4, [](const Tensor& a, const Tensor& b) { return nn::sub(a, b); });
    binary("mul", 3, 4, 3, 4, [](const Tensor& a, const Tensor& b) { return nn::mul(a, b); });
    binary("add_row", 3, 4, 1, 4, [](const Tensor& a, const Tensor& b) { return nn::add_row(a, b); });
    binary("mse_loss", 4, 3, 4, 3, [](const Tensor& a, const Tensor& b) {
        const bool keep[] = {true, false, true, true};
        return nn::mse_loss(a, b, keep);
    });

    unary("transpose", 3, 5, [](const Tensor& x) { return nn::transpose(x); });
    unary("scale", 3, 4, [](const Tensor& x) { return nn::scale(x, -1.7); });
    unary("relu", 4, 5, [](const Tensor& x) { return nn::relu(x); }, true);
    unary("tanh", 4, 5, [](const Tensor& x) { return nn::tanh(x); });
    unary("softmax/rows", 3, 6, [](const Tensor& x) { return nn::softmax(x, 1); });
    unary("softmax/cols", 5, 3, [](const Tensor& x) { return nn::softmax(x, 0); });
    unary("slice_cols", 3, 6, [](const Tensor& x) { return nn::slice_cols(x, 2, 3); });
    unary("slice_rows", 6, 3, [](const Tensor& x) { return nn::slice_rows(x, 1, 4); });
    unary("concat_cols", 3, 2, [](const Tensor& x) {
        const Tensor parts[] = {x, nn::scale(x, 2.0), x};
        return nn::concat_cols(parts);
    });
    unary("concat_rows", 2, 3, [](const Tensor& x) {
        const Tensor parts[] = {x, nn::tanh(x)};
        return nn::concat_rows(parts);
    });
    unary("dropout", 6, 5, [](const Tensor& x) { return nn::dropout(x, 0.3, 7, 11, true); });
    scalar_valued("sum", 3, 4, [](const Tensor& x) { return nn::sum(nn::mul(x, x)); });
    scalar_valued("mean", 3, 4, [](const Tensor& x) { return nn::mean(nn::tanh(x)); });
    scalar_valued("cross_entropy", 1, 7, [](const Tensor& x) { return nn::cross_entropy(x, 3); });
    scalar_valued("cross_entropy_rows", 4, 6, [](const Tensor& x) {
        const std::uint32_t targets[] = {0, 5, 2, 2};
        const bool keep[] = {true, true, false, true};
        return nn::cross_entropy_rows(x, targets, keep);
    });

    cases.push_back({"l1_loss", [](std::mt19937_64& rng) {
                         Tensor t = random_tensor(rng, 4, 3);
                         Tensor d = away_from_zero(rng, 4, 3);
                         Tensor x = nn::add(t, d).detach();
                         return std::pair{x, std::function<Tensor(const Tensor&)>(
                                                 [=](const Tensor& p) { return nn::l1_loss(p, t); })};
                     }});

    cases.push_back({"layer_norm/x", [](std::mt19937_64& rng) {
                         Tensor g = random_tensor(rng, 1, 5), b = random_tensor(rng, 1, 5);
                         Tensor w = random_tensor(rng, 3, 5);
                         return std::pair{random_tensor(rng, 3, 5), std::function<Tensor(const Tensor&)>(
                                                                        [=](const Tensor& p) {
                                                                            return readout(nn::layer_norm(p, g, b), w);
                                                                        })};
                     }});
    cases.push_back({"layer_norm/gamma", [](std::mt19937_64& rng) {
                         Tensor x = random_tensor(rng, 3, 5), b = random_tensor(rng, 1, 5);
                         Tensor w = random_tensor(rng, 3, 5);
                         return std::pair{random_tensor(rng, 1, 5), std::function<Tensor(const Tensor&)>(
                                                                        [=](const Tensor& p) {
                                                                            return readout(nn::layer_norm(x, p, b), w);
                                                                        })};
                     }});
    cases.push_back({"layer_norm/beta", [](std::mt19937_64& rng) {
                         Tensor x = random_tensor(rng, 3, 5), g = random_tensor(rng, 1, 5);
                         Tensor w = random_tensor(rng, 3, 5);
                         return std::pair{random_tensor(rng, 1, 5), std::function<Tensor(const Tensor&)>(
                                                                        [=](const Tensor& p) {
                                                                            return readout(nn::layer_norm(x, g, p), w);
                                                                        })};
                     }});
    cases.push_back({"gather_rows", [](std::mt19937_64& rng) {
                         Tensor w = random_tensor(rng, 5, 3);
                         return std::pair{random_tensor(rng, 4, 3), std::function<Tensor(const Tensor&)>(
                                                                        [=](const Tensor& p) {
                                                                            const std::uint32_t idx[] = {2, 0, 2, 3, 2};
                                                                            return readout(nn::gather_rows(p, idx), w);
                                                                        })};
                     }});

    for (int arg = 0; arg < 3; ++arg) {
        static const char* names[] = {"conv1d/x", "conv1d/weight", "conv1d/bias"};
        cases.push_back({names[arg], [arg](std::mt19937_64& rng) {
                             Tensor x = random_tensor(rng, 6, 2), wt = random_tensor(rng, 3 * 2, 4),
                                    b = random_tensor(rng, 1, 4), w = random_tensor(rng, 6, 4);
                             Tensor point = arg == 0 ? x : arg == 1 ? wt : b;
                             return std::pair{point, std::function<Tensor(const Tensor&)>([=](const Tensor& p) {
                                                  return readout(nn::conv1d(arg == 0 ? p : x, arg == 1 ? p : wt,
                                                                            arg == 2 ? p : b),
                                                                 w);
                                              })};
                         }});
    }

    for (int arg = 0; arg < 9; ++arg) {
        static const char* names[] = {"attention/x",  "attention/wq", "attention/bq",
                                      "attention/wk", "attention/bk", "attention/wv",
                                      "attention/bv", "attention/wo", "attention/bo"};
        // A shared key bias cancels inside the softmax; its gradient is zero
        // and is checked separately.
        if (arg == 4) continue;
        cases.push_back({names[arg], [arg](std::mt19937_64& rng) {
                             const std::size_t t = 4, h = 4;
                             std::vector<Tensor> ins;
                             ins.push_back(random_tensor(rng, t, h));
                             for (int k = 0; k < 4; ++k) {
                                 ins.push_back(random_tensor(rng, h, h, 0.5));
                                 ins.push_back(random_tensor(rng, 1, h, 0.5));
                             }
                             Tensor w = random_tensor(rng, t, h);
                             Tensor point = ins[static_cast<std::size_t>(arg)];
                             return std::pair{point, std::function<Tensor(const Tensor&)>([=](const Tensor& p) {
                                                  auto v = ins;
                                                  v[static_cast<std::size_t>(arg)] = p;
                                                  nn::AttentionWeights aw{v[1], v[2], v[3], v[4],
                                                                          v[5], v[6], v[7], v[8]};
                                                  return readout(nn::self_attention(v[0], aw, 2), w);
                                              })};
                         }});
    }
    return cases;
}

// Absolute gradient of the attention output with respect to the key bias.
inline double key_bias_gradient_magnitude(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const std::size_t t = 5, h = 4;
    Tensor x = random_tensor(rng, t, h);
    nn::AttentionWeights aw{random_tensor(rng, h, h), random_tensor(rng, 1, h), random_tensor(rng, h, h),
                            random_tensor(rng, 1, h, 1.0, true), random_tensor(rng, h, h), random_tensor(rng, 1, h),
                            random_tensor(rng, h, h), random_tensor(rng, 1, h)};
    nn::backward(readout(nn::self_attention(x, aw, 2), random_tensor(rng, t, h)));
    double worst = 0.0;
    for (double g : aw.bk.grad()) worst = std::max(worst, std::abs(g));
    return worst;
}

struct GradResult {
    std::string name;
    double worst = 0.0;
    int trials = 0;
};

inline std::vector<GradResult> run_op_grad_suite(int trials, double epsilon = 1e-6) {
    std::vector<GradResult> out;
    for (const auto& c : op_grad_cases()) {
        GradResult r{c.name, 0.0, trials};
        for (int s = 0; s < trials; ++s) {
            std::mt19937_64 rng(1000 + static_cast<std::uint64_t>(s));
            auto [point, f] = c.make(rng);
            r.worst = std::max(r.worst, nn::finite_diff_check(f, point, epsilon));
        }
        out.push_back(r);
    }
    return out;
}

} // namespace rvqtts::testing
