#include "rvqtts/numerics/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "rvqtts/errors.hpp"

namespace rvqtts::nn {

namespace {

using Backward = std::function<void(Node&)>;

Tensor make_result(Shape shape, std::vector<double> value, std::vector<Tensor> inputs,
                   const char* op, Backward fn) {
    auto n = std::make_shared<Node>();
    n->shape = shape;
    n->value = std::move(value);
    n->op = op;
    bool needs = false;
    if (grad_enabled()) {
        for (const auto& in : inputs) needs = needs || in.requires_grad();
    }
    if (needs) {
        n->requires_grad = true;
        for (auto& in : inputs) n->parents.push_back(in.node_ptr());
        n->backward_fn = std::move(fn);
    }
    return Tensor::wrap(std::move(n));
}

Node& parent(Node& self, std::size_t i) { return *self.parents[i]; }

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a.shape()) +
                             " vs " + to_string(b.shape()));
    }
}

void require_finite(std::span<const double> v, const char* op) {
    for (double x : v) {
        if (!std::isfinite(x)) throw NumericError(std::string(op) + ": non-finite input");
    }
}

bool kept(std::span<const bool> keep, std::size_t r) { return keep.empty() || keep[r]; }

void check_keep(std::span<const bool> keep, std::size_t rows, const char* op) {
    if (!keep.empty() && keep.size() != rows) {
        throw DimensionError(std::string(op) + ": mask length " + std::to_string(keep.size()) +
                             " does not match " + std::to_string(rows) + " rows");
    }
}

// c[m x n] += a[m x k] * b[k x n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = c + i * n;
        const double* arow = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            const double* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// c[m x n] += a[m x k] * b[n x k]^T
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            const double* brow = b + j * k;
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
            c[i * n + j] += s;
        }
    }
}

// c[k x n] += a[m x k]^T * b[m x n]
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        const double* brow = b + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            double* crow = c + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

template <typename F, typename D>
Tensor unary(const Tensor& a, const char* op, F f, D dfdx) {
    std::vector<double> out(a.size());
    auto in = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
    return make_result(a.shape(), std::move(out), {a}, op, [dfdx](Node& self) {
        Node& x = parent(self, 0);
        if (!x.requires_grad) return;
        auto& gx = x.grad_buffer();
        for (std::size_t i = 0; i < gx.size(); ++i) {
            gx[i] += self.grad[i] * dfdx(x.value[i], self.value[i]);
        }
    });
}

} // namespace

std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

double hash_uniform(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
    std::uint64_t h = mix64(seed ^ mix64(stream ^ mix64(index)));
    return static_cast<double>(h >> 11) * 0x1.0p-53;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.rows()) {
        throw DimensionError("matmul: inner dimensions differ " + to_string(a.shape()) + " x " +
                             to_string(b.shape()));
    }
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    std::vector<double> out(m * n, 0.0);
    gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
    return make_result({m, n}, std::move(out), {a, b}, "matmul", [m, k, n](Node& self) {
        Node& A = parent(self, 0);
        Node& B = parent(self, 1);
        if (A.requires_grad) gemm_nt(self.grad.data(), B.value.data(), A.grad_buffer().data(), m, n, k);
        if (B.requires_grad) gemm_tn(A.value.data(), self.grad.data(), B.grad_buffer().data(), m, k, n);
    });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.cols()) {
        throw DimensionError("matmul_nt: inner dimensions differ " + to_string(a.shape()) +
                             " x " + to_string(b.shape()) + "^T");
    }
    const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
    std::vector<double> out(m * n, 0.0);
    gemm_nt(a.data().data(), b.data().data(), out.data(), m, k, n);
    return make_result({m, n}, std::move(out), {a, b}, "matmul_nt", [m, k, n](Node& self) {
        Node& A = parent(self, 0);
        Node& B = parent(self, 1);
        // dA = dC * B, dB = dC^T * A
        if (A.requires_grad) gemm_nn(self.grad.data(), B.value.data(), A.grad_buffer().data(), m, n, k);
        if (B.requires_grad) gemm_tn(self.grad.data(), A.value.data(), B.grad_buffer().data(), m, n, k);
    });
}

Tensor transpose(const Tensor& a) {
    const std::size_t r = a.rows(), c = a.cols();
    std::vector<double> out(a.size());
    auto in = a.data();
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = in[i * c + j];
    return make_result({c, r}, std::move(out), {a}, "transpose", [r, c](Node& self) {
        Node& A = parent(self, 0);
        auto& g = A.grad_buffer();
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j * r + i];
    });
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    std::vector<double> out(a.size());
    auto x = a.data(), y = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
    return make_result(a.shape(), std::move(out), {a, b}, "add", [](Node& self) {
        for (std::size_t p = 0; p < 2; ++p) {
            Node& in = parent(self, p);
            if (!in.requires_grad) continue;
            auto& g = in.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    std::vector<double> out(a.size());
    auto x = a.data(), y = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
    return make_result(a.shape(), std::move(out), {a, b}, "sub", [](Node& self) {
        Node& A = parent(self, 0);
        Node& B = parent(self, 1);
        if (A.requires_grad) {
            auto& g = A.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (B.requires_grad) {
            auto& g = B.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    std::vector<double> out(a.size());
    auto x = a.data(), y = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
    return make_result(a.shape(), std::move(out), {a, b}, "mul", [](Node& self) {
        Node& A = parent(self, 0);
        Node& B = parent(self, 1);
        if (A.requires_grad) {
            auto& g = A.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * B.value[i];
        }
        if (B.requires_grad) {
            auto& g = B.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * A.value[i];
        }
    });
}

Tensor scale(const Tensor& a, double s) {
    return unary(a, "scale", [s](double x) { return x * s; }, [s](double, double) { return s; });
}

Tensor add_row(const Tensor& a, const Tensor& row) {
    if (row.rows() != 1 || row.cols() != a.cols()) {
        throw DimensionError("add_row: row " + to_string(row.shape()) + " does not broadcast over " +
                             to_string(a.shape()));
    }
    const std::size_t r = a.rows(), c = a.cols();
    std::vector<double> out(a.size());
    auto x = a.data(), b = row.data();
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] = x[i * c + j] + b[j];
    return make_result(a.shape(), std::move(out), {a, row}, "add_row", [r, c](Node& self) {
        Node& A = parent(self, 0);
        Node& B = parent(self, 1);
        if (A.requires_grad) {
            auto& g = A.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (B.requires_grad) {
            auto& g = B.grad_buffer();
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) g[j] += self.grad[i * c + j];
        }
    });
}

Tensor relu(const Tensor& a) {
    return unary(a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
                 [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor tanh(const Tensor& a) {
    return unary(a, "tanh", [](double x) { return std::tanh(x); },
                 [](double, double y) { return 1.0 - y * y; });
}

Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (double x : a.data()) s += x;
    return make_result({1, 1}, {s}, {a}, "sum", [](Node& self) {
        Node& A = parent(self, 0);
        auto& g = A.grad_buffer();
        for (auto& v : g) v += self.grad[0];
    });
}

Tensor mean(const Tensor& a) {
    if (a.size() == 0) throw ContractError("mean of an empty tensor");
    return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Tensor softmax(const Tensor& logits, int axis) {
    if (axis != 0 && axis != 1) throw ContractError("softmax: axis must be 0 or 1");
    require_finite(logits.data(), "softmax");
    const std::size_t r = logits.rows(), c = logits.cols();
    // Walk "lines" along the axis: stride and count depend on the axis.
    const std::size_t lines = axis == 1 ? r : c;
    const std::size_t len = axis == 1 ? c : r;
    const std::size_t line_step = axis == 1 ? c : 1;
    const std::size_t elem_step = axis == 1 ? 1 : c;
    std::vector<double> out(logits.size());
    auto x = logits.data();
    for (std::size_t l = 0; l < lines; ++l) {
        const std::size_t base = l * line_step;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t e = 0; e < len; ++e) mx = std::max(mx, x[base + e * elem_step]);
        double z = 0.0;
        for (std::size_t e = 0; e < len; ++e) {
            double v = std::exp(x[base + e * elem_step] - mx);
            out[base + e * elem_step] = v;
            z += v;
        }
        for (std::size_t e = 0; e < len; ++e) out[base + e * elem_step] /= z;
    }
    return make_result(logits.shape(), std::move(out), {logits}, "softmax",
                       [lines, len, line_step, elem_step](Node& self) {
                           Node& X = parent(self, 0);
                           auto& g = X.grad_buffer();
                           for (std::size_t l = 0; l < lines; ++l) {
                               const std::size_t base = l * line_step;
                               double dot = 0.0;
                               for (std::size_t e = 0; e < len; ++e) {
                                   const std::size_t i = base + e * elem_step;
                                   dot += self.grad[i] * self.value[i];
                               }
                               for (std::size_t e = 0; e < len; ++e) {
                                   const std::size_t i = base + e * elem_step;
                                   g[i] += self.value[i] * (self.grad[i] - dot);
                               }
                           }
                       });
}

Tensor cross_entropy(const Tensor& logits, std::size_t target) {
    if (logits.rows() != 1) throw DimensionError("cross_entropy: expects a single row of logits");
    const std::uint32_t t = static_cast<std::uint32_t>(target);
    if (target >= logits.cols()) {
        throw IndexError("cross_entropy: target " + std::to_string(target) + " outside width " +
                         std::to_string(logits.cols()));
    }
    return cross_entropy_rows(logits, std::span<const std::uint32_t>(&t, 1));
}

Tensor cross_entropy_rows(const Tensor& logits, std::span<const std::uint32_t> targets,
                          std::span<const bool> keep) {
    const std::size_t r = logits.rows(), c = logits.cols();
    if (targets.size() != r) {
        throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                             std::to_string(r) + " rows");
    }
    check_keep(keep, r, "cross_entropy");
    require_finite(logits.data(), "cross_entropy");
    auto x = logits.data();
    std::vector<double> probs(logits.size(), 0.0);
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < r; ++i) {
        if (!kept(keep, i)) continue;
        if (targets[i] >= c) {
            throw IndexError("cross_entropy: target " + std::to_string(targets[i]) +
                             " outside width " + std::to_string(c));
        }
        const double* row = x.data() + i * c;
        double mx = *std::max_element(row, row + c);
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            double e = std::exp(row[j] - mx);
            probs[i * c + j] = e;
            z += e;
        }
        for (std::size_t j = 0; j < c; ++j) probs[i * c + j] /= z;
        total += -(row[targets[i]] - mx - std::log(z));
        ++count;
    }
    if (count == 0) throw ContractError("cross_entropy: every row is masked");
    const double inv = 1.0 / static_cast<double>(count);
    std::vector<std::uint32_t> tg(targets.begin(), targets.end());
    std::vector<bool> kp(keep.begin(), keep.end());
    return make_result({1, 1}, {total * inv}, {logits}, "cross_entropy",
                       [probs = std::move(probs), tg = std::move(tg), kp = std::move(kp), r, c,
                        inv](Node& self) {
                           Node& X = parent(self, 0);
                           auto& g = X.grad_buffer();
                           const double s = self.grad[0] * inv;
                           for (std::size_t i = 0; i < r; ++i) {
                               if (!kp.empty() && !kp[i]) continue;
                               for (std::size_t j = 0; j < c; ++j) g[i * c + j] += s * probs[i * c + j];
                               g[i * c + tg[i]] -= s;
                           }
                       });
}

namespace {

template <typename Elem, typename Deriv>
Tensor masked_pointwise_loss(const Tensor& pred, const Tensor& target, std::span<const bool> keep,
                             const char* op, Elem elem, Deriv deriv) {
    require_same_shape(pred, target, op);
    check_keep(keep, pred.rows(), op);
    const std::size_t r = pred.rows(), c = pred.cols();
    auto p = pred.data(), t = target.data();
    double total = 0.0;
    std::size_t rows_kept = 0;
    for (std::size_t i = 0; i < r; ++i) {
        if (!kept(keep, i)) continue;
        ++rows_kept;
        for (std::size_t j = 0; j < c; ++j) total += elem(p[i * c + j] - t[i * c + j]);
    }
    const double inv = rows_kept == 0 || c == 0 ? 0.0 : 1.0 / static_cast<double>(rows_kept * c);
    std::vector<bool> kp(keep.begin(), keep.end());
    return make_result({1, 1}, {total * inv}, {pred, target}, op,
                       [kp = std::move(kp), r, c, inv, deriv](Node& self) {
                           Node& P = parent(self, 0);
                           Node& T = parent(self, 1);
                           const double s = self.grad[0] * inv;
                           std::vector<double>* gp = P.requires_grad ? &P.grad_buffer() : nullptr;
                           std::vector<double>* gt = T.requires_grad ? &T.grad_buffer() : nullptr;
                           for (std::size_t i = 0; i < r; ++i) {
                               if (!kp.empty() && !kp[i]) continue;
                               for (std::size_t j = 0; j < c; ++j) {
                                   const std::size_t k = i * c + j;
                                   const double d = s * deriv(P.value[k] - T.value[k]);
                                   if (gp) (*gp)[k] += d;
                                   if (gt) (*gt)[k] -= d;
                               }
                           }
                       });
}

} // namespace

Tensor mse_loss(const Tensor& pred, const Tensor& target, std::span<const bool> keep) {
    return masked_pointwise_loss(
        pred, target, keep, "mse_loss", [](double d) { return d * d; },
        [](double d) { return 2.0 * d; });
}

Tensor l1_loss(const Tensor& pred, const Tensor& target, std::span<const bool> keep) {
    return masked_pointwise_loss(
        pred, target, keep, "l1_loss", [](double d) { return std::abs(d); },
        [](double d) { return d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0); });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    const std::size_t r = x.rows(), c = x.cols();
    if (gamma.rows() != 1 || gamma.cols() != c || beta.shape() != gamma.shape()) {
        throw DimensionError("layer_norm: gain/bias must be 1x" + std::to_string(c));
    }
    auto in = x.data(), g = gamma.data(), b = beta.data();
    std::vector<double> out(x.size()), xhat(x.size()), inv_std(r);
    for (std::size_t i = 0; i < r; ++i) {
        const double* row = in.data() + i * c;
        double mu = 0.0;
        for (std::size_t j = 0; j < c; ++j) mu += row[j];
        mu /= static_cast<double>(c);
        double var = 0.0;
        for (std::size_t j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= static_cast<double>(c);
        inv_std[i] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < c; ++j) {
            xhat[i * c + j] = (row[j] - mu) * inv_std[i];
            out[i * c + j] = xhat[i * c + j] * g[j] + b[j];
        }
    }
    return make_result(x.shape(), std::move(out), {x, gamma, beta}, "layer_norm",
                       [xhat = std::move(xhat), inv_std = std::move(inv_std), r, c](Node& self) {
                           Node& X = parent(self, 0);
                           Node& G = parent(self, 1);
                           Node& B = parent(self, 2);
                           if (G.requires_grad) {
                               auto& gg = G.grad_buffer();
                               for (std::size_t i = 0; i < r; ++i)
                                   for (std::size_t j = 0; j < c; ++j)
                                       gg[j] += self.grad[i * c + j] * xhat[i * c + j];
                           }
                           if (B.requires_grad) {
                               auto& gb = B.grad_buffer();
                               for (std::size_t i = 0; i < r; ++i)
                                   for (std::size_t j = 0; j < c; ++j) gb[j] += self.grad[i * c + j];
                           }
                           if (!X.requires_grad) return;
                           auto& gx = X.grad_buffer();
                           std::vector<double> dxhat(c);
                           for (std::size_t i = 0; i < r; ++i) {
                               double m1 = 0.0, m2 = 0.0;
                               for (std::size_t j = 0; j < c; ++j) {
                                   dxhat[j] = self.grad[i * c + j] * G.value[j];
                                   m1 += dxhat[j];
                                   m2 += dxhat[j] * xhat[i * c + j];
                               }
                               m1 /= static_cast<double>(c);
                               m2 /= static_cast<double>(c);
                               for (std::size_t j = 0; j < c; ++j) {
                                   gx[i * c + j] += inv_std[i] * (dxhat[j] - m1 - xhat[i * c + j] * m2);
                               }
                           }
                       });
}

Tensor gather_rows(const Tensor& table, std::span<const std::uint32_t> indices) {
    const std::size_t c = table.cols();
    std::vector<double> out(indices.size() * c);
    auto src = table.data();
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= table.rows()) {
            throw IndexError("gather_rows: index " + std::to_string(indices[i]) +
                             " outside table of " + std::to_string(table.rows()) + " rows");
        }
        std::copy_n(src.data() + indices[i] * c, c, out.data() + i * c);
    }
    std::vector<std::uint32_t> idx(indices.begin(), indices.end());
    return make_result({indices.size(), c}, std::move(out), {table}, "gather_rows",
                       [idx = std::move(idx), c](Node& self) {
                           Node& T = parent(self, 0);
                           auto& g = T.grad_buffer();
                           for (std::size_t i = 0; i < idx.size(); ++i)
                               for (std::size_t j = 0; j < c; ++j)
                                   g[idx[i] * c + j] += self.grad[i * c + j];
                       });
}

Tensor conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    const std::size_t t_len = x.rows(), cin = x.cols();
    if (cin == 0 || weight.rows() % cin != 0) {
        throw DimensionError("conv1d: weight rows " + std::to_string(weight.rows()) +
                             " not a multiple of input channels " + std::to_string(cin));
    }
    const std::size_t k = weight.rows() / cin;
    if (k % 2 == 0) throw ContractError("conv1d: kernel size must be odd");
    const std::size_t cout = weight.cols();
    if (bias.rows() != 1 || bias.cols() != cout) throw DimensionError("conv1d: bias must be 1xCout");
    const std::size_t half = k / 2;
    const std::size_t width = k * cin;
    std::vector<double> col(t_len * width, 0.0);
    auto in = x.data();
    for (std::size_t t = 0; t < t_len; ++t) {
        for (std::size_t tap = 0; tap < k; ++tap) {
            const long src = static_cast<long>(t + tap) - static_cast<long>(half);
            if (src < 0 || src >= static_cast<long>(t_len)) continue;
            std::copy_n(in.data() + src * cin, cin, col.data() + t * width + tap * cin);
        }
    }
    std::vector<double> out(t_len * cout);
    auto b = bias.data();
    for (std::size_t t = 0; t < t_len; ++t) std::copy(b.begin(), b.end(), out.begin() + t * cout);
    gemm_nn(col.data(), weight.data().data(), out.data(), t_len, width, cout);
    return make_result({t_len, cout}, std::move(out), {x, weight, bias}, "conv1d",
                       [col = std::move(col), t_len, cin, k, half, width, cout](Node& self) {
                           Node& X = parent(self, 0);
                           Node& W = parent(self, 1);
                           Node& B = parent(self, 2);
                           if (W.requires_grad)
                               gemm_tn(col.data(), self.grad.data(), W.grad_buffer().data(), t_len,
                                       width, cout);
                           if (B.requires_grad) {
                               auto& gb = B.grad_buffer();
                               for (std::size_t t = 0; t < t_len; ++t)
                                   for (std::size_t j = 0; j < cout; ++j) gb[j] += self.grad[t * cout + j];
                           }
                           if (!X.requires_grad) return;
                           std::vector<double> dcol(t_len * width, 0.0);
                           gemm_nt(self.grad.data(), W.value.data(), dcol.data(), t_len, cout, width);
                           auto& gx = X.grad_buffer();
                           for (std::size_t t = 0; t < t_len; ++t) {
                               for (std::size_t tap = 0; tap < k; ++tap) {
                                   const long src = static_cast<long>(t + tap) - static_cast<long>(half);
                                   if (src < 0 || src >= static_cast<long>(t_len)) continue;
                                   const double* d = dcol.data() + t * width + tap * cin;
                                   double* gxr = gx.data() + src * cin;
                                   for (std::size_t j = 0; j < cin; ++j) gxr[j] += d[j];
                               }
                           }
                       });
}

Tensor dropout(const Tensor& x, double p, std::uint64_t seed, std::uint64_t counter, bool training) {
    if (p < 0.0 || p >= 1.0) throw ContractError("dropout: p must lie in [0, 1)");
    if (!training || p == 0.0) return x;
    const double keep_scale = 1.0 / (1.0 - p);
    std::vector<double> mask(x.size());
    for (std::size_t i = 0; i < mask.size(); ++i) {
        mask[i] = hash_uniform(seed, counter, i) < p ? 0.0 : keep_scale;
    }
    std::vector<double> out(x.size());
    auto in = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = in[i] * mask[i];
    return make_result(x.shape(), std::move(out), {x}, "dropout",
                       [mask = std::move(mask)](Node& self) {
                           Node& X = parent(self, 0);
                           auto& g = X.grad_buffer();
                           for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * mask[i];
                       });
}

Tensor slice_cols(const Tensor& a, std::size_t start, std::size_t count) {
    const std::size_t r = a.rows(), c = a.cols();
    if (start + count > c) throw DimensionError("slice_cols: range exceeds " + to_string(a.shape()));
    std::vector<double> out(r * count);
    auto in = a.data();
    for (std::size_t i = 0; i < r; ++i)
        std::copy_n(in.data() + i * c + start, count, out.data() + i * count);
    return make_result({r, count}, std::move(out), {a}, "slice_cols", [r, c, start, count](Node& self) {
        Node& A = parent(self, 0);
        auto& g = A.grad_buffer();
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < count; ++j) g[i * c + start + j] += self.grad[i * count + j];
    });
}

Tensor slice_rows(const Tensor& a, std::size_t start, std::size_t count) {
    const std::size_t c = a.cols();
    if (start + count > a.rows()) throw DimensionError("slice_rows: range exceeds " + to_string(a.shape()));
    auto in = a.data();
    std::vector<double> out(in.begin() + start * c, in.begin() + (start + count) * c);
    return make_result({count, c}, std::move(out), {a}, "slice_rows", [start, c](Node& self) {
        Node& A = parent(self, 0);
        auto& g = A.grad_buffer();
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[start * c + i] += self.grad[i];
    });
}

Tensor concat_cols(std::span<const Tensor> parts) {
    if (parts.empty()) throw ContractError("concat_cols: nothing to concatenate");
    const std::size_t r = parts[0].rows();
    std::size_t c = 0;
    std::vector<std::size_t> offsets;
    for (const auto& p : parts) {
        if (p.rows() != r) throw DimensionError("concat_cols: row counts differ");
        offsets.push_back(c);
        c += p.cols();
    }
    std::vector<double> out(r * c);
    for (std::size_t k = 0; k < parts.size(); ++k) {
        auto in = parts[k].data();
        const std::size_t w = parts[k].cols();
        for (std::size_t i = 0; i < r; ++i) std::copy_n(in.data() + i * w, w, out.data() + i * c + offsets[k]);
    }
    std::vector<Tensor> inputs(parts.begin(), parts.end());
    return make_result({r, c}, std::move(out), inputs, "concat_cols", [offsets, r, c](Node& self) {
        for (std::size_t k = 0; k < self.parents.size(); ++k) {
            Node& P = parent(self, k);
            if (!P.requires_grad) continue;
            const std::size_t w = P.shape.cols;
            auto& g = P.grad_buffer();
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < w; ++j) g[i * w + j] += self.grad[i * c + offsets[k] + j];
        }
    });
}

Tensor concat_rows(std::span<const Tensor> parts) {
    if (parts.empty()) throw ContractError("concat_rows: nothing to concatenate");
    const std::size_t c = parts[0].cols();
    std::size_t r = 0;
    std::vector<std::size_t> offsets;
    for (const auto& p : parts) {
        if (p.cols() != c) throw DimensionError("concat_rows: column counts differ");
        offsets.push_back(r * c);
        r += p.rows();
    }
    std::vector<double> out;
    out.reserve(r * c);
    for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
    std::vector<Tensor> inputs(parts.begin(), parts.end());
    return make_result({r, c}, std::move(out), inputs, "concat_rows", [offsets](Node& self) {
        for (std::size_t k = 0; k < self.parents.size(); ++k) {
            Node& P = parent(self, k);
            if (!P.requires_grad) continue;
            auto& g = P.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[offsets[k] + i];
        }
    });
}

Tensor self_attention(const Tensor& x, const AttentionWeights& w, std::size_t heads) {
    const std::size_t h = x.cols();
    if (heads == 0 || h % heads != 0) {
        throw ContractError("self_attention: width " + std::to_string(h) + " not divisible by " +
                            std::to_string(heads) + " heads");
    }
    const std::size_t dh = h / heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    Tensor q = add_row(matmul(x, w.wq), w.bq);
    Tensor k = add_row(matmul(x, w.wk), w.bk);
    Tensor v = add_row(matmul(x, w.wv), w.bv);
    std::vector<Tensor> outs;
    outs.reserve(heads);
    for (std::size_t i = 0; i < heads; ++i) {
        Tensor qh = heads == 1 ? q : slice_cols(q, i * dh, dh);
        Tensor kh = heads == 1 ? k : slice_cols(k, i * dh, dh);
        Tensor vh = heads == 1 ? v : slice_cols(v, i * dh, dh);
        Tensor att = softmax(scale(matmul_nt(qh, kh), inv_sqrt), 1);
        outs.push_back(matmul(att, vh));
    }
    Tensor merged = heads == 1 ? outs[0] : concat_cols(outs);
    return add_row(matmul(merged, w.wo), w.bo);
}

} // namespace rvqtts::nn
