#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "rvqtts/numerics/tensor.hpp"

namespace rvqtts::nn {

// Linear algebra
Tensor matmul(const Tensor& a, const Tensor& b);
// a * b^T without materialising the transpose.
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// Elementwise
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
// a (R x C) plus a 1 x C row broadcast over every row.
Tensor add_row(const Tensor& a, const Tensor& row);
Tensor relu(const Tensor& a);
Tensor tanh(const Tensor& a);

// Reductions
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

// axis 1 normalises each row, axis 0 each column. Throws NumericError on
// non-finite input.
Tensor softmax(const Tensor& logits, int axis = 1);

// -log softmax(logits)[target] for a single-row logits tensor.
Tensor cross_entropy(const Tensor& logits, std::size_t target);
// Mean over rows r with keep[r] of -log softmax(row r)[targets[r]].
// An empty keep span keeps every row. Throws ContractError if nothing is kept.
Tensor cross_entropy_rows(const Tensor& logits, std::span<const std::uint32_t> targets,
                          std::span<const bool> keep = {});

// Row masked losses against a target of the same shape. Both arguments may
// carry gradients. The mean runs over kept rows times columns; returns 0
// when no row is kept.
Tensor mse_loss(const Tensor& pred, const Tensor& target, std::span<const bool> keep = {});
Tensor l1_loss(const Tensor& pred, const Tensor& target, std::span<const bool> keep = {});

// Per-row normalisation with learned gain (1 x C) and bias (1 x C).
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

// out[i] = table[indices[i]]; gradient scatter-adds back into table rows.
Tensor gather_rows(const Tensor& table, std::span<const std::uint32_t> indices);

// Same-padded 1-D convolution over time. x is T x Cin, weight is
// (K*Cin) x Cout with tap k occupying rows [k*Cin, (k+1)*Cin), bias 1 x Cout.
// K must be odd; tap k reads x[t + k - K/2].
Tensor conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias);

// Inverted dropout with a counter-based mask: element i is dropped iff
// hash(seed, counter, i) falls below p. Identity when !training or p == 0.
Tensor dropout(const Tensor& x, double p, std::uint64_t seed, std::uint64_t counter, bool training);

Tensor slice_cols(const Tensor& a, std::size_t start, std::size_t count);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor slice_rows(const Tensor& a, std::size_t start, std::size_t count);

struct AttentionWeights {
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
};

// Multi-head scaled dot-product self-attention over the rows of x (T x H).
Tensor self_attention(const Tensor& x, const AttentionWeights& w, std::size_t heads);

// Counter-based generator shared by dropout and initialisation.
std::uint64_t mix64(std::uint64_t x);
// Uniform in [0, 1) from (seed, stream, index).
double hash_uniform(std::uint64_t seed, std::uint64_t stream, std::uint64_t index);

} // namespace rvqtts::nn
