#pragma once

#include <functional>
#include <span>
#include <vector>

#include "rvqtts/numerics/tensor.hpp"

namespace rvqtts::nn {

// Elementwise comparison with denominator max(|a|, |n|, 1e-8).
double max_relative_error(std::span<const double> analytic, std::span<const double> numeric);

// Central differences of a scalar function at a point.
std::vector<double> numeric_gradient(const std::function<double(std::span<const double>)>& f,
                                     std::span<const double> point, double epsilon);

// Compares a supplied analytic gradient against central differences.
double finite_diff_check(const std::function<double(std::span<const double>)>& f,
                         const std::function<std::vector<double>(std::span<const double>)>& grad,
                         std::span<const double> point, double epsilon);

// Tape-driven variant: f maps a leaf tensor to a scalar tensor; the analytic
// gradient comes from backward().
double finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& point,
                         double epsilon);

// Spot check of d loss / d param at selected flat coordinates. The loss
// closure must rebuild its graph from the current parameter values on
// every call. The parameter is restored afterwards.
double spot_check(const std::function<Tensor()>& loss, Tensor& param,
                  std::span<const std::size_t> coords, double epsilon);

} // namespace rvqtts::nn
