#include "rvqtts/numerics/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "rvqtts/errors.hpp"

namespace rvqtts::nn {

double max_relative_error(std::span<const double> analytic, std::span<const double> numeric) {
    if (analytic.size() != numeric.size()) {
        throw DimensionError("gradient lengths differ");
    }
    double worst = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        const double denom = std::max({std::abs(analytic[i]), std::abs(numeric[i]), 1e-8});
        worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / denom);
    }
    return worst;
}

std::vector<double> numeric_gradient(const std::function<double(std::span<const double>)>& f,
                                     std::span<const double> point, double epsilon) {
    if (!(epsilon > 0.0)) throw ContractError("finite differences need epsilon > 0");
    std::vector<double> x(point.begin(), point.end());
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = x[i];
        x[i] = orig + epsilon;
        const double up = f(x);
        x[i] = orig - epsilon;
        const double down = f(x);
        x[i] = orig;
        g[i] = (up - down) / (2.0 * epsilon);
    }
    return g;
}

double finite_diff_check(const std::function<double(std::span<const double>)>& f,
                         const std::function<std::vector<double>(std::span<const double>)>& grad,
                         std::span<const double> point, double epsilon) {
    auto analytic = grad(point);
    auto numeric = numeric_gradient(f, point, epsilon);
    return max_relative_error(analytic, numeric);
}

double finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& point,
                         double epsilon) {
    const std::size_t rows = point.rows(), cols = point.cols();
    auto value = [&](std::span<const double> x) {
        NoGradGuard guard;
        Tensor in = Tensor::from(rows, cols, {x.begin(), x.end()});
        return f(in).item();
    };
    auto grad = [&](std::span<const double> x) {
        Tensor in = Tensor::from(rows, cols, {x.begin(), x.end()}, true);
        Tensor out = f(in);
        backward(out);
        return in.grad();
    };
    return finite_diff_check(value, grad, point.data(), epsilon);
}

double spot_check(const std::function<Tensor()>& loss, Tensor& param,
                  std::span<const std::size_t> coords, double epsilon) {
    if (!(epsilon > 0.0)) throw ContractError("finite differences need epsilon > 0");
    param.zero_grad();
    backward(loss());
    const auto full = param.grad();
    std::vector<double> analytic, numeric;
    auto data = param.mutable_data();
    for (std::size_t c : coords) {
        if (c >= data.size()) throw IndexError("spot_check coordinate out of range");
        const double orig = data[c];
        double up, down;
        {
            NoGradGuard guard;
            data[c] = orig + epsilon;
            up = loss().item();
            data[c] = orig - epsilon;
            down = loss().item();
        }
        data[c] = orig;
        analytic.push_back(full[c]);
        numeric.push_back((up - down) / (2.0 * epsilon));
    }
    param.zero_grad();
    return max_relative_error(analytic, numeric);
}

} // namespace rvqtts::nn
