#include "rvqtts/dsp/fft.hpp"

#include <cmath>
#include <numbers>
#include <utility>

#include "rvqtts/errors.hpp"

namespace rvqtts::dsp {

void fft(std::vector<std::complex<double>>& buf) {
    const std::size_t n = buf.size();
    if (n == 0 || (n & (n - 1)) != 0) throw ContractError("fft size must be a power of two");
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(buf[i], buf[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = -2.0 * std::numbers::pi / static_cast<double>(len);
        const std::complex<double> wlen(std::cos(ang), std::sin(ang));
        for (std::size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (std::size_t k = 0; k < len / 2; ++k) {
                const auto u = buf[i + k];
                const auto v = buf[i + k + len / 2] * w;
                buf[i + k] = u + v;
                buf[i + k + len / 2] = u - v;
                w *= wlen;
            }
        }
    }
}

} // namespace rvqtts::dsp
