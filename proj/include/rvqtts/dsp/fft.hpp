#pragma once

#include <complex>
#include <vector>

namespace rvqtts::dsp {

// In-place iterative radix-2 FFT; size must be a power of two.
void fft(std::vector<std::complex<double>>& buf);

} // namespace rvqtts::dsp
