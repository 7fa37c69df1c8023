#pragma once

#include <complex>
#include <span>
#include <vector>

#include "mgvq/tensor.hpp"

namespace mgvq::fft {

using Complex = std::complex<double>;

// In-place unnormalised DFT of any length (radix-2, Bluestein otherwise).
// inverse=true uses the positive exponent and still does not scale.
void transform(std::vector<Complex>& data, bool inverse = false);

// First n/2+1 bins of the n-point DFT of x, zero-padded or truncated to n.
std::vector<Complex> rfft(std::span<const double> x, Index n);

// Real inverse of an n-point Hermitian spectrum given by its n/2+1 bins,
// scaled by 1/n.
std::vector<double> irfft(std::span<const Complex> bins, Index n);

}  // namespace mgvq::fft
