#include "mgvq/fft.hpp"

#include <cmath>
#include <map>
#include <memory>

#include "mgvq/error.hpp"

namespace mgvq::fft {

namespace {

bool is_pow2(std::size_t n) { return n && !(n & (n - 1)); }

struct Radix2Plan {
  std::vector<std::size_t> bitrev;
  std::vector<Complex> twiddle;  // exp(-2*pi*i*k/n), k < n/2
};

const Radix2Plan& radix2_plan(std::size_t n) {
  thread_local std::map<std::size_t, std::unique_ptr<Radix2Plan>> cache;
  auto& slot = cache[n];
  if (!slot) {
    slot = std::make_unique<Radix2Plan>();
    slot->bitrev.resize(n);
    std::size_t bits = 0;
    while ((std::size_t{1} << bits) < n) ++bits;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t r = 0;
      for (std::size_t b = 0; b < bits; ++b) r |= ((i >> b) & 1u) << (bits - 1 - b);
      slot->bitrev[i] = r;
    }
    slot->twiddle.resize(n / 2);
    for (std::size_t k = 0; k < n / 2; ++k) {
      const double a = -2.0 * M_PI * static_cast<double>(k) / static_cast<double>(n);
      slot->twiddle[k] = {std::cos(a), std::sin(a)};
    }
  }
  return *slot;
}

void radix2(std::vector<Complex>& a, bool inverse) {
  const std::size_t n = a.size();
  if (n <= 1) return;
  const auto& plan = radix2_plan(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (i < plan.bitrev[i]) std::swap(a[i], a[plan.bitrev[i]]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const std::size_t half = len / 2;
    const std::size_t step = n / len;
    for (std::size_t i = 0; i < n; i += len) {
      for (std::size_t j = 0; j < half; ++j) {
        Complex w = plan.twiddle[j * step];
        if (inverse) w = std::conj(w);
        const Complex u = a[i + j];
        const Complex v = a[i + j + half] * w;
        a[i + j] = u + v;
        a[i + j + half] = u - v;
      }
    }
  }
}

void bluestein(std::vector<Complex>& a, bool inverse) {
  const std::size_t n = a.size();
  std::size_t m = 1;
  while (m < 2 * n - 1) m <<= 1;
  const double sign = inverse ? 1.0 : -1.0;
  std::vector<Complex> chirp(n);
  for (std::size_t k = 0; k < n; ++k) {
    // k^2 mod 2n keeps the angle argument small for large n.
    const std::size_t k2 = (k * k) % (2 * n);
    const double ang = sign * M_PI * static_cast<double>(k2) / static_cast<double>(n);
    chirp[k] = {std::cos(ang), std::sin(ang)};
  }
  std::vector<Complex> u(m), v(m);
  for (std::size_t k = 0; k < n; ++k) u[k] = a[k] * chirp[k];
  v[0] = std::conj(chirp[0]);
  for (std::size_t k = 1; k < n; ++k) v[k] = v[m - k] = std::conj(chirp[k]);
  radix2(u, false);
  radix2(v, false);
  for (std::size_t i = 0; i < m; ++i) u[i] *= v[i];
  radix2(u, true);
  const double inv_m = 1.0 / static_cast<double>(m);
  for (std::size_t k = 0; k < n; ++k) a[k] = u[k] * inv_m * chirp[k];
}

}  // namespace

void transform(std::vector<Complex>& data, bool inverse) {
  if (data.size() <= 1) return;
  if (is_pow2(data.size())) {
    radix2(data, inverse);
  } else {
    bluestein(data, inverse);
  }
}

std::vector<Complex> rfft(std::span<const double> x, Index n) {
  if (n < 1) throw InvalidArgument("rfft: size must be positive");
  std::vector<Complex> buf(static_cast<std::size_t>(n));
  const std::size_t m = std::min(x.size(), buf.size());
  for (std::size_t i = 0; i < m; ++i) buf[i] = x[i];
  transform(buf, false);
  buf.resize(static_cast<std::size_t>(n / 2 + 1));
  return buf;
}

std::vector<double> irfft(std::span<const Complex> bins, Index n) {
  if (static_cast<Index>(bins.size()) != n / 2 + 1) throw InvalidArgument("irfft: bin count mismatch");
  std::vector<Complex> buf(static_cast<std::size_t>(n));
  for (Index k = 0; k <= n / 2; ++k) buf[static_cast<std::size_t>(k)] = bins[static_cast<std::size_t>(k)];
  for (Index k = n / 2 + 1; k < n; ++k) buf[static_cast<std::size_t>(k)] = std::conj(bins[static_cast<std::size_t>(n - k)]);
  transform(buf, true);
  std::vector<double> out(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = buf[static_cast<std::size_t>(i)].real() / static_cast<double>(n);
  return out;
}

}  // namespace mgvq::fft
