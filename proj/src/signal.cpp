#include "mgvq/signal.hpp"

#include <cmath>
#include <numeric>

#include "mgvq/error.hpp"
#include "mgvq/fft.hpp"

namespace mgvq {

using fft::Complex;

void Waveform::validate() const {
  if (samples.empty()) throw InvalidArgument("waveform must contain at least one sample");
  if (!(sample_rate > 0.0) || !std::isfinite(sample_rate)) throw InvalidArgument("sample rate must be positive");
  for (double v : samples) {
    if (!std::isfinite(v)) throw NumericError("waveform contains non-finite samples");
  }
}

void StftConfig::validate() const {
  if (fft_size < 1 || hop < 1 || window_length < 1) throw InvalidArgument("STFT sizes must be positive");
  if (window_length > fft_size) throw InvalidArgument("STFT window length exceeds FFT size");
  if (hop > window_length) throw InvalidArgument("STFT hop exceeds window length");
}

MultiStftConfig MultiStftConfig::standard() {
  return MultiStftConfig{{{512, 50, 240, WindowKind::Hann},
                          {1024, 120, 600, WindowKind::Hann},
                          {2048, 240, 1200, WindowKind::Hann}}};
}

void MultiStftConfig::validate() const {
  if (resolutions.empty()) throw InvalidArgument("multi-resolution STFT needs at least one resolution");
  for (const auto& r : resolutions) r.validate();
}

Index stft_frame_count(Index length, const StftConfig& cfg) { return (length + cfg.hop - 1) / cfg.hop; }

std::vector<double> make_window(const StftConfig& cfg) {
  std::vector<double> w(static_cast<std::size_t>(cfg.window_length), 1.0);
  if (cfg.window == WindowKind::Hann) {
    for (Index n = 0; n < cfg.window_length; ++n) {
      w[static_cast<std::size_t>(n)] =
          0.5 - 0.5 * std::cos(2.0 * M_PI * static_cast<double>(n) / static_cast<double>(cfg.window_length));
    }
  }
  return w;
}

Index reflect_index(Index i, Index length) {
  if (length == 1) return 0;
  const Index period = 2 * (length - 1);
  i %= period;
  if (i < 0) i += period;
  return i < length ? i : period - i;
}

double Spectrogram::frobenius_norm() const {
  double s = 0.0;
  for (double v : values) s += v * v;
  return std::sqrt(s);
}

namespace {

struct ComplexStft {
  Index frames = 0;
  Index bins = 0;
  std::vector<Complex> values;
};

Index frame_start(Index t, const StftConfig& cfg) {
  return t * cfg.hop - cfg.fft_size / 2 + (cfg.fft_size - cfg.window_length) / 2;
}

ComplexStft complex_stft(std::span<const double> x, const StftConfig& cfg) {
  const Index length = static_cast<Index>(x.size());
  const auto window = make_window(cfg);
  ComplexStft out;
  out.frames = stft_frame_count(length, cfg);
  out.bins = cfg.bins();
  out.values.resize(static_cast<std::size_t>(out.frames * out.bins));
  std::vector<Complex> buf;
  for (Index t = 0; t < out.frames; ++t) {
    buf.assign(static_cast<std::size_t>(cfg.fft_size), Complex{});
    const Index start = frame_start(t, cfg);
    for (Index n = 0; n < cfg.window_length; ++n) {
      buf[static_cast<std::size_t>(n)] =
          window[static_cast<std::size_t>(n)] * x[static_cast<std::size_t>(reflect_index(start + n, length))];
    }
    fft::transform(buf, false);
    std::copy(buf.begin(), buf.begin() + out.bins, out.values.begin() + t * out.bins);
  }
  return out;
}

// Adjoint of complex_stft: maps dL/dRe + i dL/dIm per bin back to samples.
void complex_stft_backward(const std::vector<Complex>& grad, Index frames, Index length,
                           const StftConfig& cfg, std::vector<double>& out) {
  const auto window = make_window(cfg);
  const Index bins = cfg.bins();
  std::vector<Complex> buf;
  for (Index t = 0; t < frames; ++t) {
    buf.assign(static_cast<std::size_t>(cfg.fft_size), Complex{});
    bool any = false;
    for (Index k = 0; k < bins; ++k) {
      const Complex g = grad[static_cast<std::size_t>(t * bins + k)];
      buf[static_cast<std::size_t>(k)] = g;
      any = any || g != Complex{};
    }
    if (!any) continue;
    fft::transform(buf, true);
    const Index start = frame_start(t, cfg);
    for (Index n = 0; n < cfg.window_length; ++n) {
      out[static_cast<std::size_t>(reflect_index(start + n, length))] +=
          window[static_cast<std::size_t>(n)] * buf[static_cast<std::size_t>(n)].real();
    }
  }
}

void check_pair(const Waveform& y, const Waveform& yhat) {
  y.validate();
  yhat.validate();
  if (y.size() != yhat.size()) throw InvalidArgument("reference and estimate lengths differ");
}

std::vector<double> magnitudes(const ComplexStft& s) {
  std::vector<double> m(s.values.size());
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = std::abs(s.values[i]);
  return m;
}

double sign(double v) { return (v > 0.0) - (v < 0.0); }

struct ResolutionTerms {
  double sc = 0.0;
  double mag = 0.0;
};

// Both spectral terms at one resolution; accumulates d(sc+mag)/d yhat when grad != nullptr.
ResolutionTerms resolution_terms(const Waveform& y, const Waveform& yhat, const StftConfig& cfg,
                                 std::vector<double>* grad) {
  cfg.validate();
  const auto sy = complex_stft(y.samples, cfg);
  const auto sh = complex_stft(yhat.samples, cfg);
  const auto my = magnitudes(sy);
  const auto mh = magnitudes(sh);
  const double inv_t = 1.0 / static_cast<double>(y.size());

  double den = 0.0;
  double num = 0.0;
  double mag = 0.0;
  for (std::size_t i = 0; i < my.size(); ++i) {
    den += my[i] * my[i];
    const double d = my[i] - mh[i];
    num += d * d;
    mag += std::abs(std::log(std::max(my[i], kLogMagnitudeFloor)) - std::log(std::max(mh[i], kLogMagnitudeFloor)));
  }
  den = std::sqrt(den);
  num = std::sqrt(num);
  if (!(den > 0.0)) throw NumericError("spectral convergence undefined for a silent reference");
  ResolutionTerms terms{num / den, mag * inv_t};

  if (grad) {
    std::vector<Complex> g(sh.values.size());
    for (std::size_t i = 0; i < mh.size(); ++i) {
      double gm = 0.0;
      if (num > 0.0) gm += (mh[i] - my[i]) / (num * den);
      if (mh[i] > kLogMagnitudeFloor) {
        const double diff = std::log(mh[i]) - std::log(std::max(my[i], kLogMagnitudeFloor));
        gm += inv_t * sign(diff) / mh[i];
      }
      if (gm != 0.0 && mh[i] > 0.0) g[i] = gm * sh.values[i] / mh[i];
    }
    complex_stft_backward(g, sh.frames, yhat.size(), cfg, *grad);
  }
  return terms;
}

}  // namespace

Spectrogram stft_magnitude(const Waveform& x, const StftConfig& cfg) {
  x.validate();
  cfg.validate();
  const auto s = complex_stft(x.samples, cfg);
  return Spectrogram{s.frames, s.bins, magnitudes(s)};
}

double spectral_convergence_loss(const Waveform& y, const Waveform& yhat, const StftConfig& cfg) {
  check_pair(y, yhat);
  return resolution_terms(y, yhat, cfg, nullptr).sc;
}

double log_magnitude_loss(const Waveform& y, const Waveform& yhat, const StftConfig& cfg) {
  check_pair(y, yhat);
  cfg.validate();
  const auto my = stft_magnitude(y, cfg);
  const auto mh = stft_magnitude(yhat, cfg);
  double s = 0.0;
  for (std::size_t i = 0; i < my.values.size(); ++i) {
    s += std::abs(std::log(std::max(my.values[i], kLogMagnitudeFloor)) -
                  std::log(std::max(mh.values[i], kLogMagnitudeFloor)));
  }
  return s / static_cast<double>(y.size());
}

double l1_loss(const Waveform& y, const Waveform& yhat) {
  check_pair(y, yhat);
  double s = 0.0;
  for (Index i = 0; i < y.size(); ++i) s += std::abs(y.samples[static_cast<std::size_t>(i)] - yhat.samples[static_cast<std::size_t>(i)]);
  return s / static_cast<double>(y.size());
}

double SeLossTerms::total() const {
  double s = l1;
  for (double v : spectral_convergence) s += v;
  for (double v : log_magnitude) s += v;
  return s;
}

SeLossTerms se_loss_terms(const Waveform& y, const Waveform& yhat, const MultiStftConfig& cfg) {
  check_pair(y, yhat);
  cfg.validate();
  SeLossTerms terms;
  terms.l1 = l1_loss(y, yhat);
  for (const auto& r : cfg.resolutions) {
    const auto rt = resolution_terms(y, yhat, r, nullptr);
    terms.spectral_convergence.push_back(rt.sc);
    terms.log_magnitude.push_back(rt.mag);
  }
  return terms;
}

double se_loss(const Waveform& y, const Waveform& yhat, const MultiStftConfig& cfg) {
  return se_loss_terms(y, yhat, cfg).total();
}

LossWithGrad se_loss_with_grad(const Waveform& y, const Waveform& yhat, const MultiStftConfig& cfg) {
  check_pair(y, yhat);
  cfg.validate();
  LossWithGrad out;
  const Index length = y.size();
  out.grad.assign(static_cast<std::size_t>(length), 0.0);
  const double inv_t = 1.0 / static_cast<double>(length);
  double l1 = 0.0;
  for (Index i = 0; i < length; ++i) {
    const double d = yhat.samples[static_cast<std::size_t>(i)] - y.samples[static_cast<std::size_t>(i)];
    l1 += std::abs(d);
    out.grad[static_cast<std::size_t>(i)] = inv_t * sign(d);
  }
  out.terms.l1 = l1 * inv_t;
  for (const auto& r : cfg.resolutions) {
    const auto rt = resolution_terms(y, yhat, r, &out.grad);
    out.terms.spectral_convergence.push_back(rt.sc);
    out.terms.log_magnitude.push_back(rt.mag);
  }
  out.value = out.terms.total();
  return out;
}

}  // namespace mgvq
