#pragma once

#include <span>
#include <vector>

#include "mgvq/tensor.hpp"

namespace mgvq {

// Mono sampled audio. Samples are nominally in [-1, 1].
struct Waveform {
  std::vector<double> samples;
  double sample_rate = 16000.0;

  Waveform() = default;
  explicit Waveform(std::vector<double> s, double rate = 16000.0)
      : samples(std::move(s)), sample_rate(rate) {}

  Index size() const { return static_cast<Index>(samples.size()); }
  double duration() const { return static_cast<double>(samples.size()) / sample_rate; }

  // Throws InvalidArgument for an empty signal or bad rate, NumericError for
  // non-finite samples.
  void validate() const;
};

enum class WindowKind { Hann, Rectangular };

struct StftConfig {
  Index fft_size = 512;
  Index hop = 50;
  Index window_length = 240;
  WindowKind window = WindowKind::Hann;

  Index bins() const { return fft_size / 2 + 1; }
  void validate() const;
};

struct MultiStftConfig {
  std::vector<StftConfig> resolutions;

  // FFT {512, 1024, 2048}, hop {50, 120, 240}, window {240, 600, 1200}.
  static MultiStftConfig standard();
  void validate() const;
};

inline constexpr double kLogMagnitudeFloor = 1e-5;

// Frames are centred at t*hop for t < ceil(T/hop); samples outside the
// signal are taken by reflection about the end points.
Index stft_frame_count(Index length, const StftConfig& cfg);
std::vector<double> make_window(const StftConfig& cfg);
Index reflect_index(Index i, Index length);

struct Spectrogram {
  Index frames = 0;
  Index bins = 0;
  std::vector<double> values;  // [frames x bins]

  double operator()(Index f, Index b) const { return values[static_cast<std::size_t>(f * bins + b)]; }
  double frobenius_norm() const;
};

Spectrogram stft_magnitude(const Waveform& x, const StftConfig& cfg);

// ||(|S_y| - |S_yhat|)||_F / ||S_y||_F. A silent reference is an error.
double spectral_convergence_loss(const Waveform& y, const Waveform& yhat, const StftConfig& cfg);
// (1/T) * || log|S_y| - log|S_yhat| ||_1 with magnitudes floored at kLogMagnitudeFloor.
double log_magnitude_loss(const Waveform& y, const Waveform& yhat, const StftConfig& cfg);
// (1/T) * ||y - yhat||_1
double l1_loss(const Waveform& y, const Waveform& yhat);

struct SeLossTerms {
  double l1 = 0.0;
  std::vector<double> spectral_convergence;
  std::vector<double> log_magnitude;

  double total() const;
};

SeLossTerms se_loss_terms(const Waveform& y, const Waveform& yhat, const MultiStftConfig& cfg);
double se_loss(const Waveform& y, const Waveform& yhat, const MultiStftConfig& cfg);

struct LossWithGrad {
  double value = 0.0;
  std::vector<double> grad;  // d value / d yhat
  SeLossTerms terms;
};

// Enhancement loss together with its gradient with respect to yhat.
LossWithGrad se_loss_with_grad(const Waveform& y, const Waveform& yhat, const MultiStftConfig& cfg);

}  // namespace mgvq
