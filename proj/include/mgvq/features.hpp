#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>

#include "mgvq/signal.hpp"
#include "mgvq/tensor.hpp"

namespace mgvq {

// Frame-level contextual features from an external (frozen) extractor.
struct FeatureBundle {
  Tensor features;  // [frames x dim]
  double frame_rate = 50.0;
  std::string provider_id;

  Index frames() const { return features.rank() == 2 ? features.dim(0) : 0; }
  Index dim() const { return features.rank() == 2 ? features.dim(1) : 0; }
  double duration() const { return static_cast<double>(frames()) / frame_rate; }
  void validate() const;
};

// Maps an input waveform to contextual features.
using FeatureProvider = std::function<FeatureBundle(const Waveform&)>;

inline constexpr Index kStubMelBands = 64;
inline constexpr double kStubWindowSeconds = 0.025;
inline constexpr double kStubHopSeconds = 0.020;
inline constexpr double kStubPowerFloor = 1e-10;

// Log-mel filterbank energies [frames x bands], 25 ms Hann window, 20 ms hop,
// HTK-mel triangular filters between 0 Hz and Nyquist; energies floored at
// kStubPowerFloor before the log.
Tensor log_mel_spectrogram(const Waveform& x, Index bands = kStubMelBands);

// Fixed random affine image of the log-mel features. The map is a pure
// function of (dim, seed).
Tensor stub_projection_weight(Index dim, std::uint64_t seed);
Tensor stub_projection_bias(Index dim, std::uint64_t seed);
FeatureBundle stub_features(const Waveform& x, Index dim, std::uint64_t seed);
FeatureProvider stub_provider(Index dim, std::uint64_t seed);

// Little-endian layout:
//   char[8]  "MGVQFEAT"
//   u32      version (1)
//   u32      provider id length n, then n bytes
//   u32      feature dim
//   f64      frame rate (frames / second)
//   f32[frames * dim] row-major frames to end of file
inline constexpr std::uint32_t kFeatureFileVersion = 1;
void save_precomputed(const std::filesystem::path& path, const FeatureBundle& bundle);
FeatureBundle load_precomputed(const std::filesystem::path& path, Index expected_dim);

}  // namespace mgvq
