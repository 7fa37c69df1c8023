#include "mgvq/features.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <vector>

#include "mgvq/error.hpp"
#include "mgvq/rng.hpp"

namespace mgvq {

void FeatureBundle::validate() const {
  if (features.rank() != 2 || frames() < 1 || dim() < 1) throw InvalidArgument("feature bundle needs at least one frame");
  if (!(frame_rate > 0.0)) throw InvalidArgument("feature frame rate must be positive");
  if (!features.all_finite()) throw NumericError("feature bundle contains non-finite values");
}

namespace {

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

}  // namespace

Tensor log_mel_spectrogram(const Waveform& x, Index bands) {
  x.validate();
  StftConfig cfg;
  cfg.window_length = static_cast<Index>(std::lround(kStubWindowSeconds * x.sample_rate));
  cfg.hop = static_cast<Index>(std::lround(kStubHopSeconds * x.sample_rate));
  cfg.fft_size = 1;
  while (cfg.fft_size < cfg.window_length) cfg.fft_size <<= 1;
  const auto mag = stft_magnitude(x, cfg);

  const double nyquist = x.sample_rate / 2.0;
  const double mel_hi = hz_to_mel(nyquist);
  std::vector<double> edges(static_cast<std::size_t>(bands + 2));
  for (Index i = 0; i < bands + 2; ++i) {
    edges[static_cast<std::size_t>(i)] = mel_to_hz(mel_hi * static_cast<double>(i) / static_cast<double>(bands + 1));
  }
  Tensor out = Tensor::matrix(mag.frames, bands);
  const double bin_hz = x.sample_rate / static_cast<double>(cfg.fft_size);
  for (Index f = 0; f < mag.frames; ++f) {
    for (Index b = 0; b < bands; ++b) {
      const double lo = edges[static_cast<std::size_t>(b)];
      const double mid = edges[static_cast<std::size_t>(b + 1)];
      const double hi = edges[static_cast<std::size_t>(b + 2)];
      double e = 0.0;
      for (Index k = 0; k < mag.bins; ++k) {
        const double hz = static_cast<double>(k) * bin_hz;
        double w = 0.0;
        if (hz > lo && hz <= mid) w = (hz - lo) / (mid - lo);
        else if (hz > mid && hz < hi) w = (hi - hz) / (hi - mid);
        if (w > 0.0) e += w * mag(f, k) * mag(f, k);
      }
      out.at(f, b) = std::log(std::max(e, kStubPowerFloor));
    }
  }
  return out;
}

Tensor stub_projection_weight(Index dim, std::uint64_t seed) {
  Rng rng(derive_seed({seed, static_cast<std::uint64_t>(dim), 0x57ab}));
  Tensor w = Tensor::matrix(kStubMelBands, dim);
  const double s = 1.0 / std::sqrt(static_cast<double>(kStubMelBands));
  for (double& v : w.storage()) v = s * rng.normal();
  return w;
}

Tensor stub_projection_bias(Index dim, std::uint64_t seed) {
  Rng rng(derive_seed({seed, static_cast<std::uint64_t>(dim), 0xb1a5}));
  Tensor b({dim});
  for (double& v : b.storage()) v = 0.1 * rng.normal();
  return b;
}

FeatureBundle stub_features(const Waveform& x, Index dim, std::uint64_t seed) {
  if (dim < 1) throw InvalidArgument("feature dim must be positive");
  const Tensor mel = log_mel_spectrogram(x, kStubMelBands);
  const Tensor w = stub_projection_weight(dim, seed);
  const Tensor b = stub_projection_bias(dim, seed);
  FeatureBundle out;
  out.features = Tensor::matrix(mel.rows(), dim);
  out.features.mat().noalias() = mel.mat() * w.mat();
  Eigen::Map<const Eigen::RowVectorXd> bias(b.data(), dim);
  out.features.mat().rowwise() += bias;
  out.frame_rate = 1.0 / kStubHopSeconds;
  out.provider_id = "stub-logmel";
  return out;
}

FeatureProvider stub_provider(Index dim, std::uint64_t seed) {
  return [dim, seed](const Waveform& x) { return stub_features(x, dim, seed); };
}

namespace {

constexpr char kMagic[8] = {'M', 'G', 'V', 'Q', 'F', 'E', 'A', 'T'};

template <typename T>
void put(std::ofstream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T take(const std::vector<char>& buf, std::size_t& pos, const std::string& path) {
  if (pos + sizeof(T) > buf.size()) throw FormatError(path + ": truncated feature header");
  T v;
  std::memcpy(&v, buf.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

}  // namespace

void save_precomputed(const std::filesystem::path& path, const FeatureBundle& bundle) {
  bundle.validate();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot write feature file " + path.string());
  os.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(os, kFeatureFileVersion);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(bundle.provider_id.size()));
  os.write(bundle.provider_id.data(), static_cast<std::streamsize>(bundle.provider_id.size()));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(bundle.dim()));
  put<double>(os, bundle.frame_rate);
  for (double v : bundle.features.values()) put<float>(os, static_cast<float>(v));
  if (!os) throw FormatError("failed writing feature file " + path.string());
}

FeatureBundle load_precomputed(const std::filesystem::path& path, Index expected_dim) {
  const std::string name = path.string();
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open feature file " + name);
  std::vector<char> buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (buf.size() < sizeof(kMagic) || std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0) {
    throw FormatError(name + ": bad feature file magic");
  }
  std::size_t pos = sizeof(kMagic);
  const auto version = take<std::uint32_t>(buf, pos, name);
  if (version != kFeatureFileVersion) throw FormatError(name + ": unsupported feature file version " + std::to_string(version));
  const auto id_len = take<std::uint32_t>(buf, pos, name);
  if (pos + id_len > buf.size()) throw FormatError(name + ": truncated provider id");
  FeatureBundle out;
  out.provider_id.assign(buf.data() + pos, id_len);
  pos += id_len;
  const auto dim = static_cast<Index>(take<std::uint32_t>(buf, pos, name));
  out.frame_rate = take<double>(buf, pos, name);
  if (dim < 1) throw FormatError(name + ": feature dim must be positive");
  if (!(out.frame_rate > 0.0) || !std::isfinite(out.frame_rate)) throw FormatError(name + ": invalid frame rate");
  if (dim != expected_dim) {
    throw FormatError(name + ": feature dim " + std::to_string(dim) + " does not match expected " +
                      std::to_string(expected_dim));
  }
  const std::size_t payload = buf.size() - pos;
  const std::size_t row_bytes = static_cast<std::size_t>(dim) * sizeof(float);
  if (payload == 0) throw FormatError(name + ": feature file has no frames");
  if (payload % row_bytes != 0) throw FormatError(name + ": payload is not a whole number of frames");
  const Index frames = static_cast<Index>(payload / row_bytes);
  out.features = Tensor::matrix(frames, dim);
  for (Index i = 0; i < frames * dim; ++i) {
    float f;
    std::memcpy(&f, buf.data() + pos + static_cast<std::size_t>(i) * sizeof(float), sizeof(float));
    if (!std::isfinite(f)) throw FormatError(name + ": non-finite feature values");
    out.features[i] = f;
  }
  return out;
}

}  // namespace mgvq
