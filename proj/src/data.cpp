#include "mgvq/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <set>

#include "mgvq/error.hpp"
#include "mgvq/fft.hpp"
#include "mgvq/rng.hpp"
#include "mgvq/wav.hpp"

namespace mgvq {

namespace fs = std::filesystem;

void CorpusSpec::validate() const {
  if (num_pairs < 1) throw InvalidArgument("corpus needs at least one pair");
  if (!(min_duration > 0.0) || max_duration < min_duration) throw InvalidArgument("invalid duration range");
  if (snr_db.empty()) throw InvalidArgument("SNR set must not be empty");
  for (double s : snr_db) {
    if (!std::isfinite(s)) throw InvalidArgument("SNR values must be finite");
  }
  if (!(sample_rate > 0.0)) throw InvalidArgument("sample rate must be positive");
}

std::vector<bool> active_region(const Waveform& clean) {
  const Index n = clean.size();
  const Index frame = std::max<Index>(1, static_cast<Index>(std::lround(kActivityFrameSeconds * clean.sample_rate)));
  const double threshold = std::pow(10.0, kActivityThresholdDbfs / 20.0);
  std::vector<bool> mask(static_cast<std::size_t>(n), false);
  for (Index start = 0; start < n; start += frame) {
    const Index end = std::min(n, start + frame);
    double e = 0.0;
    for (Index i = start; i < end; ++i) e += clean.samples[static_cast<std::size_t>(i)] * clean.samples[static_cast<std::size_t>(i)];
    const bool on = std::sqrt(e / static_cast<double>(end - start)) > threshold;
    for (Index i = start; i < end; ++i) mask[static_cast<std::size_t>(i)] = on;
  }
  return mask;
}

namespace {

std::pair<double, double> active_powers(const Waveform& clean, std::span<const double> noise) {
  auto mask = active_region(clean);
  if (std::none_of(mask.begin(), mask.end(), [](bool b) { return b; })) mask.assign(mask.size(), true);
  double pc = 0.0, pn = 0.0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    pc += clean.samples[i] * clean.samples[i];
    pn += noise[i] * noise[i];
  }
  return {pc, pn};
}

}  // namespace

double active_snr_db(const Waveform& clean, std::span<const double> noise) {
  if (static_cast<Index>(noise.size()) != clean.size()) throw InvalidArgument("noise length differs from clean");
  const auto [pc, pn] = active_powers(clean, noise);
  if (!(pn > 0.0)) throw NumericError("noise has no power on the active region");
  return 10.0 * std::log10(pc / pn);
}

namespace {

// Raised-cosine gate of word-like segments separated by pauses.
std::vector<double> word_envelope(Index n, double sr, Rng& rng) {
  std::vector<double> env(static_cast<std::size_t>(n), 0.0);
  const Index words = 2 + static_cast<Index>(rng.below(3));
  const double span = static_cast<double>(n) / static_cast<double>(words);
  const Index ramp = static_cast<Index>(0.01 * sr);
  for (Index w = 0; w < words; ++w) {
    const Index seg_start = static_cast<Index>(w * span + rng.uniform(0.0, 0.25) * span);
    const Index seg_end = std::min<Index>(n, static_cast<Index>((w + 1) * span - rng.uniform(0.0, 0.15) * span));
    for (Index i = seg_start; i < seg_end; ++i) {
      double g = 1.0;
      if (i - seg_start < ramp) g = 0.5 - 0.5 * std::cos(M_PI * static_cast<double>(i - seg_start) / ramp);
      if (seg_end - 1 - i < ramp) g = std::min(g, 0.5 - 0.5 * std::cos(M_PI * static_cast<double>(seg_end - 1 - i) / ramp));
      env[static_cast<std::size_t>(i)] = g;
    }
  }
  return env;
}

std::vector<double> harmonic_voice(Index n, double sr, Rng& rng, Index harmonics) {
  const double f0 = rng.uniform(100.0, 250.0);
  const double vib_rate = rng.uniform(3.0, 6.0);
  const double vib_depth = rng.uniform(0.01, 0.04);
  const double am_rate = rng.uniform(3.0, 6.0);
  const double am_phase = rng.uniform(0.0, 2.0 * M_PI);
  std::vector<double> amps(static_cast<std::size_t>(harmonics)), phases(static_cast<std::size_t>(harmonics));
  for (Index h = 0; h < harmonics; ++h) {
    amps[static_cast<std::size_t>(h)] = rng.uniform(0.6, 1.0) / static_cast<double>(h + 1);
    phases[static_cast<std::size_t>(h)] = rng.uniform(0.0, 2.0 * M_PI);
  }
  std::vector<double> out(static_cast<std::size_t>(n), 0.0);
  double phase = 0.0;
  for (Index i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / sr;
    const double f = f0 * (1.0 + vib_depth * std::sin(2.0 * M_PI * vib_rate * t));
    phase += 2.0 * M_PI * f / sr;
    const double am = 0.6 + 0.4 * std::sin(2.0 * M_PI * am_rate * t + am_phase);
    double s = 0.0;
    for (Index h = 0; h < harmonics; ++h) {
      s += amps[static_cast<std::size_t>(h)] * std::sin(static_cast<double>(h + 1) * phase + phases[static_cast<std::size_t>(h)]);
    }
    out[static_cast<std::size_t>(i)] = am * s;
  }
  return out;
}

std::vector<double> filtered_white(Index n, Rng& rng) {
  const double a = rng.uniform(0.3, 0.95);
  const bool highpass = rng.below(2) == 1;
  std::vector<double> out(static_cast<std::size_t>(n));
  double state = 0.0, prev = 0.0;
  for (Index i = 0; i < n; ++i) {
    const double w = rng.normal();
    state = a * state + (1.0 - a) * w;
    out[static_cast<std::size_t>(i)] = highpass ? w - prev : state;
    prev = w;
  }
  return out;
}

std::vector<double> babble(Index n, double sr, Rng& rng) {
  const Index talkers = 4 + static_cast<Index>(rng.below(3));
  std::vector<double> out(static_cast<std::size_t>(n), 0.0);
  for (Index k = 0; k < talkers; ++k) {
    const auto v = harmonic_voice(n, sr, rng, 3);
    const auto env = word_envelope(n, sr, rng);
    for (Index i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] += v[static_cast<std::size_t>(i)] * (0.3 + 0.7 * env[static_cast<std::size_t>(i)]);
  }
  for (Index i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] += 0.05 * rng.normal();
  return out;
}

}  // namespace

PairSample synth_pair(const CorpusSpec& spec, Index index) {
  spec.validate();
  if (index < 0 || index >= spec.num_pairs) throw InvalidArgument("pair index out of range");
  Rng rng(derive_seed({spec.seed, static_cast<std::uint64_t>(index), 0x706169}));
  const double sr = spec.sample_rate;
  const double duration = rng.uniform(spec.min_duration, spec.max_duration);
  const Index n = std::max<Index>(1, static_cast<Index>(std::lround(duration * sr)));

  PairSample out;
  out.id = "pair_" + std::to_string(index);
  out.snr_db = spec.snr_db[static_cast<std::size_t>(rng.below(spec.snr_db.size()))];

  const Index harmonics = 6 + static_cast<Index>(rng.below(11));
  auto voice = harmonic_voice(n, sr, rng, harmonics);
  const auto env = word_envelope(n, sr, rng);
  // Breath noise follows the word envelope at about -30 dB.
  const auto breath = filtered_white(n, rng);
  double peak = 0.0;
  for (Index i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(i);
    voice[k] = env[k] * (voice[k] + 0.03 * breath[k]);
    peak = std::max(peak, std::abs(voice[k]));
  }
  const double gain = peak > 0.0 ? 0.5 / peak : 1.0;
  // Recording floor at -60 dBFS keeps pauses from being digital silence.
  for (double& v : voice) v = v * gain + 1e-3 * rng.normal();
  out.clean = Waveform(std::move(voice), sr);

  std::vector<double> noise;
  if (rng.below(2) == 0) {
    noise = filtered_white(n, rng);
    out.noise_kind = "filtered-white";
  } else {
    noise = babble(n, sr, rng);
    out.noise_kind = "babble";
  }
  const auto [pc, pn] = active_powers(out.clean, noise);
  const double scale = std::sqrt(pc / (pn * std::pow(10.0, out.snr_db / 10.0)));
  out.noisy = out.clean;
  for (Index i = 0; i < n; ++i) out.noisy.samples[static_cast<std::size_t>(i)] += scale * noise[static_cast<std::size_t>(i)];
  return out;
}

void remix_with_permutation(std::vector<PairSample>& batch, const std::vector<Index>& perm) {
  if (perm.size() != batch.size()) throw InvalidArgument("permutation size differs from batch size");
  std::vector<std::vector<double>> noises;
  noises.reserve(batch.size());
  for (const auto& s : batch) {
    if (s.clean.size() != batch.front().clean.size() || s.noisy.size() != s.clean.size()) {
      throw InvalidArgument("remix needs equal-length pairs");
    }
    std::vector<double> n(s.clean.samples.size());
    for (std::size_t i = 0; i < n.size(); ++i) n[i] = s.noisy.samples[i] - s.clean.samples[i];
    noises.push_back(std::move(n));
  }
  std::vector<bool> used(batch.size(), false);
  for (Index p : perm) {
    if (p < 0 || p >= static_cast<Index>(batch.size()) || used[static_cast<std::size_t>(p)]) {
      throw InvalidArgument("not a permutation");
    }
    used[static_cast<std::size_t>(p)] = true;
  }
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& n = noises[static_cast<std::size_t>(perm[b])];
    auto& s = batch[b];
    for (std::size_t i = 0; i < n.size(); ++i) s.noisy.samples[i] = s.clean.samples[i] + n[i];
    try {
      s.snr_db = active_snr_db(s.clean, n);
    } catch (const NumericError&) {
      s.snr_db = 300.0;
    }
  }
}

void remix_augment(std::vector<PairSample>& batch, std::uint64_t seed) {
  if (batch.size() < 2) {
    std::cerr << "warning: remix needs a batch of at least 2; leaving batch unchanged\n";
    return;
  }
  std::vector<Index> perm(batch.size());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = static_cast<Index>(i);
  Rng rng(seed);
  for (std::size_t i = perm.size() - 1; i > 0; --i) {
    std::swap(perm[i], perm[static_cast<std::size_t>(rng.below(i + 1))]);
  }
  remix_with_permutation(batch, perm);
}

namespace {
double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }
}  // namespace

Band draw_mel_band(std::uint64_t seed, double sample_rate, double max_width) {
  Rng rng(seed);
  const Index max_bands = std::max<Index>(1, static_cast<Index>(std::floor(kBandmaskMelBands * max_width)));
  const Index width = 1 + static_cast<Index>(rng.below(static_cast<std::uint64_t>(max_bands)));
  const Index low = static_cast<Index>(rng.below(static_cast<std::uint64_t>(kBandmaskMelBands - width + 1)));
  const double mel_hi = hz_to_mel(sample_rate / 2.0);
  const double step = mel_hi / static_cast<double>(kBandmaskMelBands);
  return Band{mel_to_hz(step * static_cast<double>(low)), mel_to_hz(step * static_cast<double>(low + width))};
}

Waveform band_stop(const Waveform& x, const Band& band) {
  x.validate();
  const Index n = x.size();
  auto bins = fft::rfft(x.samples, n);
  for (std::size_t k = 0; k < bins.size(); ++k) {
    const double hz = static_cast<double>(k) * x.sample_rate / static_cast<double>(n);
    if (hz >= band.low_hz && hz <= band.high_hz) bins[k] = 0.0;
  }
  return Waveform(fft::irfft(bins, n), x.sample_rate);
}

PairSample bandmask_augment(const PairSample& sample, std::uint64_t seed, Band* applied) {
  const Band band = draw_mel_band(seed, sample.noisy.sample_rate);
  if (applied) *applied = band;
  PairSample out = sample;
  out.noisy = band_stop(sample.noisy, band);
  return out;
}

SyntheticCorpus::SyntheticCorpus(CorpusSpec spec) : spec_(std::move(spec)) { spec_.validate(); }

PairSample InMemoryCorpus::get(Index index) const {
  if (index < 0 || index >= size()) throw InvalidArgument("corpus index out of range");
  return pairs_[static_cast<std::size_t>(index)];
}

WavPairStream::WavPairStream(fs::path clean_dir, fs::path noisy_dir, double sample_rate)
    : clean_dir_(std::move(clean_dir)), noisy_dir_(std::move(noisy_dir)), sample_rate_(sample_rate) {
  auto list = [](const fs::path& dir) {
    if (!fs::is_directory(dir)) throw FormatError("not a directory: " + dir.string());
    std::set<std::string> names;
    for (const auto& e : fs::directory_iterator(dir)) {
      if (e.is_regular_file() && e.path().extension() == ".wav") names.insert(e.path().filename().string());
    }
    return names;
  };
  const auto clean = list(clean_dir_);
  const auto noisy = list(noisy_dir_);
  for (const auto& n : clean) {
    if (!noisy.count(n)) throw FormatError("clean file without noisy counterpart: " + n);
  }
  for (const auto& n : noisy) {
    if (!clean.count(n)) throw FormatError("noisy file without clean counterpart: " + n);
  }
  names_.assign(clean.begin(), clean.end());
}

PairSample WavPairStream::read(Index index) const {
  if (index < 0 || index >= size()) throw InvalidArgument("corpus index out of range");
  const auto& name = names_[static_cast<std::size_t>(index)];
  PairSample s;
  s.clean = read_wav(clean_dir_ / name, sample_rate_);
  s.noisy = read_wav(noisy_dir_ / name, sample_rate_);
  if (s.clean.size() != s.noisy.size()) throw FormatError("length mismatch between clean and noisy " + name);
  s.id = fs::path(name).stem().string();
  std::vector<double> noise(s.clean.samples.size());
  for (std::size_t i = 0; i < noise.size(); ++i) noise[i] = s.noisy.samples[i] - s.clean.samples[i];
  try {
    s.snr_db = active_snr_db(s.clean, noise);
  } catch (const NumericError&) {
    s.snr_db = 300.0;
  }
  return s;
}

std::optional<PairSample> WavPairStream::next() {
  if (cursor_ >= size()) return std::nullopt;
  return read(cursor_++);
}

WavPairStream load_wav_corpus(const fs::path& clean_dir, const fs::path& noisy_dir, double sample_rate) {
  return WavPairStream(clean_dir, noisy_dir, sample_rate);
}

WavCorpus::WavCorpus(const fs::path& root, double sample_rate)
    : stream_(root / "clean", root / "noisy", sample_rate) {}

void write_corpus(const fs::path& root, const Corpus& corpus) {
  fs::create_directories(root / "clean");
  fs::create_directories(root / "noisy");
  std::ofstream manifest(root / "manifest.txt");
  for (Index i = 0; i < corpus.size(); ++i) {
    const auto s = corpus.get(i);
    const std::string file = s.id + ".wav";
    write_wav(root / "clean" / file, s.clean, WavEncoding::Float32);
    write_wav(root / "noisy" / file, s.noisy, WavEncoding::Float32);
    manifest << "clean/" << file << "\n" << "noisy/" << file << "\n";
  }
}

}  // namespace mgvq
