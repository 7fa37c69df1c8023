#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mgvq/signal.hpp"

namespace mgvq {

struct PairSample {
  Waveform clean;
  Waveform noisy;
  double snr_db = 0.0;
  std::string id;
  std::string noise_kind;
};

struct CorpusSpec {
  Index num_pairs = 64;
  double min_duration = 1.0;  // seconds
  double max_duration = 2.0;
  std::vector<double> snr_db{0.0, 5.0, 10.0, 15.0};
  std::uint64_t seed = 0;
  double sample_rate = 16000.0;

  void validate() const;
};

inline constexpr double kActivityThresholdDbfs = -40.0;
inline constexpr double kActivityFrameSeconds = 0.020;

// Per-sample mask of 20 ms frames whose RMS exceeds -40 dBFS.
std::vector<bool> active_region(const Waveform& clean);
// 10 log10(P_clean / P_noise) over the clean signal's active region.
double active_snr_db(const Waveform& clean, std::span<const double> noise);

// Harmonic AM clean signal with word-like onsets plus filtered-white or
// babble-like noise scaled to the pair's SNR on the active region.
PairSample synth_pair(const CorpusSpec& spec, Index index);

// Re-pairs noise residuals (noisy - clean) across the batch: sample i gets
// the noise of sample perm[i]. Clean targets are untouched.
void remix_with_permutation(std::vector<PairSample>& batch, const std::vector<Index>& perm);
// Seeded random permutation; a batch of one is returned unchanged with a warning.
void remix_augment(std::vector<PairSample>& batch, std::uint64_t seed);

struct Band {
  double low_hz = 0.0;
  double high_hz = 0.0;
};

inline constexpr Index kBandmaskMelBands = 120;
inline constexpr double kBandmaskMaxWidth = 0.2;

// Random band spanning at most max_width of the mel axis.
Band draw_mel_band(std::uint64_t seed, double sample_rate, double max_width = kBandmaskMaxWidth);
// Zero-phase removal of [low_hz, high_hz] through the full-length DFT.
Waveform band_stop(const Waveform& x, const Band& band);
PairSample bandmask_augment(const PairSample& sample, std::uint64_t seed, Band* applied = nullptr);

class Corpus {
 public:
  virtual ~Corpus() = default;
  virtual Index size() const = 0;
  virtual PairSample get(Index index) const = 0;
};

class SyntheticCorpus : public Corpus {
 public:
  explicit SyntheticCorpus(CorpusSpec spec);
  Index size() const override { return spec_.num_pairs; }
  PairSample get(Index index) const override { return synth_pair(spec_, index); }
  const CorpusSpec& spec() const { return spec_; }

 private:
  CorpusSpec spec_;
};

class InMemoryCorpus : public Corpus {
 public:
  explicit InMemoryCorpus(std::vector<PairSample> pairs) : pairs_(std::move(pairs)) {}
  Index size() const override { return static_cast<Index>(pairs_.size()); }
  PairSample get(Index index) const override;

 private:
  std::vector<PairSample> pairs_;
};

// Lazily reads clean/noisy pairs matched by file name. Construction fails
// on any unmatched name; each next() fails on unreadable files or length
// mismatch.
class WavPairStream {
 public:
  WavPairStream(std::filesystem::path clean_dir, std::filesystem::path noisy_dir, double sample_rate = 16000.0);
  Index size() const { return static_cast<Index>(names_.size()); }
  const std::vector<std::string>& names() const { return names_; }
  std::optional<PairSample> next();
  PairSample read(Index index) const;

 private:
  std::filesystem::path clean_dir_;
  std::filesystem::path noisy_dir_;
  double sample_rate_;
  std::vector<std::string> names_;
  Index cursor_ = 0;
};

WavPairStream load_wav_corpus(const std::filesystem::path& clean_dir, const std::filesystem::path& noisy_dir,
                              double sample_rate = 16000.0);

// Corpus view over a directory holding clean/ and noisy/ subdirectories.
class WavCorpus : public Corpus {
 public:
  explicit WavCorpus(const std::filesystem::path& root, double sample_rate = 16000.0);
  Index size() const override { return stream_.size(); }
  PairSample get(Index index) const override { return stream_.read(index); }

 private:
  WavPairStream stream_;
};

// Writes root/clean/<id>.wav, root/noisy/<id>.wav and root/manifest.txt
// (one relative path per line, clean then noisy).
void write_corpus(const std::filesystem::path& root, const Corpus& corpus);

}  // namespace mgvq
