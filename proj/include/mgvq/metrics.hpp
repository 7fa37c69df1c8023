#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mgvq/data.hpp"
#include "mgvq/features.hpp"
#include "mgvq/network.hpp"
#include "mgvq/quantizer.hpp"
#include "mgvq/signal.hpp"

namespace mgvq {

inline constexpr double kSiSdrCapDb = 100.0;

// Scale-invariant SDR in dB: yhat is projected onto y, then
// 10 log10(|target|^2 / |residual|^2), capped at kSiSdrCapDb.
double si_sdr(const Waveform& y, const Waveform& yhat);

// Mean over frames of the RMS difference of 20 log10 magnitudes (dB).
double log_spectral_distance(const Waveform& y, const Waveform& yhat,
                             const StftConfig& cfg = StftConfig{512, 128, 512, WindowKind::Hann});

struct FileMetrics {
  std::string id;
  double si_sdr_noisy = 0.0;
  double si_sdr_enhanced = 0.0;
  double lsd_noisy = 0.0;
  double lsd_enhanced = 0.0;
  // Slots for an external PESQ / STOI / composite-MOS adapter; never filled in-repo.
  std::optional<double> pesq, stoi, csig, cbak, covl;
};

struct CodebookUsage {
  Index quantizer = 0;
  Index books = 0;
  Index codewords = 0;
  std::vector<double> perplexity;  // per book
  double mean_perplexity() const;
};

struct EvalReport {
  static constexpr int kSchemaVersion = 1;
  std::vector<FileMetrics> files;
  double mean_si_sdr_noisy = 0.0;
  double mean_si_sdr_enhanced = 0.0;
  double mean_lsd_noisy = 0.0;
  double mean_lsd_enhanced = 0.0;
  std::vector<CodebookUsage> codebooks;
  std::string config_fingerprint;

  std::string to_json() const;
};

// Eval-mode codeword usage of every enabled quantizer pooled over the corpus.
std::vector<CodebookUsage> codebook_usage(const Enhancer& model, const Corpus& corpus,
                                          const FeatureProvider& features);

// Train-mode (Gumbel-sampled) usage over `passes` sweeps of the corpus with
// noise seeds derived from `seed`: the distribution the diversity loss shapes.
std::vector<CodebookUsage> sampled_codebook_usage(const Enhancer& model, const Corpus& corpus,
                                                  const FeatureProvider& features, std::uint64_t seed,
                                                  Index passes = 4);

EvalReport evaluate(const Enhancer& model, const Corpus& corpus, const FeatureProvider& features,
                    const std::string& config_fingerprint = {});

struct ProjectedCodeword {
  Index book = 0;
  Index index = 0;
  double x = 0.0;
  double y = 0.0;
};

struct CodebookProjection {
  std::vector<ProjectedCodeword> points;
  // Per book: share of total variance on the first two principal axes.
  std::vector<double> explained_variance;
};

// 2-D principal-component projection of each book's centred codewords.
// Books with fewer than 3 codewords are rejected.
CodebookProjection project_codebooks(const CodebookSet& books);

// CSV rows: book,index,x,y. Writes an SVG scatter too when svg_path is set.
CodebookProjection export_codebook_projection(const CodebookSet& books, const std::filesystem::path& csv_path,
                                              const std::optional<std::filesystem::path>& svg_path = std::nullopt);

// CSV rows: book,index,v0..v{d-1}.
void export_codewords_csv(const CodebookSet& books, const std::filesystem::path& path);

}  // namespace mgvq
