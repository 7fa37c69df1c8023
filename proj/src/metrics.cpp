#include "mgvq/metrics.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>

#include "json.hpp"
#include "mgvq/error.hpp"

namespace mgvq {

double si_sdr(const Waveform& y, const Waveform& yhat) {
  if (y.size() != yhat.size()) throw InvalidArgument("si_sdr needs equal lengths");
  if (y.size() == 0) throw InvalidArgument("si_sdr of empty signals");
  double yy = 0.0, yx = 0.0;
  for (Index i = 0; i < y.size(); ++i) {
    yy += y.samples[static_cast<std::size_t>(i)] * y.samples[static_cast<std::size_t>(i)];
    yx += y.samples[static_cast<std::size_t>(i)] * yhat.samples[static_cast<std::size_t>(i)];
  }
  if (!(yy > 0.0)) throw NumericError("si_sdr reference is silent");
  const double alpha = yx / yy;
  double target = 0.0, residual = 0.0;
  for (Index i = 0; i < y.size(); ++i) {
    const double t = alpha * y.samples[static_cast<std::size_t>(i)];
    const double r = yhat.samples[static_cast<std::size_t>(i)] - t;
    target += t * t;
    residual += r * r;
  }
  if (!std::isfinite(target) || !std::isfinite(residual)) throw NumericError("si_sdr of non-finite signal");
  if (target <= 0.0) return -kSiSdrCapDb;
  if (residual <= 0.0) return kSiSdrCapDb;
  return std::clamp(10.0 * std::log10(target / residual), -kSiSdrCapDb, kSiSdrCapDb);
}

double log_spectral_distance(const Waveform& y, const Waveform& yhat, const StftConfig& cfg) {
  if (y.size() != yhat.size()) throw InvalidArgument("log_spectral_distance needs equal lengths");
  const Spectrogram a = stft_magnitude(y, cfg);
  const Spectrogram b = stft_magnitude(yhat, cfg);
  constexpr double floor = 1e-8;
  double total = 0.0;
  for (Index t = 0; t < a.frames; ++t) {
    double acc = 0.0;
    for (Index k = 0; k < a.bins; ++k) {
      const double d = 20.0 * std::log10(std::max(a(t, k), floor) / std::max(b(t, k), floor));
      acc += d * d;
    }
    total += std::sqrt(acc / static_cast<double>(a.bins));
  }
  return total / static_cast<double>(a.frames);
}

double CodebookUsage::mean_perplexity() const {
  if (perplexity.empty()) return 0.0;
  return std::accumulate(perplexity.begin(), perplexity.end(), 0.0) / static_cast<double>(perplexity.size());
}

namespace {

struct Pool {
  Index books = 0;
  Index codewords = 0;
  std::vector<Index> selections;
};

struct Sampling {
  std::uint64_t seed = 0;
  Index passes = 0;  // 0 selects eval mode
};

// One pass over the corpus per sampling pass; optionally records per-file metrics.
std::vector<CodebookUsage> run_corpus(const Enhancer& model, const Corpus& corpus, const FeatureProvider& features,
                                      std::vector<FileMetrics>* files, Sampling sampling = {}) {
  NoGradGuard guard;
  std::map<Index, Pool> pools;
  const Index passes = std::max<Index>(1, sampling.passes);
  for (Index pass = 0; pass < passes; ++pass)
  for (Index i = 0; i < corpus.size(); ++i) {
    const PairSample s = corpus.get(i);
    std::optional<FeatureBundle> ctx;
    if (model.config().fusion_enabled) {
      if (!features) throw InvalidArgument("fusion enabled but no feature provider");
      ctx = features(s.noisy);
    }
    const bool sampled = sampling.passes > 0;
    const auto seed = derive_seed({sampling.seed, static_cast<std::uint64_t>(pass), static_cast<std::uint64_t>(i)});
    const EnhanceResult r =
        model.forward(s.noisy, ctx ? &*ctx : nullptr, sampled ? Mode::Train : Mode::Eval, sampled ? seed : 0, -1);
    for (std::size_t k = 0; k < r.vq_outputs.size(); ++k) {
      Pool& p = pools[r.vq_layers[k]];
      p.books = r.vq_outputs[k].num_books;
      p.codewords = r.vq_outputs[k].codewords_per_book;
      p.selections.insert(p.selections.end(), r.vq_outputs[k].selections.begin(), r.vq_outputs[k].selections.end());
    }
    if (files) {
      const Waveform enhanced = r.waveform();
      FileMetrics m;
      m.id = s.id;
      m.si_sdr_noisy = si_sdr(s.clean, s.noisy);
      m.si_sdr_enhanced = si_sdr(s.clean, enhanced);
      m.lsd_noisy = log_spectral_distance(s.clean, s.noisy);
      m.lsd_enhanced = log_spectral_distance(s.clean, enhanced);
      files->push_back(std::move(m));
    }
  }
  std::vector<CodebookUsage> out;
  for (const auto& [q, p] : pools) {
    out.push_back({q, p.books, p.codewords, codebook_perplexity(p.selections, p.books, p.codewords)});
  }
  return out;
}

nlohmann::json optional_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); }

}  // namespace

std::vector<CodebookUsage> codebook_usage(const Enhancer& model, const Corpus& corpus, const FeatureProvider& features) {
  return run_corpus(model, corpus, features, nullptr);
}

std::vector<CodebookUsage> sampled_codebook_usage(const Enhancer& model, const Corpus& corpus,
                                                  const FeatureProvider& features, std::uint64_t seed, Index passes) {
  if (passes < 1) throw InvalidArgument("sampled usage needs at least one pass");
  return run_corpus(model, corpus, features, nullptr, Sampling{seed, passes});
}

EvalReport evaluate(const Enhancer& model, const Corpus& corpus, const FeatureProvider& features,
                    const std::string& config_fingerprint) {
  if (corpus.size() < 1) throw InvalidArgument("evaluation corpus is empty");
  EvalReport report;
  report.config_fingerprint = config_fingerprint;
  report.codebooks = run_corpus(model, corpus, features, &report.files);
  const double n = static_cast<double>(report.files.size());
  for (const auto& f : report.files) {
    report.mean_si_sdr_noisy += f.si_sdr_noisy / n;
    report.mean_si_sdr_enhanced += f.si_sdr_enhanced / n;
    report.mean_lsd_noisy += f.lsd_noisy / n;
    report.mean_lsd_enhanced += f.lsd_enhanced / n;
  }
  return report;
}

std::string EvalReport::to_json() const {
  using nlohmann::json;
  json files_json = json::array();
  for (const auto& f : files) {
    files_json.push_back({{"id", f.id},
                          {"si_sdr_noisy", f.si_sdr_noisy},
                          {"si_sdr_enhanced", f.si_sdr_enhanced},
                          {"lsd_noisy", f.lsd_noisy},
                          {"lsd_enhanced", f.lsd_enhanced},
                          {"pesq", optional_json(f.pesq)},
                          {"stoi", optional_json(f.stoi)},
                          {"csig", optional_json(f.csig)},
                          {"cbak", optional_json(f.cbak)},
                          {"covl", optional_json(f.covl)}});
  }
  json books = json::array();
  for (const auto& c : codebooks) {
    books.push_back({{"quantizer", c.quantizer},
                     {"books", c.books},
                     {"codewords", c.codewords},
                     {"perplexity", c.perplexity},
                     {"mean_perplexity", c.mean_perplexity()}});
  }
  json doc{{"schema_version", kSchemaVersion},
           {"config_fingerprint", config_fingerprint},
           {"means",
            {{"si_sdr_noisy", mean_si_sdr_noisy},
             {"si_sdr_enhanced", mean_si_sdr_enhanced},
             {"si_sdr_delta", mean_si_sdr_enhanced - mean_si_sdr_noisy},
             {"lsd_noisy", mean_lsd_noisy},
             {"lsd_enhanced", mean_lsd_enhanced}}},
           {"files", files_json},
           {"codebooks", books}};
  return doc.dump(2);
}

CodebookProjection project_codebooks(const CodebookSet& books) {
  if (books.codewords_per_book < 3) throw InvalidArgument("projection needs at least 3 codewords per book");
  CodebookProjection out;
  const Tensor& w = books.codewords.value();
  for (Index g = 0; g < books.num_books; ++g) {
    RowMatrix x = w.mat().middleRows(g * books.codewords_per_book, books.codewords_per_book);
    x.rowwise() -= x.colwise().mean();
    const double total = x.squaredNorm();
    RowMatrix coords = RowMatrix::Zero(x.rows(), 2);
    double explained = 1.0;
    if (total > 0.0) {
      Eigen::JacobiSVD<RowMatrix> svd(x, Eigen::ComputeThinV);
      const Index axes = std::min<Index>(2, svd.singularValues().size());
      double kept = 0.0;
      for (Index a = 0; a < axes; ++a) {
        Eigen::VectorXd v = svd.matrixV().col(a);
        Index pivot = 0;
        v.cwiseAbs().maxCoeff(&pivot);
        if (v(pivot) < 0.0) v = -v;
        coords.col(a) = x * v;
        kept += svd.singularValues()(a) * svd.singularValues()(a);
      }
      explained = kept / total;
    }
    out.explained_variance.push_back(explained);
    for (Index v = 0; v < x.rows(); ++v) out.points.push_back({g, v, coords(v, 0), coords(v, 1)});
  }
  return out;
}

namespace {

void write_svg(const CodebookProjection& p, Index books, const std::filesystem::path& path) {
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
  double lo_x = 0, hi_x = 0, lo_y = 0, hi_y = 0;
  for (const auto& q : p.points) {
    lo_x = std::min(lo_x, q.x), hi_x = std::max(hi_x, q.x);
    lo_y = std::min(lo_y, q.y), hi_y = std::max(hi_y, q.y);
  }
  const double sx = hi_x > lo_x ? hi_x - lo_x : 1.0;
  const double sy = hi_y > lo_y ? hi_y - lo_y : 1.0;
  constexpr double size = 480, margin = 20;
  std::ofstream os(path);
  if (!os) throw Error("cannot write " + path.string());
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << size + 2 * margin << "\" height=\"" << size + 2 * margin
     << "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (const auto& q : p.points) {
    const double cx = margin + (q.x - lo_x) / sx * size;
    const double cy = margin + size - (q.y - lo_y) / sy * size;
    os << "<circle cx=\"" << cx << "\" cy=\"" << cy << "\" r=\"3\" fill=\"" << colors[q.book % 6]
       << "\" fill-opacity=\"0.7\"/>\n";
  }
  for (Index g = 0; g < books; ++g) {
    os << "<text x=\"" << margin << "\" y=\"" << margin + 14 * (g + 1) << "\" font-size=\"12\" fill=\"" << colors[g % 6]
       << "\">book " << g << "</text>\n";
  }
  os << "</svg>\n";
}

}  // namespace

CodebookProjection export_codebook_projection(const CodebookSet& books, const std::filesystem::path& csv_path,
                                              const std::optional<std::filesystem::path>& svg_path) {
  CodebookProjection p = project_codebooks(books);
  std::ofstream os(csv_path);
  if (!os) throw Error("cannot write " + csv_path.string());
  os.precision(17);
  os << "book,index,x,y\n";
  for (const auto& q : p.points) os << q.book << "," << q.index << "," << q.x << "," << q.y << "\n";
  if (svg_path) write_svg(p, books.num_books, *svg_path);
  return p;
}

void export_codewords_csv(const CodebookSet& books, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw Error("cannot write " + path.string());
  os.precision(17);
  os << "book,index";
  for (Index k = 0; k < books.dim; ++k) os << ",v" << k;
  os << "\n";
  for (Index g = 0; g < books.num_books; ++g) {
    for (Index v = 0; v < books.codewords_per_book; ++v) {
      os << g << "," << v;
      for (double x : books.codeword(g, v)) os << "," << x;
      os << "\n";
    }
  }
}

}  // namespace mgvq
