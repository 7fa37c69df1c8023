#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <unistd.h>

#include "json.hpp"
#include "mgvq/error.hpp"
#include "mgvq/features.hpp"
#include "mgvq/metrics.hpp"
#include "test_util.hpp"

using namespace mgvq;
namespace fs = std::filesystem;

namespace {

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

// Gram-Schmidt: returns a copy of v with its projection on u removed.
std::vector<double> orthogonalise(std::vector<double> v, const std::vector<double>& u) {
  const double c = dot(v, u) / dot(u, u);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] -= c * u[i];
  return v;
}

CodebookSet book_from(const std::vector<std::vector<double>>& rows, Index books = 1) {
  CodebookSet b;
  b.num_books = books;
  b.codewords_per_book = static_cast<Index>(rows.size()) / books;
  b.dim = static_cast<Index>(rows[0].size());
  Tensor t = Tensor::matrix(static_cast<Index>(rows.size()), b.dim);
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < rows[r].size(); ++c) t.at(static_cast<Index>(r), static_cast<Index>(c)) = rows[r][c];
  b.codewords = Var(t);
  return b;
}

// Top eigenvalues of a symmetric matrix by power iteration with deflation.
std::vector<double> top_eigenvalues(std::vector<std::vector<double>> a, int count) {
  const std::size_t n = a.size();
  std::vector<double> out;
  for (int e = 0; e < count; ++e) {
    std::vector<double> v(n, 1.0);
    for (std::size_t i = 0; i < n; ++i) v[i] += 0.1 * static_cast<double>(i);
    double lambda = 0.0;
    for (int it = 0; it < 5000; ++it) {
      std::vector<double> w(n, 0.0);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) w[i] += a[i][j] * v[j];
      const double norm = std::sqrt(dot(w, w));
      if (norm == 0.0) break;
      for (double& x : w) x /= norm;
      lambda = norm;
      v = w;
    }
    out.push_back(lambda);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) a[i][j] -= lambda * v[i] * v[j];
  }
  return out;
}

struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() / ("mgvq_metrics_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST(SiSdr, OrthogonalNoiseOfEqualPowerIsZeroDb) {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const auto y = tk::random_signal(500, rng);
    auto e = orthogonalise(tk::random_signal(500, rng), y);
    const double a = 0.3 + rng.uniform();
    const double scale = std::sqrt(a * a * dot(y, y) / dot(e, e));
    std::vector<double> yhat(500);
    for (std::size_t i = 0; i < 500; ++i) yhat[i] = a * y[i] + scale * e[i];
    EXPECT_NEAR(si_sdr(Waveform(y), Waveform(yhat)), 0.0, 1e-9);
  }
}

TEST(SiSdr, MatchesPowerRatioOfOrthogonalDecomposition) {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const auto y = tk::random_signal(300, rng);
    const auto e = orthogonalise(tk::random_signal(300, rng), y);
    const double a = rng.uniform(0.1, 3.0);
    const double b = rng.uniform(0.01, 2.0);
    std::vector<double> yhat(300);
    for (std::size_t i = 0; i < 300; ++i) yhat[i] = a * y[i] + b * e[i];
    const double expect = 10.0 * std::log10(a * a * dot(y, y) / (b * b * dot(e, e)));
    EXPECT_NEAR(si_sdr(Waveform(y), Waveform(yhat)), expect, 1e-9);
  }
}

TEST(SiSdr, InvariantToEstimateScale) {
  Rng rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    const auto y = tk::random_signal(256, rng);
    const auto yhat = tk::random_signal(256, rng);
    double c = rng.uniform(0.01, 100.0);
    if (rng.below(2)) c = -c;
    std::vector<double> scaled(yhat);
    for (double& v : scaled) v *= c;
    EXPECT_NEAR(si_sdr(Waveform(y), Waveform(scaled)), si_sdr(Waveform(y), Waveform(yhat)), 1e-9);
  }
}

TEST(SiSdr, EdgeCases) {
  Rng rng(4);
  const Waveform y(tk::random_signal(100, rng));
  EXPECT_EQ(si_sdr(y, y), kSiSdrCapDb);
  EXPECT_THROW(si_sdr(Waveform(std::vector<double>(100, 0.0)), y), NumericError);
  EXPECT_THROW(si_sdr(y, Waveform(std::vector<double>(99, 0.0))), InvalidArgument);
  EXPECT_EQ(si_sdr(y, Waveform(std::vector<double>(100, 0.0))), -kSiSdrCapDb);
}

TEST(Lsd, ZeroForIdenticalAndSixDbForDoubling) {
  Rng rng(5);
  const Waveform y(tk::random_signal(4000, rng));
  EXPECT_EQ(log_spectral_distance(y, y), 0.0);
  Waveform twice = y;
  for (double& v : twice.samples) v *= 2.0;
  EXPECT_NEAR(log_spectral_distance(y, twice), 20.0 * std::log10(2.0), 1e-9);
  EXPECT_THROW(log_spectral_distance(y, Waveform(std::vector<double>(10, 0.0))), InvalidArgument);
}

TEST(Pca, MatchesCovarianceEigenvalues) {
  Rng rng(6);
  for (int trial = 0; trial < 5; ++trial) {
    const Index n = 12, d = 5;
    std::vector<std::vector<double>> rows(n);
    for (auto& r : rows) {
      r = tk::random_signal(d, rng, 1.0);
      r[0] *= 4.0;
      r[1] *= 2.0;
    }
    const auto proj = project_codebooks(book_from(rows));
    std::vector<double> mean(d, 0.0);
    for (const auto& r : rows)
      for (Index k = 0; k < d; ++k) mean[static_cast<std::size_t>(k)] += r[static_cast<std::size_t>(k)] / n;
    std::vector<std::vector<double>> cov(d, std::vector<double>(d, 0.0));
    double trace = 0.0;
    for (const auto& r : rows)
      for (Index i = 0; i < d; ++i)
        for (Index j = 0; j < d; ++j)
          cov[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] +=
              (r[static_cast<std::size_t>(i)] - mean[static_cast<std::size_t>(i)]) *
              (r[static_cast<std::size_t>(j)] - mean[static_cast<std::size_t>(j)]) / n;
    for (Index i = 0; i < d; ++i) trace += cov[static_cast<std::size_t>(i)][static_cast<std::size_t>(i)];
    const auto eig = top_eigenvalues(cov, 2);
    double vx = 0.0, vy = 0.0, mx = 0.0, my = 0.0;
    for (const auto& p : proj.points) {
      vx += p.x * p.x / n;
      vy += p.y * p.y / n;
      mx += p.x / n;
      my += p.y / n;
    }
    EXPECT_NEAR(mx, 0.0, 1e-12);
    EXPECT_NEAR(my, 0.0, 1e-12);
    EXPECT_NEAR(vx, eig[0], 1e-8 * eig[0]);
    EXPECT_NEAR(vy, eig[1], 1e-8 * eig[0]);
    ASSERT_EQ(proj.explained_variance.size(), 1u);
    EXPECT_NEAR(proj.explained_variance[0], (eig[0] + eig[1]) / trace, 1e-8);
  }
}

TEST(Pca, PlanarCodewordsKeepTheirGeometry) {
  Rng rng(7);
  // Points in the plane spanned by two orthonormal vectors of R^6.
  auto u = tk::random_signal(6, rng, 1.0);
  auto v = orthogonalise(tk::random_signal(6, rng, 1.0), u);
  const double nu = std::sqrt(dot(u, u)), nv = std::sqrt(dot(v, v));
  for (double& x : u) x /= nu;
  for (double& x : v) x /= nv;
  std::vector<std::vector<double>> rows;
  for (int i = 0; i < 10; ++i) {
    const double a = 3.0 * rng.normal(), b = rng.normal();
    std::vector<double> r(6);
    for (std::size_t k = 0; k < 6; ++k) r[k] = a * u[k] + b * v[k] + 0.5;
    rows.push_back(r);
  }
  const auto proj = project_codebooks(book_from(rows));
  EXPECT_NEAR(proj.explained_variance[0], 1.0, 1e-12);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows.size(); ++j) {
      double d2 = 0.0;
      for (std::size_t k = 0; k < 6; ++k) d2 += (rows[i][k] - rows[j][k]) * (rows[i][k] - rows[j][k]);
      const auto& p = proj.points[i];
      const auto& q = proj.points[j];
      EXPECT_NEAR(std::hypot(p.x - q.x, p.y - q.y), std::sqrt(d2), 1e-9);
    }
}

TEST(Pca, IdenticalCodewordsCollapseToOrigin) {
  const std::vector<std::vector<double>> rows(4, std::vector<double>{1.0, -2.0, 0.5});
  const auto proj = project_codebooks(book_from(rows));
  for (const auto& p : proj.points) {
    EXPECT_EQ(p.x, 0.0);
    EXPECT_EQ(p.y, 0.0);
  }
  EXPECT_EQ(proj.explained_variance[0], 1.0);
  EXPECT_THROW(project_codebooks(book_from({{1.0, 2.0}, {3.0, 4.0}})), InvalidArgument);
}

TEST(Pca, BooksAreProjectedSeparately) {
  Rng rng(8);
  const auto books = CodebookSet::random(2, 6, 4, rng);
  const auto proj = project_codebooks(books);
  ASSERT_EQ(proj.points.size(), 12u);
  ASSERT_EQ(proj.explained_variance.size(), 2u);
  for (std::size_t i = 0; i < 12; ++i) {
    EXPECT_EQ(proj.points[i].book, static_cast<Index>(i / 6));
    EXPECT_EQ(proj.points[i].index, static_cast<Index>(i % 6));
  }
}

TEST(Export, CsvFilesHaveOneRowPerCodeword) {
  TempDir dir;
  Rng rng(9);
  const auto books = CodebookSet::random(2, 5, 3, rng);
  export_codebook_projection(books, dir.path / "p.csv", dir.path / "p.svg");
  export_codewords_csv(books, dir.path / "w.csv");
  auto lines = [](const fs::path& p) {
    std::ifstream is(p);
    std::vector<std::string> out;
    for (std::string l; std::getline(is, l);) out.push_back(l);
    return out;
  };
  const auto p = lines(dir.path / "p.csv");
  ASSERT_EQ(p.size(), 11u);
  EXPECT_EQ(p[0], "book,index,x,y");
  const auto w = lines(dir.path / "w.csv");
  ASSERT_EQ(w.size(), 11u);
  EXPECT_EQ(w[0], "book,index,v0,v1,v2");
  EXPECT_EQ(std::count(w[1].begin(), w[1].end(), ','), 4);
  EXPECT_NE(lines(dir.path / "p.svg")[0].find("<svg"), std::string::npos);
}

TEST(Evaluate, ReportsNoisyBaselineAndCodebooks) {
  const auto cfg = tk::tiny_config(3);
  Enhancer model(cfg, 1);
  CorpusSpec spec;
  spec.num_pairs = 3;
  spec.min_duration = 0.1;
  spec.max_duration = 0.15;
  spec.seed = 4;
  const SyntheticCorpus corpus(spec);
  const auto feats = stub_provider(cfg.feature_dim, 0);
  const auto report = evaluate(model, corpus, feats, "abc");
  ASSERT_EQ(report.files.size(), 3u);
  double mean_noisy = 0.0;
  for (Index i = 0; i < 3; ++i) {
    const auto pair = corpus.get(i);
    const auto& f = report.files[static_cast<std::size_t>(i)];
    EXPECT_EQ(f.id, pair.id);
    EXPECT_DOUBLE_EQ(f.si_sdr_noisy, si_sdr(pair.clean, pair.noisy));
    const auto ctx = feats(pair.noisy);
    EXPECT_DOUBLE_EQ(f.si_sdr_enhanced, si_sdr(pair.clean, model.enhance(pair.noisy, &ctx)));
    EXPECT_FALSE(f.pesq.has_value());
    mean_noisy += f.si_sdr_noisy / 3.0;
  }
  EXPECT_NEAR(report.mean_si_sdr_noisy, mean_noisy, 1e-12);
  ASSERT_EQ(report.codebooks.size(), 4u);
  for (const auto& c : report.codebooks) {
    for (double p : c.perplexity) {
      EXPECT_GE(p, 1.0);
      EXPECT_LE(p, static_cast<double>(c.codewords) + 1e-9);
    }
  }
  const auto j = nlohmann::json::parse(report.to_json());
  EXPECT_EQ(j["schema_version"], EvalReport::kSchemaVersion);
  EXPECT_EQ(j["config_fingerprint"], "abc");
  EXPECT_TRUE(j["files"][0]["pesq"].is_null());
  EXPECT_NEAR(j["means"]["si_sdr_delta"].get<double>(), report.mean_si_sdr_enhanced - report.mean_si_sdr_noisy, 1e-12);
  // Evaluation is deterministic.
  EXPECT_EQ(evaluate(model, corpus, feats, "abc").to_json(), report.to_json());
}

TEST(Usage, SampledUsageIsSeededAndBounded) {
  const auto cfg = tk::tiny_config(3);
  Enhancer model(cfg, 1);
  CorpusSpec spec;
  spec.num_pairs = 2;
  spec.min_duration = spec.max_duration = 0.1;
  const SyntheticCorpus corpus(spec);
  const auto feats = stub_provider(cfg.feature_dim, 0);
  const auto a = sampled_codebook_usage(model, corpus, feats, 5, 2);
  const auto b = sampled_codebook_usage(model, corpus, feats, 5, 2);
  ASSERT_EQ(a.size(), 4u);
  for (std::size_t q = 0; q < a.size(); ++q) {
    EXPECT_EQ(a[q].perplexity, b[q].perplexity);
    for (double p : a[q].perplexity) {
      EXPECT_GE(p, 1.0);
      EXPECT_LE(p, static_cast<double>(a[q].codewords) + 1e-9);
    }
  }
  EXPECT_THROW(sampled_codebook_usage(model, corpus, feats, 5, 0), InvalidArgument);
}
