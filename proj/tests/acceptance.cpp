// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <unistd.h>

#include "mgvq/config.hpp"
#include "mgvq/features.hpp"
#include "mgvq/metrics.hpp"
#include "mgvq/ops.hpp"
#include "mgvq/training.hpp"
#include "test_util.hpp"

using namespace mgvq;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), f, a, b, c, d);
  return buf;
}

Waveform noise(Index n, std::uint64_t seed, double scale = 0.3) {
  Rng rng(seed);
  return Waveform(tk::random_signal(n, rng, scale));
}

double mean(const std::vector<double>& v, std::size_t from, std::size_t to) {
  return std::accumulate(v.begin() + static_cast<std::ptrdiff_t>(from), v.begin() + static_cast<std::ptrdiff_t>(to), 0.0) /
         static_cast<double>(to - from);
}

double mean_usage(const std::vector<CodebookUsage>& usage) {
  double m = 0.0;
  for (const auto& u : usage) m += u.mean_perplexity() / static_cast<double>(usage.size());
  return m;
}

Outcome loss_identities() {
  const Waveform y = noise(4000, 1);
  Waveform y2 = y;
  for (double& v : y2.samples) v *= 2.0;
  const double se = se_loss(y, y, MultiStftConfig::standard());
  bool sc_exact = true;
  double worst_sc = 1.0;
  for (const auto& r : MultiStftConfig::standard().resolutions) {
    const double sc = spectral_convergence_loss(y, y2, r);
    if (sc != 1.0) {
      sc_exact = false;
      worst_sc = sc;
    }
  }
  const Var uniform(Tensor::matrix(10, 320, 1.0 / 320.0));
  const double ld = diversity_loss(uniform, 1, 320, DiversityAggregation::BatchAveraged).item();
  const double ld_err = std::abs(ld + std::log(320.0) / 320.0);
  return {se == 0.0 && sc_exact && ld_err <= 1e-9,
          fmt("se(y,y)=%.3g sc(y,2y)=%.17g |Ld+ln320/320|=%.2e", se, worst_sc, ld_err)};
}

Outcome gradient_correctness() {
  const Index n = 256;
  const Waveform y = noise(n, 2);
  const Waveform yh = noise(n, 3);
  const auto cfg = MultiStftConfig::standard();
  const auto lg = se_loss_with_grad(y, yh, cfg);
  Tensor t({n}, yh.samples);
  const auto fd = tk::numeric_gradient(t, [&] { return se_loss(y, Waveform(tk::to_vector(t)), cfg); });
  const double se_err = tk::relative_error(lg.grad, fd);

  // Straight-through path against finite differences of its soft relaxation.
  Rng rng(4);
  QuantizerConfig qc;
  qc.num_codebooks = 2;
  qc.codewords_per_book = 8;
  qc.codeword_dim = 3;
  qc.input_dim = 5;
  qc.output_dim = 4;
  GumbelQuantizer q(qc, rng);
  const Index T = 6, G = 2, V = 8, d = 3;
  const Var x(tk::random_tensor({T, 5}, rng));
  const Tensor c = tk::random_tensor({T, 4}, rng);
  const std::uint64_t seed = 21;
  const double tau = 1.0;
  auto out = q(x, Mode::Train, seed, tau);
  ops::dot_constant(out.quantized, c).backward();
  const auto analytic = tk::to_vector(q.logit_projection().weight.grad());
  const Tensor gn = gumbel_noise(T, G * V, seed);
  Tensor w = q.logit_projection().weight.value();
  const Tensor& b = q.logit_projection().bias.value();
  const Tensor& books = q.codebooks().codewords.value();
  const Tensor& pw = q.output_projection()->weight.value();
  const Tensor& pb = q.output_projection()->bias.value();
  auto soft = [&] {
    double f = 0.0;
    for (Index r = 0; r < T; ++r) {
      std::vector<double> concat(static_cast<std::size_t>(G * d), 0.0);
      for (Index g = 0; g < G; ++g) {
        std::vector<double> z(static_cast<std::size_t>(V));
        double mx = -INFINITY;
        for (Index k = 0; k < V; ++k) {
          double l = b[g * V + k];
          for (Index i = 0; i < 5; ++i) l += x.value().at(r, i) * w.at(i, g * V + k);
          z[static_cast<std::size_t>(k)] = (l + gn.at(r, g * V + k)) / tau;
          mx = std::max(mx, z[static_cast<std::size_t>(k)]);
        }
        double s = 0.0;
        for (double& e : z) s += (e = std::exp(e - mx));
        for (Index k = 0; k < V; ++k)
          for (Index j = 0; j < d; ++j)
            concat[static_cast<std::size_t>(g * d + j)] += z[static_cast<std::size_t>(k)] / s * books.at(g * V + k, j);
      }
      for (Index o = 0; o < 4; ++o) {
        double acc = pb[o];
        for (Index i = 0; i < G * d; ++i) acc += concat[static_cast<std::size_t>(i)] * pw.at(i, o);
        f += c.at(r, o) * acc;
      }
    }
    return f;
  };
  const double st_err = tk::relative_error(analytic, tk::numeric_gradient(w, soft));
  return {se_err < 1e-3 && st_err < 1e-2, fmt("se rel err %.2e (<1e-3), straight-through rel err %.2e (<1e-2)", se_err, st_err)};
}

Outcome simplex_and_bounds() {
  Rng rng(5);
  QuantizerConfig qc;
  qc.num_codebooks = 2;
  qc.codewords_per_book = 24;
  qc.codeword_dim = 4;
  qc.input_dim = qc.output_dim = 8;
  GumbelQuantizer q(qc, rng);
  const double lo = -std::log(24.0) / 24.0;
  double worst_sum = 0.0, min_p = 1.0, min_ld = 0.0, max_ld = lo;
  for (int i = 0; i < 1000; ++i) {
    const double tau = rng.uniform(0.5, 2.0);
    const Index frames = 1 + static_cast<Index>(rng.below(16));
    const auto r = q(Var(tk::random_tensor({frames, 8}, rng, 2.0)), i % 2 ? Mode::Train : Mode::Eval, rng.next(), tau);
    const Tensor& p = r.probs.value();
    for (Index t = 0; t < frames; ++t)
      for (Index g = 0; g < 2; ++g) {
        double s = 0.0;
        for (Index k = 0; k < 24; ++k) {
          s += p.at(t, g * 24 + k);
          min_p = std::min(min_p, p.at(t, g * 24 + k));
        }
        worst_sum = std::max(worst_sum, std::abs(s - 1.0));
      }
    min_ld = std::min(min_ld, r.diversity_loss.item());
    max_ld = std::max(max_ld, r.diversity_loss.item());
  }
  const bool ok = worst_sum < 1e-12 && min_p >= 0.0 && min_ld >= lo - 1e-12 && max_ld <= 0.0;
  return {ok, fmt("max |sum-1| %.1e, min p %.2e, Ld in [%.5f, %.5f]", worst_sum, min_p, min_ld, max_ld)};
}

Outcome shape_contract() {
  const auto cfg = EnhancerConfig::desk();
  Enhancer model(cfg, 1);
  const auto feats = stub_provider(cfg.feature_dim, 0);
  Rng rng(6);
  int bad = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const Index n = 64 + static_cast<Index>(rng.below(48000 - 64 + 1));
    const Waveform x = noise(n, 100 + static_cast<std::uint64_t>(trial), 0.1);
    const auto ctx = feats(x);
    NoGradGuard guard;
    const auto r = model.forward(x, &ctx, Mode::Eval, 0);
    const Index padded = valid_length(n, cfg);
    bool ok = r.output.cols() == n && padded % cfg.total_stride() == 0 && padded >= n && padded - n < cfg.total_stride();
    for (Index level = 1; level <= cfg.depth; ++level) {
      ok = ok && r.activations.encoder_outputs[static_cast<std::size_t>(level - 1)].cols() == (padded >> level);
      ok = ok && r.activations.decoder_inputs[static_cast<std::size_t>(level - 1)].cols() == (padded >> level);
    }
    if (!ok) ++bad;
  }
  return {bad == 0, fmt("%.0f of 50 lengths violated the contract", bad)};
}

Outcome overfit_sanity() {
  CorpusSpec spec;
  spec.num_pairs = 1;
  spec.min_duration = spec.max_duration = 0.5;
  spec.snr_db = {5.0};
  spec.seed = 3;
  const SyntheticCorpus corpus(spec);
  const auto cfg = EnhancerConfig::desk();
  Enhancer model(cfg, 1);
  auto tc = TrainConfig::desk(cfg.depth);
  tc.batch_size = 1;
  tc.total_steps = 200;
  tc.segment_seconds = 0.0;
  const auto feats = stub_provider(cfg.feature_dim, 0);
  Trainer trainer(model, corpus, tc, feats);
  std::vector<double> se;
  for (Index s = 0; s < 200; ++s) se.push_back(trainer.step().loss.se);
  const double ratio = mean(se, 190, 200) / mean(se, 0, 10);
  const auto pair = corpus.get(0);
  const auto ctx = feats(pair.noisy);
  const double noisy = si_sdr(pair.clean, pair.noisy);
  const double enhanced = si_sdr(pair.clean, model.enhance(pair.noisy, &ctx));
  return {ratio <= 0.5 && enhanced - noisy >= 3.0,
          fmt("L_se ratio %.3f (<=0.5), SI-SDR %.2f -> %.2f dB (gain %.2f, >=3)", ratio, noisy, enhanced, enhanced - noisy)};
}

Outcome diversity_effect() {
  CorpusSpec spec;
  spec.num_pairs = 8;
  spec.min_duration = spec.max_duration = 0.25;
  spec.seed = 11;
  const SyntheticCorpus corpus(spec);
  const auto cfg = EnhancerConfig::desk();
  const auto feats = stub_provider(cfg.feature_dim, 0);
  auto run = [&](double lambda) {
    Enhancer model(cfg, 1);
    auto tc = TrainConfig::desk(cfg.depth);
    tc.batch_size = 2;
    tc.total_steps = 500;
    tc.segment_seconds = 0.0;
    tc.lambda.assign(static_cast<std::size_t>(cfg.depth + 1), lambda);
    Trainer trainer(model, corpus, tc, feats);
    for (Index s = 0; s < tc.total_steps; ++s) trainer.step();
    return std::make_pair(mean_usage(sampled_codebook_usage(model, corpus, feats, 99, 4)),
                          mean_usage(codebook_usage(model, corpus, feats)));
  };
  const auto with = run(0.01);
  const auto without = run(0.0);
  return {with.first > without.first,
          fmt("sampled perplexity %.3f (lambda 0.01) vs %.3f (lambda 0); argmax %.3f vs %.3f", with.first, without.first,
              with.second, without.second)};
}

Outcome ablation_harness() {
  EnhancerConfig cfg = EnhancerConfig::desk();
  cfg.depth = 5;
  cfg.hidden_dim = 16;
  cfg.attention_heads = 2;
  cfg.ffn_dim = 32;
  cfg.feature_dim = 8;
  cfg.vq_configs.clear();
  const std::vector<Index> sizes{16, 16, 32, 48, 64, 96};
  for (Index i = 0; i <= 5; ++i) {
    QuantizerConfig q;
    q.num_codebooks = i == 0 ? 2 : 1;
    q.codewords_per_book = sizes[static_cast<std::size_t>(i)];
    q.codeword_dim = 8;
    q.input_dim = q.output_dim = 16;
    cfg.vq_configs.push_back(q);
  }
  cfg.vq_enabled.assign(6, true);
  auto tc = TrainConfig::desk(5);
  tc.batch_size = 2;
  tc.total_steps = 3;
  tc.segment_seconds = 0.0;
  CorpusSpec spec;
  spec.num_pairs = 4;
  spec.min_duration = 0.1;
  spec.max_duration = 0.15;
  const SyntheticCorpus train_corpus(spec);
  spec.seed = 1;
  spec.num_pairs = 2;
  const SyntheticCorpus eval_corpus(spec);
  const auto masks = single_vq_ablation_masks(5);
  const auto report = run_ablation(masks, cfg, tc, train_corpus, eval_corpus, stub_provider(8, 0), 1);
  bool ok = masks.size() == 7 && report.rows.size() == 7 && report.steps == 3;
  for (std::size_t r = 0; ok && r < report.rows.size(); ++r) {
    const auto& row = report.rows[r];
    ok = row.mask == masks[r] && row.perplexity.size() == 6 && std::isfinite(row.final_se) &&
         std::isfinite(row.final_total) && std::isfinite(row.eval_si_sdr) && row.mean_perplexity >= 1.0;
    for (std::size_t i = 0; ok && i < 6; ++i) ok = row.perplexity[i].has_value() == row.mask[i];
    if (r > 0) ok = ok && !row.mask[r - 1];
  }
  return {ok, fmt("%.0f rows for depth 5 (all-on plus each single quantizer off)", static_cast<double>(report.rows.size()))};
}

Outcome determinism_and_checkpointing() {
  const auto cfg = EnhancerConfig::desk();
  CorpusSpec spec;
  spec.num_pairs = 4;
  spec.min_duration = 0.1;
  spec.max_duration = 0.2;
  const SyntheticCorpus corpus(spec);
  auto tc = TrainConfig::desk(cfg.depth);
  tc.batch_size = 2;
  tc.total_steps = 6;
  tc.segment_seconds = 0.1;
  tc.remix = true;
  tc.bandmask = true;
  const auto feats = stub_provider(cfg.feature_dim, 0);
  auto curve = [&](Index steps, Trainer& t) {
    std::vector<double> out;
    for (Index s = 0; s < steps; ++s) out.push_back(t.step().loss.total);
    return out;
  };
  Enhancer a(cfg, 4), b(cfg, 4);
  Trainer ta(a, corpus, tc, feats), tb(b, corpus, tc, feats);
  const auto ca = curve(6, ta);
  const auto cb = curve(6, tb);

  const fs::path dir = fs::temp_directory_path() / ("mgvq_accept_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  Enhancer first(cfg, 4);
  Trainer tf(first, corpus, tc, feats);
  auto resumed = curve(3, tf);
  save_checkpoint(dir / "mid.ckpt", Checkpoint{cfg, tc, tf.state(), ""});
  const auto ck = load_checkpoint(dir / "mid.ckpt");
  fs::remove_all(dir);
  Enhancer second(ck.model, 0);
  Trainer ts(second, corpus, ck.train, feats);
  ts.restore(ck.state);
  const auto rest = curve(3, ts);
  resumed.insert(resumed.end(), rest.begin(), rest.end());
  return {ca == cb && resumed == ca, std::string("rerun ") + (ca == cb ? "bit-exact" : "differs") + ", resume " +
                                         (resumed == ca ? "bit-exact" : "differs") + " over 6 steps"};
}

Outcome snr_exactness() {
  CorpusSpec spec;
  spec.num_pairs = 100;
  spec.min_duration = 0.5;
  spec.max_duration = 1.5;
  spec.seed = 12;
  double worst = 0.0;
  for (Index i = 0; i < spec.num_pairs; ++i) {
    const auto p = synth_pair(spec, i);
    // Independent measurement: 20 ms frames above -40 dBFS RMS.
    const std::size_t frame = 320;
    double pc = 0.0, pn = 0.0;
    for (std::size_t s = 0; s < p.clean.samples.size(); s += frame) {
      const std::size_t e = std::min(p.clean.samples.size(), s + frame);
      double energy = 0.0;
      for (std::size_t k = s; k < e; ++k) energy += p.clean.samples[k] * p.clean.samples[k];
      if (std::sqrt(energy / static_cast<double>(e - s)) <= 0.01) continue;
      for (std::size_t k = s; k < e; ++k) {
        const double n = p.noisy.samples[k] - p.clean.samples[k];
        pc += p.clean.samples[k] * p.clean.samples[k];
        pn += n * n;
      }
    }
    worst = std::max(worst, std::abs(10.0 * std::log10(pc / pn) - p.snr_db));
  }
  return {worst <= 0.01, fmt("max |measured - requested| = %.2e dB over 100 pairs", worst)};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"loss identities", loss_identities},
      {"gradient correctness", gradient_correctness},
      {"simplex and bounds", simplex_and_bounds},
      {"shape contract", shape_contract},
      {"overfit sanity", overfit_sanity},
      {"diversity-loss effect", diversity_effect},
      {"ablation harness", ablation_harness},
      {"determinism and checkpointing", determinism_and_checkpointing},
      {"SNR exactness", snr_exactness},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!o.pass) ++failures;
    std::cout << (o.pass ? "PASS" : "FAIL") << " [" << i + 1 << "] " << criteria[i].first << ": " << o.detail << " ("
              << fmt("%.1f", sec) << " s)" << std::endl;
  }
  std::cout << (criteria.size() - static_cast<std::size_t>(failures)) << "/" << criteria.size() << " criteria passed"
            << std::endl;
  return failures == 0 ? 0 : 1;
}
