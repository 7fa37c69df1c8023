#include "mgvq/quantizer.hpp"

#include <cmath>

#include "mgvq/error.hpp"
#include "mgvq/ops.hpp"

namespace mgvq {

double TemperatureSchedule::at(Index step) const {
  return std::max(floor, start * std::pow(decay, static_cast<double>(step)));
}

void TemperatureSchedule::validate() const {
  if (!(start > 0.0) || !(floor > 0.0)) throw InvalidArgument("temperatures must be positive");
  if (floor > start) throw InvalidArgument("temperature floor exceeds the start value");
  if (!(decay > 0.0) || decay > 1.0) throw InvalidArgument("temperature decay must lie in (0, 1]");
}

void QuantizerConfig::validate() const {
  if (num_codebooks < 1) throw InvalidArgument("quantizer needs at least one codebook");
  if (codewords_per_book < 2) throw InvalidArgument("quantizer needs at least two codewords per book");
  if (codeword_dim < 1 || input_dim < 1 || output_dim < 1) throw InvalidArgument("quantizer dimensions must be positive");
  temperature.validate();
}

CodebookSet CodebookSet::random(Index books, Index codewords, Index dim, Rng& rng) {
  CodebookSet set{books, codewords, dim, {}};
  const double bound = 1.0 / std::sqrt(static_cast<double>(dim));
  Tensor t = Tensor::matrix(books * codewords, dim);
  for (double& v : t.storage()) v = rng.uniform(-bound, bound);
  set.codewords = make_parameter(std::move(t));
  return set;
}

std::span<const double> CodebookSet::codeword(Index book, Index index) const {
  return codewords.value().values().subspan(static_cast<std::size_t>((book * codewords_per_book + index) * dim),
                                            static_cast<std::size_t>(dim));
}

GumbelQuantizer::GumbelQuantizer(const QuantizerConfig& cfg, Rng& rng) : config_(cfg) {
  cfg.validate();
  logits_ = nn::Linear(cfg.input_dim, cfg.num_codebooks * cfg.codewords_per_book, rng);
  books_ = CodebookSet::random(cfg.num_codebooks, cfg.codewords_per_book, cfg.codeword_dim, rng);
  if (cfg.has_output_projection()) output_.emplace(cfg.num_codebooks * cfg.codeword_dim, cfg.output_dim, rng);
}

QuantizerOutput GumbelQuantizer::operator()(const Var& x, Mode mode, std::uint64_t noise_seed, double tau) const {
  if (!(tau > 0.0)) throw InvalidArgument("quantizer temperature must be positive");
  if (x.value().rank() != 2 || x.cols() != config_.input_dim) {
    throw InvalidArgument("quantizer input must be [T x " + std::to_string(config_.input_dim) + "], got " +
                          x.value().shape_string());
  }
  if (!x.value().all_finite()) throw NumericError("quantizer input contains non-finite values");
  const Index g = config_.num_codebooks;
  const Index v = config_.codewords_per_book;
  Var logits = logits_(x);
  if (!logits.value().all_finite()) throw NumericError("quantizer logits are non-finite");

  std::optional<Tensor> noise;
  if (mode == Mode::Train) noise = gumbel_noise(x.rows(), g * v, noise_seed);
  const Tensor* np = noise ? &*noise : nullptr;

  QuantizerOutput out;
  out.frames = x.rows();
  out.num_books = g;
  out.codewords_per_book = v;
  out.probs = gumbel_softmax(logits, g, np, tau);
  out.selections = hard_selections(logits.value(), g, np);
  Var concat = straight_through_lookup(out.probs, out.selections, books_.codewords, g);
  out.quantized = output_ ? (*output_)(concat) : concat;
  out.diversity_loss = diversity_loss(out.probs, g, v, config_.diversity);
  return out;
}

void GumbelQuantizer::collect(const std::string& prefix, ParameterList& out) const {
  logits_.collect(prefix + ".logits", out);
  out.push_back({prefix + ".codebook", books_.codewords});
  if (output_) output_->collect(prefix + ".output", out);
}

Tensor gumbel_noise(Index frames, Index width, std::uint64_t seed) {
  Rng rng(seed);
  Tensor n = Tensor::matrix(frames, width);
  for (double& x : n.storage()) x = rng.gumbel();
  return n;
}

Var gumbel_softmax(const Var& logits, Index books, const Tensor* noise, double tau) {
  if (!(tau > 0.0)) throw InvalidArgument("softmax temperature must be positive");
  const Index t = logits.rows();
  const Index width = logits.cols();
  if (books < 1 || width % books != 0) throw InvalidArgument("logit width not divisible by book count");
  if (noise && !noise->same_shape(logits.value())) throw InvalidArgument("noise shape differs from logits");
  const Index v = width / books;
  Tensor p = Tensor::matrix(t, width);
  const double* ld = logits.value().data();
  for (Index r = 0; r < t; ++r) {
    for (Index g = 0; g < books; ++g) {
      const Index off = r * width + g * v;
      double mx = -INFINITY;
      for (Index k = 0; k < v; ++k) {
        const double z = (ld[off + k] + (noise ? (*noise)[off + k] : 0.0)) / tau;
        p[off + k] = z;
        mx = std::max(mx, z);
      }
      double s = 0.0;
      for (Index k = 0; k < v; ++k) s += (p[off + k] = std::exp(p[off + k] - mx));
      for (Index k = 0; k < v; ++k) p[off + k] /= s;
    }
  }
  Tensor saved = p;
  return make_result(std::move(p), {logits}, [saved, books, v, tau](const Tensor& g, std::span<const NodePtr> in) {
    if (!in[0]->requires_grad) return;
    auto& gl = in[0]->grad_buffer();
    const Index rows = saved.rows();
    const Index width = books * v;
    for (Index r = 0; r < rows; ++r) {
      for (Index b = 0; b < books; ++b) {
        const Index off = r * width + b * v;
        double dotp = 0.0;
        for (Index k = 0; k < v; ++k) dotp += g[off + k] * saved[off + k];
        for (Index k = 0; k < v; ++k) gl[off + k] += saved[off + k] * (g[off + k] - dotp) / tau;
      }
    }
  });
}

std::vector<Index> hard_selections(const Tensor& logits, Index books, const Tensor* noise) {
  const Index t = logits.rows();
  const Index width = logits.cols();
  const Index v = width / books;
  std::vector<Index> sel(static_cast<std::size_t>(t * books));
  for (Index r = 0; r < t; ++r) {
    for (Index g = 0; g < books; ++g) {
      const Index off = r * width + g * v;
      Index best = 0;
      double best_val = -INFINITY;
      for (Index k = 0; k < v; ++k) {
        const double z = logits[off + k] + (noise ? (*noise)[off + k] : 0.0);
        if (z > best_val) {
          best_val = z;
          best = k;
        }
      }
      sel[static_cast<std::size_t>(r * books + g)] = best;
    }
  }
  return sel;
}

Var straight_through_lookup(const Var& probs, std::span<const Index> selections, const Var& codewords,
                            Index books) {
  const Index t = probs.rows();
  const Index width = probs.cols();
  const Index v = width / books;
  const Index d = codewords.cols();
  if (codewords.rows() != books * v) throw InvalidArgument("codebook rows do not match probability width");
  if (static_cast<Index>(selections.size()) != t * books) throw InvalidArgument("selection count mismatch");
  std::vector<Index> sel(selections.begin(), selections.end());
  Tensor out = Tensor::matrix(t, books * d);
  const auto cm = codewords.value().mat();
  for (Index r = 0; r < t; ++r) {
    for (Index g = 0; g < books; ++g) {
      const Index k = sel[static_cast<std::size_t>(r * books + g)];
      if (k < 0 || k >= v) throw InvalidArgument("selection index out of range");
      out.mat().block(r, g * d, 1, d) = cm.row(g * v + k);
    }
  }
  return make_result(std::move(out), {probs, codewords},
                     [sel = std::move(sel), books, v, d](const Tensor& grad, std::span<const NodePtr> in) {
                       const auto gm = grad.mat();
                       const Index rows = gm.rows();
                       if (in[0]->requires_grad) {
                         auto gp = in[0]->grad_buffer().mat();
                         const auto cm = in[1]->value.mat();
                         for (Index g = 0; g < books; ++g) {
                           gp.middleCols(g * v, v).noalias() += gm.middleCols(g * d, d) * cm.middleRows(g * v, v).transpose();
                         }
                       }
                       if (in[1]->requires_grad) {
                         auto gc = in[1]->grad_buffer().mat();
                         for (Index r = 0; r < rows; ++r) {
                           for (Index g = 0; g < books; ++g) {
                             gc.row(g * v + sel[static_cast<std::size_t>(r * books + g)]) += gm.block(r, g * d, 1, d);
                           }
                         }
                       }
                     });
}

Var diversity_loss(const Var& probs, Index books, Index codewords, DiversityAggregation agg) {
  const Index t = probs.rows();
  const Index width = probs.cols();
  if (t < 1) throw InvalidArgument("diversity loss needs at least one frame");
  if (width != books * codewords) throw InvalidArgument("probability width does not match G*V");
  const Tensor& p = probs.value();
  for (Index r = 0; r < t; ++r) {
    for (Index g = 0; g < books; ++g) {
      double s = 0.0;
      for (Index k = 0; k < codewords; ++k) {
        const double x = p[r * width + g * codewords + k];
        if (!(x >= 0.0)) throw InvalidArgument("probabilities must be non-negative");
        s += x;
      }
      if (std::abs(s - 1.0) > 1e-4) throw InvalidArgument("probability row is off the simplex");
    }
  }
  const double norm = 1.0 / static_cast<double>(books * codewords);
  const double inv_t = 1.0 / static_cast<double>(t);
  auto plogp = [](double x) { return x > 0.0 ? x * std::log(x) : 0.0; };

  if (agg == DiversityAggregation::BatchAveraged) {
    std::vector<double> avg(static_cast<std::size_t>(width), 0.0);
    for (Index r = 0; r < t; ++r) {
      for (Index c = 0; c < width; ++c) avg[static_cast<std::size_t>(c)] += p[r * width + c];
    }
    double loss = 0.0;
    for (double& a : avg) {
      a *= inv_t;
      loss += plogp(a);
    }
    loss *= norm;
    return make_result(Tensor::scalar(loss), {probs},
                       [avg = std::move(avg), norm, inv_t, width](const Tensor& g, std::span<const NodePtr> in) {
                         if (!in[0]->requires_grad) return;
                         auto& gp = in[0]->grad_buffer();
                         const Index rows = gp.rows();
                         std::vector<double> dcol(static_cast<std::size_t>(width));
                         for (Index c = 0; c < width; ++c) {
                           const double a = avg[static_cast<std::size_t>(c)];
                           dcol[static_cast<std::size_t>(c)] = a > 0.0 ? g[0] * norm * inv_t * (std::log(a) + 1.0) : 0.0;
                         }
                         for (Index r = 0; r < rows; ++r) {
                           for (Index c = 0; c < width; ++c) gp[r * width + c] += dcol[static_cast<std::size_t>(c)];
                         }
                       });
  }

  double loss = 0.0;
  for (double x : p.values()) loss += plogp(x);
  loss *= norm * inv_t;
  return make_result(Tensor::scalar(loss), {probs}, [norm, inv_t](const Tensor& g, std::span<const NodePtr> in) {
    if (!in[0]->requires_grad) return;
    auto& gp = in[0]->grad_buffer();
    const Tensor& pv = in[0]->value;
    for (Index i = 0; i < pv.size(); ++i) {
      if (pv[i] > 0.0) gp[i] += g[0] * norm * inv_t * (std::log(pv[i]) + 1.0);
    }
  });
}

std::vector<double> codebook_perplexity(std::span<const Index> selections, Index books, Index codewords) {
  const Index n = static_cast<Index>(selections.size());
  if (books < 1 || n < books || n % books != 0) throw InvalidArgument("perplexity needs at least one frame per book");
  const Index frames = n / books;
  std::vector<double> out;
  for (Index g = 0; g < books; ++g) {
    std::vector<Index> counts(static_cast<std::size_t>(codewords), 0);
    for (Index t = 0; t < frames; ++t) {
      const Index k = selections[static_cast<std::size_t>(t * books + g)];
      if (k < 0 || k >= codewords) throw InvalidArgument("selection index out of range");
      ++counts[static_cast<std::size_t>(k)];
    }
    double h = 0.0;
    for (Index c : counts) {
      if (c == 0) continue;
      const double q = static_cast<double>(c) / static_cast<double>(frames);
      h -= q * std::log(q);
    }
    out.push_back(std::exp(h));
  }
  return out;
}

}  // namespace mgvq
