#include "mgvq/training.hpp"

#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>

#include "mgvq/error.hpp"
#include "mgvq/metrics.hpp"
#include "mgvq/ops.hpp"

namespace mgvq {

TrainConfig TrainConfig::full(Index depth) {
  TrainConfig c;
  c.lambda.assign(static_cast<std::size_t>(depth + 1), 0.01);
  return c;
}

TrainConfig TrainConfig::desk(Index depth) {
  TrainConfig c = full(depth);
  c.lr_max = 1e-3;
  c.batch_size = 8;
  c.total_steps = 2000;
  c.segment_seconds = 1.0;
  return c;
}

double TrainConfig::learning_rate(Index step) const {
  const Index warm = std::max<Index>(1, static_cast<Index>(std::lround(warmup_fraction * total_steps)));
  if (step < warm) return lr_max * static_cast<double>(step + 1) / static_cast<double>(warm);
  const Index span = std::max<Index>(1, total_steps - warm);
  const double progress = std::min(1.0, static_cast<double>(step - warm) / static_cast<double>(span));
  return lr_max * 0.5 * (1.0 + std::cos(M_PI * progress));
}

void TrainConfig::validate(Index depth) const {
  if (!(lr_max > 0.0)) throw InvalidArgument("lr_max must be positive");
  if (batch_size < 1) throw InvalidArgument("batch_size must be at least 1");
  if (total_steps < 1) throw InvalidArgument("total_steps must be at least 1");
  if (static_cast<Index>(lambda.size()) != depth + 1) {
    throw InvalidArgument("lambda needs depth+1 = " + std::to_string(depth + 1) + " entries, got " +
                          std::to_string(lambda.size()));
  }
  for (double l : lambda) {
    if (!(l >= 0.0) || !std::isfinite(l)) throw InvalidArgument("lambda weights must be finite and non-negative");
  }
  if (checkpoint_interval < 0) throw InvalidArgument("checkpoint_interval must be non-negative");
  if (warmup_fraction < 0.0 || warmup_fraction > 1.0) throw InvalidArgument("warmup_fraction must lie in [0, 1]");
  if (!(clip_norm > 0.0)) throw InvalidArgument("clip_norm must be positive");
  if (segment_seconds < 0.0) throw InvalidArgument("segment_seconds must be non-negative");
  stft.validate();
}

Var se_loss_var(const Var& yhat, const Waveform& y, const MultiStftConfig& cfg, SeLossTerms* terms) {
  if (yhat.value().rank() != 2 || yhat.rows() != 1) throw InvalidArgument("estimate must be [1 x T]");
  if (!yhat.value().all_finite()) {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    if (terms) {
      terms->l1 = nan;
      terms->spectral_convergence.assign(cfg.resolutions.size(), nan);
      terms->log_magnitude.assign(cfg.resolutions.size(), nan);
    }
    return make_result(Tensor::scalar(nan), {yhat}, [](const Tensor&, std::span<const NodePtr>) {});
  }
  const auto v = yhat.value().values();
  Waveform est(std::vector<double>(v.begin(), v.end()), y.sample_rate);
  LossWithGrad lg = se_loss_with_grad(y, est, cfg);
  if (terms) *terms = lg.terms;
  return make_result(Tensor::scalar(lg.value), {yhat},
                     [grad = std::move(lg.grad)](const Tensor& g, std::span<const NodePtr> in) {
                       if (!in[0]->requires_grad) return;
                       auto& buf = in[0]->grad_buffer();
                       for (std::size_t i = 0; i < grad.size(); ++i) buf[static_cast<Index>(i)] += g[0] * grad[i];
                     });
}

TotalLoss total_loss(const Var& yhat, const Waveform& y, const std::vector<QuantizerOutput>& vq_outputs,
                     const std::vector<Index>& vq_layers, std::span<const double> lambda,
                     const MultiStftConfig& cfg) {
  if (vq_outputs.size() != vq_layers.size()) throw InvalidArgument("one layer index per quantizer output required");
  TotalLoss out;
  out.terms.diversity.assign(lambda.size(), std::nullopt);
  std::vector<Var> terms{se_loss_var(yhat, y, cfg, &out.terms.se_terms)};
  std::vector<double> weights{1.0};
  out.terms.se = terms[0].item();
  for (std::size_t k = 0; k < vq_outputs.size(); ++k) {
    const Index layer = vq_layers[k];
    if (layer < 0 || layer >= static_cast<Index>(lambda.size())) {
      throw InvalidArgument("quantizer index " + std::to_string(layer) + " has no lambda weight (" +
                            std::to_string(lambda.size()) + " given)");
    }
    auto& slot = out.terms.diversity[static_cast<std::size_t>(layer)];
    if (slot) throw InvalidArgument("duplicate diversity term for quantizer " + std::to_string(layer));
    slot = vq_outputs[k].diversity_loss.item();
    terms.push_back(vq_outputs[k].diversity_loss);
    weights.push_back(lambda[static_cast<std::size_t>(layer)]);
  }
  out.total = ops::weighted_sum(terms, weights);
  out.terms.total = out.total.item();
  return out;
}

Adam::Adam(ParameterList params, double beta1, double beta2, double eps)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : params_) {
    m_.emplace_back(p.var.shape(), 0.0);
    v_.emplace_back(p.var.shape(), 0.0);
  }
}

void Adam::step(double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Var p = params_[i].var;
    if (!p.has_grad()) continue;
    const Tensor& g = p.grad();
    Tensor& w = p.mutable_value();
    Tensor& m = m_[i];
    Tensor& v = v_[i];
    for (Index k = 0; k < w.size(); ++k) {
      m[k] = beta1_ * m[k] + (1.0 - beta1_) * g[k];
      v[k] = beta2_ * v[k] + (1.0 - beta2_) * g[k] * g[k];
      w[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps_);
    }
  }
}

double clip_grad_norm(const ParameterList& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params) {
    if (!p.var.has_grad()) continue;
    for (double g : p.var.grad().values()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (auto p : params) {
      if (!p.var.has_grad()) continue;
      for (double& g : p.var.grad_buffer().storage()) g *= s;
    }
  }
  return norm;
}

Trainer::Trainer(Enhancer& model, const Corpus& corpus, TrainConfig cfg, FeatureProvider features)
    : model_(model),
      corpus_(corpus),
      config_(std::move(cfg)),
      features_(std::move(features)),
      optimizer_(model.parameters(), config_.beta1, config_.beta2, config_.adam_eps),
      rng_(derive_seed({config_.seed, 0x747261696e})) {
  config_.validate(model.config().depth);
  if (corpus_.size() < 1) throw InvalidArgument("training corpus is empty");
  if (model.config().fusion_enabled && !features_) throw InvalidArgument("fusion enabled but no feature provider");
}

std::vector<PairSample> Trainer::draw_batch() {
  std::vector<PairSample> batch;
  for (Index b = 0; b < config_.batch_size; ++b) {
    PairSample s = corpus_.get(static_cast<Index>(rng_.below(static_cast<std::uint64_t>(corpus_.size()))));
    if (config_.segment_seconds > 0.0) {
      const Index seg = std::max<Index>(1, static_cast<Index>(std::lround(config_.segment_seconds * s.clean.sample_rate)));
      const Index n = s.clean.size();
      const Index offset = n > seg ? static_cast<Index>(rng_.below(static_cast<std::uint64_t>(n - seg + 1))) : 0;
      auto crop = [&](Waveform& w) {
        std::vector<double> out(static_cast<std::size_t>(seg), 0.0);
        for (Index i = 0; i < seg && offset + i < n; ++i) out[static_cast<std::size_t>(i)] = w.samples[static_cast<std::size_t>(offset + i)];
        w.samples = std::move(out);
      };
      crop(s.clean);
      crop(s.noisy);
    }
    batch.push_back(std::move(s));
  }
  if (config_.remix && batch.size() >= 2) {
    remix_augment(batch, derive_seed({config_.seed, static_cast<std::uint64_t>(step_), 0x72656d6978}));
  }
  if (config_.bandmask) {
    for (std::size_t b = 0; b < batch.size(); ++b) {
      batch[b] = bandmask_augment(batch[b], derive_seed({config_.seed, static_cast<std::uint64_t>(step_), b, 0x62616e64}));
    }
  }
  return batch;
}

namespace {

void accumulate_breakdown(LossBreakdown& acc, const LossBreakdown& t, double w) {
  if (acc.se_terms.spectral_convergence.empty()) {
    acc.se_terms.spectral_convergence.assign(t.se_terms.spectral_convergence.size(), 0.0);
    acc.se_terms.log_magnitude.assign(t.se_terms.log_magnitude.size(), 0.0);
    acc.diversity.assign(t.diversity.size(), std::nullopt);
  }
  acc.se_terms.l1 += w * t.se_terms.l1;
  for (std::size_t i = 0; i < t.se_terms.spectral_convergence.size(); ++i) {
    acc.se_terms.spectral_convergence[i] += w * t.se_terms.spectral_convergence[i];
    acc.se_terms.log_magnitude[i] += w * t.se_terms.log_magnitude[i];
  }
  for (std::size_t i = 0; i < t.diversity.size(); ++i) {
    if (t.diversity[i]) acc.diversity[i] = acc.diversity[i].value_or(0.0) + w * *t.diversity[i];
  }
  acc.se += w * t.se;
  acc.total += w * t.total;
}

std::string breakdown_json(const LossBreakdown& b) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "{\"total\":" << b.total << ",\"se\":" << b.se << ",\"l1\":" << b.se_terms.l1 << ",\"sc\":[";
  for (std::size_t i = 0; i < b.se_terms.spectral_convergence.size(); ++i) os << (i ? "," : "") << b.se_terms.spectral_convergence[i];
  os << "],\"mag\":[";
  for (std::size_t i = 0; i < b.se_terms.log_magnitude.size(); ++i) os << (i ? "," : "") << b.se_terms.log_magnitude[i];
  os << "],\"diversity\":[";
  for (std::size_t i = 0; i < b.diversity.size(); ++i) {
    os << (i ? "," : "");
    if (b.diversity[i]) os << *b.diversity[i];
    else os << "null";
  }
  os << "]}";
  return os.str();
}

}  // namespace

StepRecord Trainer::step() {
  const Index depth = model_.config().depth;
  const double lr = config_.learning_rate(step_);
  auto batch = draw_batch();
  const ParameterList& params = optimizer_.parameters();
  for (auto p : params) p.var.zero_grad();

  StepRecord rec;
  rec.learning_rate = lr;
  rec.temperature = model_.temperature(0, step_);
  std::vector<std::vector<Index>> selections(static_cast<std::size_t>(depth + 1));
  std::vector<Index> books(static_cast<std::size_t>(depth + 1), 0), codewords(static_cast<std::size_t>(depth + 1), 0);
  const double w = 1.0 / static_cast<double>(batch.size());

  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& s = batch[b];
    std::optional<FeatureBundle> ctx;
    if (model_.config().fusion_enabled) ctx = features_(s.noisy);
    auto result = model_.forward(s.noisy, ctx ? &*ctx : nullptr, Mode::Train,
                                 derive_seed({config_.seed, static_cast<std::uint64_t>(step_), b}), step_);
    auto loss = total_loss(result.output, s.clean, result.vq_outputs, result.vq_layers, config_.lambda, config_.stft);
    if (!std::isfinite(loss.terms.total)) {
      throw NumericError("non-finite loss at step " + std::to_string(step_ + 1) + ": " + breakdown_json(loss.terms));
    }
    accumulate_breakdown(rec.loss, loss.terms, w);
    for (std::size_t k = 0; k < result.vq_outputs.size(); ++k) {
      const auto layer = static_cast<std::size_t>(result.vq_layers[k]);
      const auto& q = result.vq_outputs[k];
      selections[layer].insert(selections[layer].end(), q.selections.begin(), q.selections.end());
      books[layer] = q.num_books;
      codewords[layer] = q.codewords_per_book;
    }
    ops::scale(loss.total, w).backward();
  }

  rec.grad_norm = clip_grad_norm(params, config_.clip_norm);
  if (!std::isfinite(rec.grad_norm)) {
    throw NumericError("non-finite gradient at step " + std::to_string(step_ + 1) + ": " + breakdown_json(rec.loss));
  }
  optimizer_.step(lr);
  ++step_;
  rec.step = step_;
  rec.perplexity.assign(static_cast<std::size_t>(depth + 1), std::nullopt);
  for (std::size_t i = 0; i < selections.size(); ++i) {
    if (selections[i].empty()) continue;
    const auto per_book = codebook_perplexity(selections[i], books[i], codewords[i]);
    rec.perplexity[i] = std::accumulate(per_book.begin(), per_book.end(), 0.0) / static_cast<double>(per_book.size());
  }
  history_.push_back(rec.loss.total);
  while (history_.size() > TrainState::kHistoryCapacity) history_.pop_front();
  return rec;
}

std::vector<NamedTensor> snapshot_parameters(const Enhancer& model) {
  std::vector<NamedTensor> out;
  for (const auto& p : model.parameters()) out.push_back({p.name, p.var.value()});
  return out;
}

void load_parameters(Enhancer& model, const std::vector<NamedTensor>& params) {
  auto list = model.parameters();
  if (list.size() != params.size()) {
    throw FormatError("checkpoint holds " + std::to_string(params.size()) + " parameters, model has " +
                      std::to_string(list.size()));
  }
  for (std::size_t i = 0; i < list.size(); ++i) {
    if (list[i].name != params[i].name) throw FormatError("parameter name mismatch: " + list[i].name + " vs " + params[i].name);
    if (!list[i].var.value().same_shape(params[i].value)) throw FormatError("parameter shape mismatch for " + list[i].name);
    list[i].var.mutable_value() = params[i].value;
  }
}

TrainState Trainer::state() const {
  TrainState s;
  s.step = step_;
  s.parameters = snapshot_parameters(model_);
  const auto& params = optimizer_.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    s.adam_m.push_back({params[i].name, optimizer_.first_moments()[i]});
    s.adam_v.push_back({params[i].name, optimizer_.second_moments()[i]});
  }
  s.temperature = model_.temperature(0, step_);
  s.rng_state = rng_.state();
  s.loss_history = history_;
  return s;
}

void Trainer::restore(const TrainState& s) {
  load_parameters(model_, s.parameters);
  const auto& params = optimizer_.parameters();
  if (s.adam_m.size() != params.size() || s.adam_v.size() != params.size()) {
    throw FormatError("optimizer state does not match the model");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (s.adam_m[i].name != params[i].name || !s.adam_m[i].value.same_shape(params[i].var.value()) ||
        !s.adam_v[i].value.same_shape(params[i].var.value())) {
      throw FormatError("optimizer moment mismatch for " + params[i].name);
    }
    optimizer_.first_moments()[i] = s.adam_m[i].value;
    optimizer_.second_moments()[i] = s.adam_v[i].value;
  }
  optimizer_.set_steps(s.step);
  step_ = s.step;
  rng_.set_state(s.rng_state);
  history_ = s.loss_history;
}

std::string step_record_json(const StepRecord& rec) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "{\"step\":" << rec.step << ",\"lr\":" << rec.learning_rate << ",\"temperature\":" << rec.temperature
     << ",\"grad_norm\":" << rec.grad_norm << ",\"loss\":" << breakdown_json(rec.loss) << ",\"perplexity\":[";
  for (std::size_t i = 0; i < rec.perplexity.size(); ++i) {
    os << (i ? "," : "");
    if (rec.perplexity[i]) os << *rec.perplexity[i];
    else os << "null";
  }
  os << "]}";
  return os.str();
}

TrainState train(Trainer& trainer, const TrainOptions& options) {
  const auto& cfg = trainer.config();
  const bool ckpt = !options.checkpoint_dir.empty();
  if (ckpt) std::filesystem::create_directories(options.checkpoint_dir);
  auto save = [&](const std::filesystem::path& file) {
    save_checkpoint(file, Checkpoint{trainer.model().config(), cfg, trainer.state(), options.extra});
  };
  while (trainer.steps_done() < cfg.total_steps) {
    const StepRecord rec = trainer.step();
    if (options.log) *options.log << step_record_json(rec) << "\n" << std::flush;
    if (options.on_step) options.on_step(rec);
    if (ckpt && cfg.checkpoint_interval > 0 && rec.step % cfg.checkpoint_interval == 0) {
      save(options.checkpoint_dir / ("step_" + std::to_string(rec.step) + ".ckpt"));
    }
  }
  if (ckpt) save(options.checkpoint_dir / "latest.ckpt");
  return trainer.state();
}

TrainState train(Enhancer& model, const Corpus& corpus, const TrainConfig& cfg, const FeatureProvider& features,
                 const TrainOptions& options) {
  Trainer trainer(model, corpus, cfg, features);
  return train(trainer, options);
}

std::vector<std::vector<bool>> single_vq_ablation_masks(Index depth) {
  std::vector<std::vector<bool>> masks{std::vector<bool>(static_cast<std::size_t>(depth + 1), true)};
  for (Index i = 0; i <= depth; ++i) {
    auto m = masks.front();
    m[static_cast<std::size_t>(i)] = false;
    masks.push_back(std::move(m));
  }
  return masks;
}

AblationReport run_ablation(const std::vector<std::vector<bool>>& masks, const EnhancerConfig& base,
                            const TrainConfig& train_cfg, const Corpus& train_corpus, const Corpus& eval_corpus,
                            const FeatureProvider& features, std::uint64_t model_seed) {
  AblationReport report;
  report.steps = train_cfg.total_steps;
  for (const auto& mask : masks) {
    if (static_cast<Index>(mask.size()) != base.depth + 1) {
      throw InvalidArgument("ablation mask needs depth+1 = " + std::to_string(base.depth + 1) + " entries");
    }
    EnhancerConfig cfg = base;
    cfg.vq_enabled = mask;
    Enhancer model(cfg, model_seed);
    std::deque<LossBreakdown> tail;
    TrainOptions opts;
    opts.on_step = [&](const StepRecord& r) {
      tail.push_back(r.loss);
      if (tail.size() > 10) tail.pop_front();
    };
    train(model, train_corpus, train_cfg, features, opts);

    AblationRow row;
    row.mask = mask;
    for (const auto& t : tail) {
      row.final_se += t.se / static_cast<double>(tail.size());
      row.final_total += t.total / static_cast<double>(tail.size());
    }
    row.perplexity.assign(mask.size(), std::nullopt);
    const auto usage = codebook_usage(model, eval_corpus, features);
    double sum = 0.0;
    for (const auto& u : usage) {
      row.perplexity[static_cast<std::size_t>(u.quantizer)] = u.mean_perplexity();
      sum += u.mean_perplexity();
    }
    row.mean_perplexity = usage.empty() ? 0.0 : sum / static_cast<double>(usage.size());
    row.eval_si_sdr = evaluate(model, eval_corpus, features).mean_si_sdr_enhanced;
    report.rows.push_back(std::move(row));
  }
  return report;
}

}  // namespace mgvq
