#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mgvq/data.hpp"
#include "mgvq/features.hpp"
#include "mgvq/network.hpp"
#include "mgvq/signal.hpp"

namespace mgvq {

struct TrainConfig {
  double lr_max = 2e-4;
  Index batch_size = 30;
  Index total_steps = 1000000;
  std::vector<double> lambda;  // one weight per quantizer index 0..D
  std::uint64_t seed = 0;
  Index checkpoint_interval = 0;  // 0 disables periodic checkpoints
  double warmup_fraction = 0.05;
  double clip_norm = 5.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double segment_seconds = 0.0;  // 0 trains on whole pairs
  bool remix = false;
  bool bandmask = false;
  MultiStftConfig stft = MultiStftConfig::standard();

  // Batch 30, lr 2e-4, lambda 0.01 everywhere, 1M steps.
  static TrainConfig full(Index depth);
  // lr 1e-3, batch 8, 2k steps, 1 s segments, otherwise as full().
  static TrainConfig desk(Index depth);

  // Linear warmup over warmup_fraction of total_steps, cosine decay to 0.
  double learning_rate(Index step) const;
  void validate(Index depth) const;
};

struct LossBreakdown {
  SeLossTerms se_terms;
  double se = 0.0;
  std::vector<std::optional<double>> diversity;  // indexed by quantizer, empty when disabled
  double total = 0.0;
};

struct TotalLoss {
  Var total;
  LossBreakdown terms;
};

// L_se with the enhancement-loss gradient attached; yhat is [1 x T].
Var se_loss_var(const Var& yhat, const Waveform& y, const MultiStftConfig& cfg, SeLossTerms* terms = nullptr);

// L_se + sum_i lambda_i * L_d_i. vq_layers[k] is the quantizer index of
// vq_outputs[k]; lambda has one entry per quantizer index.
TotalLoss total_loss(const Var& yhat, const Waveform& y, const std::vector<QuantizerOutput>& vq_outputs,
                     const std::vector<Index>& vq_layers, std::span<const double> lambda,
                     const MultiStftConfig& cfg);

struct NamedTensor {
  std::string name;
  Tensor value;
};

struct TrainState {
  Index step = 0;
  std::vector<NamedTensor> parameters;
  std::vector<NamedTensor> adam_m;
  std::vector<NamedTensor> adam_v;
  double temperature = 0.0;
  std::string rng_state;
  std::deque<double> loss_history;  // most recent totals, oldest first

  static constexpr std::size_t kHistoryCapacity = 1000;
};

struct StepRecord {
  Index step = 0;  // 1-based index of the completed step
  double learning_rate = 0.0;
  double temperature = 0.0;
  double grad_norm = 0.0;
  LossBreakdown loss;  // batch mean
  std::vector<std::optional<double>> perplexity;  // mean over books, per quantizer
};

class Adam {
 public:
  Adam(ParameterList params, double beta1, double beta2, double eps);
  void step(double lr);
  Index steps() const { return t_; }
  const ParameterList& parameters() const { return params_; }
  std::vector<Tensor>& first_moments() { return m_; }
  std::vector<Tensor>& second_moments() { return v_; }
  const std::vector<Tensor>& first_moments() const { return m_; }
  const std::vector<Tensor>& second_moments() const { return v_; }
  void set_steps(Index t) { t_ = t; }

 private:
  ParameterList params_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  double beta1_, beta2_, eps_;
  Index t_ = 0;
};

// Rescales all gradients so their global L2 norm is at most max_norm;
// returns the norm before clipping.
double clip_grad_norm(const ParameterList& params, double max_norm);

class Trainer {
 public:
  Trainer(Enhancer& model, const Corpus& corpus, TrainConfig cfg, FeatureProvider features);

  StepRecord step();
  Index steps_done() const { return step_; }
  TrainState state() const;
  void restore(const TrainState& state);
  const TrainConfig& config() const { return config_; }
  const Enhancer& model() const { return model_; }
  const std::deque<double>& loss_history() const { return history_; }

 private:
  std::vector<PairSample> draw_batch();

  Enhancer& model_;
  const Corpus& corpus_;
  TrainConfig config_;
  FeatureProvider features_;
  Adam optimizer_;
  Rng rng_;
  Index step_ = 0;
  std::deque<double> history_;
};

struct Checkpoint {
  EnhancerConfig model;
  TrainConfig train;
  TrainState state;
  std::string extra;  // free-form JSON carried alongside (e.g. feature settings)
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Atomic: written to a temporary sibling and renamed into place.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);
// Copies parameters by name; throws on missing names or shape mismatch.
void load_parameters(Enhancer& model, const std::vector<NamedTensor>& params);
std::vector<NamedTensor> snapshot_parameters(const Enhancer& model);

struct TrainOptions {
  std::filesystem::path checkpoint_dir;  // empty disables checkpoint writes
  std::ostream* log = nullptr;           // newline-delimited JSON records
  std::function<void(const StepRecord&)> on_step;
  std::string extra;                     // stored in every checkpoint
};

// Runs cfg.total_steps - trainer.steps_done() further steps.
TrainState train(Trainer& trainer, const TrainOptions& options = {});
TrainState train(Enhancer& model, const Corpus& corpus, const TrainConfig& cfg, const FeatureProvider& features,
                 const TrainOptions& options = {});

std::string step_record_json(const StepRecord& rec);

// All quantizers enabled, then each single quantizer disabled in turn.
std::vector<std::vector<bool>> single_vq_ablation_masks(Index depth);

struct AblationRow {
  std::vector<bool> mask;
  double final_se = 0.0;     // mean L_se over the last min(10, steps) steps
  double final_total = 0.0;  // same window for L_total
  std::vector<std::optional<double>> perplexity;  // eval-mode, per quantizer
  double mean_perplexity = 0.0;
  double eval_si_sdr = 0.0;  // mean over the evaluation corpus
};

struct AblationReport {
  Index steps = 0;
  std::vector<AblationRow> rows;
};

// Trains one identically seeded model per mask and reports losses and
// codebook usage.
AblationReport run_ablation(const std::vector<std::vector<bool>>& masks, const EnhancerConfig& base,
                            const TrainConfig& train_cfg, const Corpus& train_corpus, const Corpus& eval_corpus,
                            const FeatureProvider& features, std::uint64_t model_seed);

}  // namespace mgvq
