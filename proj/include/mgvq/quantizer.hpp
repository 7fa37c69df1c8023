#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "mgvq/autograd.hpp"
#include "mgvq/nn.hpp"
#include "mgvq/rng.hpp"

namespace mgvq {

enum class Mode { Train, Eval };

// How per-frame selection probabilities are reduced in the diversity loss.
enum class DiversityAggregation {
  BatchAveraged,  // average over frames first, then sum p log p
  PerFrame,       // sum p log p per frame, then average
};

// tau(step) = max(floor, start * decay^step)
struct TemperatureSchedule {
  double start = 2.0;
  double floor = 0.5;
  double decay = 0.9995;

  double at(Index step) const;
  void validate() const;
};

struct QuantizerConfig {
  Index num_codebooks = 2;         // G
  Index codewords_per_book = 320;  // V
  Index codeword_dim = 128;        // d
  Index input_dim = 512;
  Index output_dim = 512;
  TemperatureSchedule temperature;
  DiversityAggregation diversity = DiversityAggregation::BatchAveraged;

  bool has_output_projection() const { return num_codebooks * codeword_dim != output_dim; }
  void validate() const;
};

// G books of V learnable d-dimensional codewords, stored as rows g*V + v.
struct CodebookSet {
  Index num_books = 0;
  Index codewords_per_book = 0;
  Index dim = 0;
  Var codewords;  // [G*V x d]

  // Entries uniform in [-1/sqrt(d), 1/sqrt(d)].
  static CodebookSet random(Index books, Index codewords, Index dim, Rng& rng);
  std::span<const double> codeword(Index book, Index index) const;
};

struct QuantizerOutput {
  Var quantized;                  // [T x output_dim]
  Var probs;                      // [T x G*V], each book row on the simplex
  std::vector<Index> selections;  // [T x G]
  Var diversity_loss;             // scalar
  Index frames = 0;
  Index num_books = 0;
  Index codewords_per_book = 0;

  double prob(Index t, Index g, Index v) const {
    return probs.value()[(t * num_books + g) * codewords_per_book + v];
  }
  Index selection(Index t, Index g) const { return selections[static_cast<std::size_t>(t * num_books + g)]; }
};

// Gumbel-softmax product quantizer with a straight-through estimator:
// the forward value looks up argmax codewords, the backward pass flows
// through the tempered softmax.
class GumbelQuantizer {
 public:
  GumbelQuantizer() = default;
  GumbelQuantizer(const QuantizerConfig& cfg, Rng& rng);

  // x [T x input_dim]. Train mode perturbs logits with seeded Gumbel noise.
  QuantizerOutput operator()(const Var& x, Mode mode, std::uint64_t noise_seed, double tau) const;

  const QuantizerConfig& config() const { return config_; }
  const nn::Linear& logit_projection() const { return logits_; }
  nn::Linear& logit_projection() { return logits_; }
  const CodebookSet& codebooks() const { return books_; }
  CodebookSet& codebooks() { return books_; }
  const std::optional<nn::Linear>& output_projection() const { return output_; }

  void collect(const std::string& prefix, ParameterList& out) const;

 private:
  QuantizerConfig config_;
  nn::Linear logits_;
  CodebookSet books_;
  std::optional<nn::Linear> output_;
};

// Gumbel(0,1) noise [frames x width] drawn from a seeded stream.
Tensor gumbel_noise(Index frames, Index width, std::uint64_t seed);

// softmax((logits + noise) / tau) within each of the `books` column groups.
// noise may be null (no perturbation).
Var gumbel_softmax(const Var& logits, Index books, const Tensor* noise, double tau);

// Per-book argmax of logits + noise; ties resolve to the lowest index.
std::vector<Index> hard_selections(const Tensor& logits, Index books, const Tensor* noise);

// Forward: concatenated codewords at `selections` [T x G*d].
// Backward: gradients reach `probs` as if the output were probs @ codewords,
// and reach the codewords through the selected rows only.
Var straight_through_lookup(const Var& probs, std::span<const Index> selections, const Var& codewords,
                            Index books);

// (1/(G V)) sum_g sum_v p log p with 0 log 0 = 0; in [-ln(V)/V, 0].
// Rows more than 1e-4 off the simplex are rejected.
Var diversity_loss(const Var& probs, Index books, Index codewords, DiversityAggregation agg);

// exp(entropy) of the empirical selection histogram, one value per book.
std::vector<double> codebook_perplexity(std::span<const Index> selections, Index books, Index codewords);

}  // namespace mgvq
