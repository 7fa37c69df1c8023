#pragma once

#include <string>

#include "mgvq/autograd.hpp"
#include "mgvq/ops.hpp"
#include "mgvq/rng.hpp"

namespace mgvq::nn {

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialisation for weights and biases.
Tensor uniform_init(std::vector<Index> shape, Index fan_in, Rng& rng);

// Affine map over rows: [T x in] -> [T x out].
struct Linear {
  Var weight;  // [in x out]
  Var bias;    // [out]

  Linear() = default;
  Linear(Index in, Index out, Rng& rng);
  Var operator()(const Var& x) const { return ops::linear(x, weight, bias); }
  Index in_dim() const { return weight.rows(); }
  Index out_dim() const { return weight.cols(); }
  void collect(const std::string& prefix, ParameterList& out) const;
};

struct Conv1d {
  Var weight;  // [Cout x Cin*K]
  Var bias;    // [Cout]
  ops::ConvGeometry geometry;

  Conv1d() = default;
  Conv1d(Index cin, Index cout, ops::ConvGeometry g, Rng& rng);
  Var operator()(const Var& x) const { return ops::conv1d(x, weight, bias, geometry); }
  void collect(const std::string& prefix, ParameterList& out) const;
};

struct ConvTranspose1d {
  Var weight;  // [Cin x Cout*K]
  Var bias;    // [Cout]
  Index kernel = 1;
  Index stride = 1;

  ConvTranspose1d() = default;
  ConvTranspose1d(Index cin, Index cout, Index kernel, Index stride, Rng& rng);
  // Output of length stride * T, cropped symmetrically from the full response.
  Var operator()(const Var& x) const;
  void collect(const std::string& prefix, ParameterList& out) const;
};

struct LayerNorm {
  Var gamma;
  Var beta;

  LayerNorm() = default;
  explicit LayerNorm(Index dim);
  Var operator()(const Var& x) const { return ops::layer_norm(x, gamma, beta); }
  void collect(const std::string& prefix, ParameterList& out) const;
};

// Multi-head attention with separate query and key/value input widths.
struct MultiHeadAttention {
  Linear query;
  Linear key;
  Linear value;
  Linear output;
  Index heads = 1;

  MultiHeadAttention() = default;
  MultiHeadAttention(Index model_dim, Index kv_dim, Index heads, Rng& rng);
  Var operator()(const Var& q_in, const Var& kv_in) const;
  void collect(const std::string& prefix, ParameterList& out) const;
};

// Post-norm Transformer encoder layer with a ReLU feed-forward block.
struct TransformerLayer {
  MultiHeadAttention self_attention;
  LayerNorm norm1;
  Linear ffn_in;
  Linear ffn_out;
  LayerNorm norm2;

  TransformerLayer() = default;
  TransformerLayer(Index dim, Index heads, Index ffn_dim, Rng& rng);
  Var operator()(const Var& x) const;
  void collect(const std::string& prefix, ParameterList& out) const;
};

// Sinusoidal position table [T x D].
Tensor sinusoidal_positions(Index length, Index dim);

}  // namespace mgvq::nn
