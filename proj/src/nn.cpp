#include "mgvq/nn.hpp"

#include <cmath>

#include "mgvq/error.hpp"

namespace mgvq::nn {

Tensor uniform_init(std::vector<Index> shape, Index fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (double& v : t.storage()) v = rng.uniform(-bound, bound);
  return t;
}

Linear::Linear(Index in, Index out, Rng& rng)
    : weight(make_parameter(uniform_init({in, out}, in, rng))),
      bias(make_parameter(uniform_init({out}, in, rng))) {}

void Linear::collect(const std::string& prefix, ParameterList& out) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

Conv1d::Conv1d(Index cin, Index cout, ops::ConvGeometry g, Rng& rng)
    : weight(make_parameter(uniform_init({cout, cin * g.kernel}, cin * g.kernel, rng))),
      bias(make_parameter(uniform_init({cout}, cin * g.kernel, rng))),
      geometry(g) {}

void Conv1d::collect(const std::string& prefix, ParameterList& out) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

ConvTranspose1d::ConvTranspose1d(Index cin, Index cout, Index k, Index s, Rng& rng)
    : weight(make_parameter(uniform_init({cin, cout * k}, cout * k, rng))),
      bias(make_parameter(uniform_init({cout}, cout * k, rng))),
      kernel(k),
      stride(s) {}

Var ConvTranspose1d::operator()(const Var& x) const {
  const Index out_len = x.cols() * stride;
  const Index full = (x.cols() - 1) * stride + kernel;
  const Index crop = (full - out_len) / 2;
  return ops::conv_transpose1d(x, weight, bias, kernel, stride, crop, out_len);
}

void ConvTranspose1d::collect(const std::string& prefix, ParameterList& out) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

LayerNorm::LayerNorm(Index dim)
    : gamma(make_parameter(Tensor({dim}, 1.0))), beta(make_parameter(Tensor({dim}, 0.0))) {}

void LayerNorm::collect(const std::string& prefix, ParameterList& out) const {
  out.push_back({prefix + ".gamma", gamma});
  out.push_back({prefix + ".beta", beta});
}

MultiHeadAttention::MultiHeadAttention(Index model_dim, Index kv_dim, Index h, Rng& rng)
    : query(model_dim, model_dim, rng),
      key(kv_dim, model_dim, rng),
      value(kv_dim, model_dim, rng),
      output(model_dim, model_dim, rng),
      heads(h) {
  if (h < 1 || model_dim % h != 0) {
    throw InvalidArgument("attention width " + std::to_string(model_dim) + " not divisible by " +
                          std::to_string(h) + " heads");
  }
}

Var MultiHeadAttention::operator()(const Var& q_in, const Var& kv_in) const {
  return output(ops::attention(query(q_in), key(kv_in), value(kv_in), heads));
}

void MultiHeadAttention::collect(const std::string& prefix, ParameterList& out) const {
  query.collect(prefix + ".query", out);
  key.collect(prefix + ".key", out);
  value.collect(prefix + ".value", out);
  output.collect(prefix + ".output", out);
}

TransformerLayer::TransformerLayer(Index dim, Index heads, Index ffn_dim, Rng& rng)
    : self_attention(dim, dim, heads, rng),
      norm1(dim),
      ffn_in(dim, ffn_dim, rng),
      ffn_out(ffn_dim, dim, rng),
      norm2(dim) {}

Var TransformerLayer::operator()(const Var& x) const {
  Var h = norm1(ops::add(x, self_attention(x, x)));
  return norm2(ops::add(h, ffn_out(ops::relu(ffn_in(h)))));
}

void TransformerLayer::collect(const std::string& prefix, ParameterList& out) const {
  self_attention.collect(prefix + ".attn", out);
  norm1.collect(prefix + ".norm1", out);
  ffn_in.collect(prefix + ".ffn_in", out);
  ffn_out.collect(prefix + ".ffn_out", out);
  norm2.collect(prefix + ".norm2", out);
}

Tensor sinusoidal_positions(Index length, Index dim) {
  Tensor pe = Tensor::matrix(length, dim);
  for (Index t = 0; t < length; ++t) {
    for (Index i = 0; i < dim; ++i) {
      const double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(dim));
      pe.at(t, i) = (i % 2 == 0) ? std::sin(t * rate) : std::cos(t * rate);
    }
  }
  return pe;
}

}  // namespace mgvq::nn
