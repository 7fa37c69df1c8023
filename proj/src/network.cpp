#include "mgvq/network.hpp"

#include <cmath>

#include "mgvq/error.hpp"
#include "mgvq/ops.hpp"

namespace mgvq {

namespace {

QuantizerConfig make_vq(Index books, Index codewords, Index dim, Index width) {
  QuantizerConfig q;
  q.num_codebooks = books;
  q.codewords_per_book = codewords;
  q.codeword_dim = dim;
  q.input_dim = width;
  q.output_dim = width;
  return q;
}

}  // namespace

EnhancerConfig EnhancerConfig::full() {
  EnhancerConfig c;
  c.depth = 5;
  c.hidden_dim = 512;
  c.kernel = 8;
  c.stride = 2;
  c.bottleneck_layers = 2;
  // 512 channels do not split into 12 equal heads; 8 is the nearest divisor.
  c.attention_heads = 8;
  c.ffn_dim = 2048;
  c.feature_dim = 768;
  c.vq_configs = {make_vq(2, 320, 128, 512), make_vq(1, 320, 128, 512), make_vq(1, 640, 128, 512),
                  make_vq(1, 960, 128, 512), make_vq(1, 2560, 128, 512), make_vq(1, 5120, 128, 512)};
  c.vq_enabled.assign(6, true);
  return c;
}

EnhancerConfig EnhancerConfig::desk() {
  EnhancerConfig c;
  c.vq_configs = {make_vq(2, 32, 32, 64), make_vq(1, 32, 32, 64), make_vq(1, 64, 32, 64), make_vq(1, 96, 32, 64),
                  make_vq(1, 256, 32, 64)};
  c.vq_enabled.assign(5, true);
  return c;
}

Index EnhancerConfig::total_stride() const {
  Index s = 1;
  for (Index i = 0; i < depth; ++i) s *= stride;
  return s;
}

void EnhancerConfig::validate() const {
  if (depth < 1) throw InvalidArgument("depth must be at least 1");
  if (bottleneck_layers < 1) throw InvalidArgument("bottleneck needs at least one Transformer layer");
  if (stride < 1) throw InvalidArgument("stride must be positive");
  if (kernel < stride) throw InvalidArgument("kernel must be at least the stride");
  if (hidden_dim < 1 || ffn_dim < 1 || feature_dim < 1) throw InvalidArgument("layer widths must be positive");
  if (fusion_conv_kernel < 1 || fusion_conv_kernel % 2 == 0) throw InvalidArgument("fusion conv kernel must be odd");
  if (attention_heads < 1 || hidden_dim % attention_heads != 0) {
    throw InvalidArgument("hidden_dim must be divisible by attention_heads");
  }
  const auto n = static_cast<std::size_t>(depth + 1);
  if (vq_configs.size() != n || vq_enabled.size() != n) {
    throw InvalidArgument("need exactly depth+1 quantizer configs and enable flags");
  }
  for (const auto& q : vq_configs) {
    q.validate();
    if (q.input_dim != hidden_dim || q.output_dim != hidden_dim) {
      throw InvalidArgument("quantizer input/output widths must equal hidden_dim");
    }
  }
}

Index valid_length(Index length, const EnhancerConfig& cfg) {
  const Index s = cfg.total_stride();
  const Index n = std::max<Index>(length, 1);
  return ((n + s - 1) / s) * s;
}

PaddedInput pad_input(const Waveform& x, const EnhancerConfig& cfg) {
  x.validate();
  PaddedInput out{x, x.size()};
  out.padded.samples.resize(static_cast<std::size_t>(valid_length(x.size(), cfg)), 0.0);
  return out;
}

Waveform EnhanceResult::waveform() const {
  const auto v = output.value().values();
  return Waveform(std::vector<double>(v.begin(), v.end()), sample_rate);
}

std::vector<Index> align_context_frames(Index local_frames, double local_rate, Index context_frames,
                                        double context_rate) {
  std::vector<Index> idx(static_cast<std::size_t>(local_frames));
  for (Index t = 0; t < local_frames; ++t) {
    const double centre = (static_cast<double>(t) + 0.5) / local_rate;
    const auto j = static_cast<Index>(std::floor(centre * context_rate));
    idx[static_cast<std::size_t>(t)] = std::clamp<Index>(j, 0, context_frames - 1);
  }
  return idx;
}

Enhancer::Enhancer(EnhancerConfig cfg, std::uint64_t seed) : config_(std::move(cfg)) {
  config_.validate();
  Rng rng(derive_seed({seed, 0x6e6574}));
  const Index h = config_.hidden_dim;
  const Index pad = config_.kernel - config_.stride;
  const ops::ConvGeometry down{config_.kernel, config_.stride, pad / 2, pad - pad / 2};
  for (Index level = 1; level <= config_.depth; ++level) {
    encoder_.emplace_back(level == 1 ? 1 : h, h, down, rng);
  }
  if (config_.fusion_enabled) fusion_ = nn::MultiHeadAttention(h, config_.feature_dim, config_.attention_heads, rng);
  for (Index n = 0; n < config_.bottleneck_layers; ++n) {
    bottleneck_.emplace_back(h, config_.attention_heads, config_.ffn_dim, rng);
  }
  if (config_.vq_enabled[0]) vq0_.emplace(config_.vq_configs[0], rng);
  const Index fk = config_.fusion_conv_kernel;
  const ops::ConvGeometry same{fk, 1, fk / 2, fk / 2};
  const ops::ConvGeometry pointwise{1, 1, 0, 0};
  blocks_.resize(static_cast<std::size_t>(config_.depth));
  for (Index level = 1; level <= config_.depth; ++level) {
    if (!config_.vq_enabled[static_cast<std::size_t>(level)]) continue;
    auto& b = blocks_[static_cast<std::size_t>(level - 1)];
    b.emplace(FusionBlock{nn::Conv1d(2 * h, h, same, rng), nn::Conv1d(h, h, same, rng),
                          GumbelQuantizer(config_.vq_configs[static_cast<std::size_t>(level)], rng),
                          nn::Conv1d(2 * h, h, pointwise, rng)});
  }
  for (Index level = 1; level <= config_.depth; ++level) {
    decoder_.emplace_back(h, level == 1 ? 1 : h, config_.kernel, config_.stride, rng);
  }
}

std::vector<Var> Enhancer::encode(const Var& x) const {
  if (x.value().rank() != 2 || x.rows() != 1) throw InvalidArgument("encoder input must be [1 x T]");
  if (x.cols() % config_.total_stride() != 0) {
    throw InvalidArgument("encoder input length must be divisible by stride^depth (use pad_input)");
  }
  std::vector<Var> outs;
  Var h = x;
  for (const auto& conv : encoder_) {
    h = ops::relu(conv(h));
    outs.push_back(h);
  }
  return outs;
}

Var Enhancer::fuse_features(const Var& local, const FeatureBundle& context, double local_frame_rate) const {
  if (!config_.fusion_enabled) throw InvalidArgument("feature fusion is disabled in this configuration");
  context.validate();
  if (context.dim() != config_.feature_dim) {
    throw InvalidArgument("contextual feature dim " + std::to_string(context.dim()) + " != configured " +
                          std::to_string(config_.feature_dim));
  }
  const Index frames = local.rows();
  const double local_duration = static_cast<double>(frames) / local_frame_rate;
  const double tolerance = 2.0 / context.frame_rate + 2.0 / local_frame_rate + 0.1 * local_duration;
  if (std::abs(context.duration() - local_duration) > tolerance) {
    throw InvalidArgument("contextual features cover " + std::to_string(context.duration()) +
                          " s but local features cover " + std::to_string(local_duration) + " s");
  }
  const auto idx = align_context_frames(frames, local_frame_rate, context.frames(), context.frame_rate);
  Var aligned = ops::gather_rows(Var(context.features), idx);
  return ops::add(local, fusion_(local, aligned));
}

Var Enhancer::fusion_vq_block(Index level, const Var& enc, const Var& dec, Mode mode, std::uint64_t noise_seed,
                              double tau, std::vector<QuantizerOutput>* outputs) const {
  if (level < 1 || level > config_.depth) throw InvalidArgument("fusion block level out of range");
  if (enc.rows() != dec.rows() || enc.cols() != dec.cols()) {
    throw InvalidArgument("encoder/decoder activations differ in shape: " + enc.value().shape_string() + " vs " +
                          dec.value().shape_string());
  }
  const auto& block = blocks_[static_cast<std::size_t>(level - 1)];
  if (!block) return dec;
  Var fused = block->pre2(ops::relu(block->pre1(ops::concat_rows(enc, dec))));
  QuantizerOutput q = block->quantizer(ops::transpose(fused), mode, noise_seed, tau);
  Var out = block->post(ops::concat_rows(ops::transpose(q.quantized), dec));
  if (outputs) outputs->push_back(std::move(q));
  return out;
}

double Enhancer::temperature(Index quantizer_index, Index step) const {
  const auto& sched = config_.vq_configs.at(static_cast<std::size_t>(quantizer_index)).temperature;
  return step < 0 ? sched.floor : sched.at(step);
}

EnhanceResult Enhancer::forward(const Waveform& x, const FeatureBundle* context, Mode mode,
                                std::uint64_t noise_seed, Index temperature_step) const {
  const PaddedInput in = pad_input(x, config_);
  if (config_.fusion_enabled && !context) throw InvalidArgument("contextual features required when fusion is enabled");

  double norm = 1.0;
  if (config_.normalize_input) {
    double mean = 0.0;
    for (double v : x.samples) mean += v * v;
    norm = std::sqrt(mean / static_cast<double>(x.size())) + 1e-3;
  }
  Tensor input = Tensor::matrix(1, in.padded.size());
  for (Index i = 0; i < in.padded.size(); ++i) input[i] = in.padded.samples[static_cast<std::size_t>(i)] / norm;

  EnhanceResult result;
  result.sample_rate = x.sample_rate;
  const auto enc = encode(Var(std::move(input)));
  for (const auto& e : enc) result.activations.encoder_outputs.push_back(e.value());

  Var z = ops::transpose(enc.back());
  const double local_rate = x.sample_rate / static_cast<double>(config_.total_stride());
  if (config_.fusion_enabled) z = fuse_features(z, *context, local_rate);
  z = ops::add_constant(z, nn::sinusoidal_positions(z.rows(), z.cols()));
  for (const auto& layer : bottleneck_) z = layer(z);
  result.activations.bottleneck_output = z.value();
  if (vq0_) {
    QuantizerOutput q = (*vq0_)(z, mode, derive_seed({noise_seed, 0}), temperature(0, temperature_step));
    z = q.quantized;
    result.vq_outputs.push_back(std::move(q));
    result.vq_layers.push_back(0);
  }

  Var dec = ops::transpose(z);
  result.activations.decoder_inputs.resize(static_cast<std::size_t>(config_.depth));
  for (Index level = config_.depth; level >= 1; --level) {
    const Var& skip = enc[static_cast<std::size_t>(level - 1)];
    result.activations.decoder_inputs[static_cast<std::size_t>(level - 1)] = dec.value();
    const std::size_t before = result.vq_outputs.size();
    dec = fusion_vq_block(level, skip, dec, mode, derive_seed({noise_seed, static_cast<std::uint64_t>(level)}),
                          temperature(level, temperature_step), &result.vq_outputs);
    if (result.vq_outputs.size() > before) result.vq_layers.push_back(level);
    dec = decoder_[static_cast<std::size_t>(level - 1)](ops::add(dec, skip));
    if (level > 1) dec = ops::relu(dec);
  }
  result.output = ops::scale(ops::slice_cols(dec, 0, in.original_length), norm);
  return result;
}

Waveform Enhancer::enhance(const Waveform& x, const FeatureBundle* context) const {
  NoGradGuard guard;
  return forward(x, context, Mode::Eval, 0, -1).waveform();
}

const GumbelQuantizer* Enhancer::quantizer(Index index) const {
  if (index == 0) return vq0_ ? &*vq0_ : nullptr;
  if (index < 0 || index > config_.depth) return nullptr;
  const auto& b = blocks_[static_cast<std::size_t>(index - 1)];
  return b ? &b->quantizer : nullptr;
}

GumbelQuantizer* Enhancer::quantizer(Index index) {
  return const_cast<GumbelQuantizer*>(static_cast<const Enhancer&>(*this).quantizer(index));
}

ParameterList Enhancer::parameters() const {
  ParameterList out;
  for (std::size_t i = 0; i < encoder_.size(); ++i) encoder_[i].collect("encoder." + std::to_string(i + 1), out);
  if (config_.fusion_enabled) fusion_.collect("fusion", out);
  for (std::size_t i = 0; i < bottleneck_.size(); ++i) bottleneck_[i].collect("bottleneck." + std::to_string(i), out);
  if (vq0_) vq0_->collect("vq.0", out);
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    if (!blocks_[i]) continue;
    const std::string p = "vq_block." + std::to_string(i + 1);
    blocks_[i]->pre1.collect(p + ".pre1", out);
    blocks_[i]->pre2.collect(p + ".pre2", out);
    blocks_[i]->quantizer.collect("vq." + std::to_string(i + 1), out);
    blocks_[i]->post.collect(p + ".post", out);
  }
  for (std::size_t i = 0; i < decoder_.size(); ++i) decoder_[i].collect("decoder." + std::to_string(i + 1), out);
  return out;
}

}  // namespace mgvq
