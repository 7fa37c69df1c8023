#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "mgvq/autograd.hpp"
#include "mgvq/features.hpp"
#include "mgvq/nn.hpp"
#include "mgvq/quantizer.hpp"
#include "mgvq/signal.hpp"

namespace mgvq {

struct EnhancerConfig {
  Index depth = 4;  // D encoder and decoder layers
  Index hidden_dim = 64;
  Index kernel = 8;
  Index stride = 2;
  Index bottleneck_layers = 2;  // N
  Index attention_heads = 4;
  Index ffn_dim = 256;
  Index feature_dim = 64;  // contextual feature width
  Index fusion_conv_kernel = 3;
  bool fusion_enabled = true;
  bool normalize_input = true;
  // Index 0 is the bottleneck quantizer, index i the block bridging encoder level i.
  std::vector<QuantizerConfig> vq_configs;
  std::vector<bool> vq_enabled;

  // D=5, 512 channels, kernel 8 / stride 2, two 2048-wide Transformer layers,
  // VQ0 = 2 x 320, VQ1..5 = 1 x {320, 640, 960, 2560, 5120}, 128-dim codewords.
  static EnhancerConfig full();
  // D=4, 64 channels, 4 heads, FFN 256, 32-dim codewords,
  // VQ0 = 2 x 32, VQ1..4 = 1 x {32, 64, 96, 256}.
  static EnhancerConfig desk();

  Index total_stride() const;
  void validate() const;
};

// Smallest length >= T divisible by stride^depth (and at least stride^depth).
Index valid_length(Index length, const EnhancerConfig& cfg);

struct PaddedInput {
  Waveform padded;
  Index original_length = 0;
};
PaddedInput pad_input(const Waveform& x, const EnhancerConfig& cfg);

// Encoder level i (1-based) output paired with the decoder activation of the
// same resolution; decoder_inputs[i-1] is the input to the decoder layer
// that upsamples level i.
struct LayerActivations {
  std::vector<Tensor> encoder_outputs;
  std::vector<Tensor> decoder_inputs;
  Tensor bottleneck_output;
};

struct EnhanceResult {
  Var output;  // [1 x original_length]
  double sample_rate = 16000.0;
  std::vector<QuantizerOutput> vq_outputs;
  std::vector<Index> vq_layers;  // quantizer index of each entry in vq_outputs
  LayerActivations activations;

  Waveform waveform() const;
};

// U-Net waveform enhancer: strided conv encoder, cross-attention fusion of
// contextual features, Transformer bottleneck quantized by VQ0, and a
// transposed-conv decoder whose levels are bridged to the encoder by
// fusion-VQ blocks and additive skips.
class Enhancer {
 public:
  Enhancer(EnhancerConfig cfg, std::uint64_t seed);

  const EnhancerConfig& config() const { return config_; }

  // context may be null only when fusion is disabled. Each quantizer uses
  // its own schedule at temperature_step; a negative step selects the floor.
  EnhanceResult forward(const Waveform& x, const FeatureBundle* context, Mode mode, std::uint64_t noise_seed,
                        Index temperature_step = -1) const;

  double temperature(Index quantizer_index, Index step) const;

  // Eval-mode inference without graph recording.
  Waveform enhance(const Waveform& x, const FeatureBundle* context) const;

  // Encoder activations of a padded [1 x T] input.
  std::vector<Var> encode(const Var& x) const;

  // local [L x H] attends to contextual frames repeated to the local rate;
  // the attention output is added back to local.
  Var fuse_features(const Var& local, const FeatureBundle& context, double local_frame_rate) const;

  // enc, dec: [H x L] at encoder level `level` (1-based). Returns dec
  // unchanged when that level's quantizer is disabled.
  Var fusion_vq_block(Index level, const Var& enc, const Var& dec, Mode mode, std::uint64_t noise_seed,
                      double tau, std::vector<QuantizerOutput>* outputs = nullptr) const;

  const GumbelQuantizer* quantizer(Index index) const;
  GumbelQuantizer* quantizer(Index index);
  nn::MultiHeadAttention& fusion_attention() { return fusion_; }

  ParameterList parameters() const;

 private:
  struct FusionBlock {
    nn::Conv1d pre1;
    nn::Conv1d pre2;
    GumbelQuantizer quantizer;
    nn::Conv1d post;
  };

  EnhancerConfig config_;
  std::vector<nn::Conv1d> encoder_;              // level 1..D
  nn::MultiHeadAttention fusion_;
  std::vector<nn::TransformerLayer> bottleneck_;
  std::optional<GumbelQuantizer> vq0_;
  std::vector<std::optional<FusionBlock>> blocks_;  // level 1..D
  std::vector<nn::ConvTranspose1d> decoder_;     // decoder_[i-1] upsamples level i
};

// Indices into a contextual sequence of rate context_rate for each of
// local_frames frames at local_rate (nearest frame by centre time).
std::vector<Index> align_context_frames(Index local_frames, double local_rate, Index context_frames,
                                        double context_rate);

}  // namespace mgvq
