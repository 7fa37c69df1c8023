#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "mgvq/error.hpp"
#include "mgvq/network.hpp"
#include "mgvq/ops.hpp"
#include "test_util.hpp"

using namespace mgvq;

namespace {

Waveform noise(Index n, std::uint64_t seed) {
  Rng rng(seed);
  return Waveform(tk::random_signal(n, rng, 0.2));
}

EnhancerConfig tiny(bool fusion = true) { return tk::tiny_config(3, fusion); }

FeatureBundle context_for(const Waveform& x, Index dim, double rate = 50.0, std::uint64_t seed = 3) {
  const Index frames = std::max<Index>(1, static_cast<Index>(std::ceil(x.duration() * rate)));
  Rng rng(seed);
  FeatureBundle b;
  b.features = tk::random_tensor({frames, dim}, rng);
  b.frame_rate = rate;
  b.provider_id = "test";
  return b;
}

}  // namespace

TEST(Config, PresetsValidate) {
  const auto full = EnhancerConfig::full();
  EXPECT_NO_THROW(full.validate());
  EXPECT_EQ(full.depth, 5);
  EXPECT_EQ(full.hidden_dim, 512);
  EXPECT_EQ(full.vq_configs[0].num_codebooks, 2);
  EXPECT_EQ(full.vq_configs[0].codewords_per_book, 320);
  const std::vector<Index> sizes{320, 640, 960, 2560, 5120};
  for (Index i = 1; i <= 5; ++i) EXPECT_EQ(full.vq_configs[static_cast<std::size_t>(i)].codewords_per_book, sizes[static_cast<std::size_t>(i - 1)]);
  const auto desk = EnhancerConfig::desk();
  EXPECT_NO_THROW(desk.validate());
  EXPECT_EQ(desk.depth, 4);
  EXPECT_EQ(desk.total_stride(), 16);
}

TEST(Config, RejectsInconsistentSettings) {
  auto c = tiny();
  c.vq_enabled.pop_back();
  EXPECT_THROW(c.validate(), InvalidArgument);
  c = tiny();
  c.attention_heads = 3;
  EXPECT_THROW(c.validate(), InvalidArgument);
  c = tiny();
  c.vq_configs[1].input_dim = 4;
  EXPECT_THROW(c.validate(), InvalidArgument);
  c = tiny();
  c.kernel = 1;
  EXPECT_THROW(c.validate(), InvalidArgument);
}

TEST(Padding, ValidLengthRoundsUpToTotalStride) {
  const auto c = tiny();
  EXPECT_EQ(valid_length(1, c), 8);
  EXPECT_EQ(valid_length(8, c), 8);
  EXPECT_EQ(valid_length(9, c), 16);
  const auto p = pad_input(noise(13, 1), c);
  EXPECT_EQ(p.original_length, 13);
  EXPECT_EQ(p.padded.size(), 16);
  EXPECT_EQ(p.padded.samples[13], 0.0);
}

TEST(Alignment, NearestFrameByCentreTime) {
  // local 100 frames/s, context 50 frames/s: each context frame covers two local frames.
  const auto idx = align_context_frames(6, 100.0, 3, 50.0);
  EXPECT_EQ(idx, (std::vector<Index>{0, 0, 1, 1, 2, 2}));
  const auto clamped = align_context_frames(4, 10.0, 1, 3.0);
  for (Index i : clamped) EXPECT_EQ(i, 0);
}

TEST(Enhancer, ShapeContractOverRandomLengths) {
  const auto cfg = tiny();
  Enhancer model(cfg, 1);
  Rng rng(2);
  for (int trial = 0; trial < 15; ++trial) {
    const Index n = 1 + static_cast<Index>(rng.below(3000));
    const Waveform x = noise(n, 10 + trial);
    const auto ctx = context_for(x, cfg.feature_dim);
    const auto r = model.forward(x, &ctx, Mode::Train, 5, 0);
    ASSERT_EQ(r.output.cols(), n);
    const Index padded = valid_length(n, cfg);
    for (Index level = 1; level <= cfg.depth; ++level) {
      const Index expect = padded >> level;
      const auto& e = r.activations.encoder_outputs[static_cast<std::size_t>(level - 1)];
      const auto& d = r.activations.decoder_inputs[static_cast<std::size_t>(level - 1)];
      EXPECT_EQ(e.rows(), cfg.hidden_dim);
      EXPECT_EQ(e.cols(), expect);
      EXPECT_EQ(d.rows(), cfg.hidden_dim);
      EXPECT_EQ(d.cols(), expect);
    }
    EXPECT_EQ(r.activations.bottleneck_output.rows(), padded >> cfg.depth);
    EXPECT_EQ(model.enhance(x, &ctx).size(), n);
  }
}

TEST(Enhancer, OnlyEnabledQuantizersExist) {
  auto cfg = tiny();
  cfg.vq_enabled = {true, false, true, false};
  Enhancer model(cfg, 1);
  EXPECT_NE(model.quantizer(0), nullptr);
  EXPECT_EQ(model.quantizer(1), nullptr);
  EXPECT_NE(model.quantizer(2), nullptr);
  EXPECT_EQ(model.quantizer(3), nullptr);
  const Waveform x = noise(200, 3);
  const auto ctx = context_for(x, cfg.feature_dim);
  const auto r = model.forward(x, &ctx, Mode::Train, 1, 0);
  EXPECT_EQ(r.vq_layers, (std::vector<Index>{0, 2}));
  for (const auto& p : model.parameters()) {
    EXPECT_EQ(p.name.find("vq_block.1."), std::string::npos);
    EXPECT_EQ(p.name.find("vq_block.3."), std::string::npos);
  }
  cfg.vq_enabled.assign(4, false);
  Enhancer plain(cfg, 1);
  EXPECT_TRUE(plain.forward(x, &ctx, Mode::Train, 1, 0).vq_outputs.empty());
}

TEST(Enhancer, QuantizerOrderFollowsDecoder) {
  const auto cfg = tiny();
  Enhancer model(cfg, 1);
  const Waveform x = noise(300, 4);
  const auto ctx = context_for(x, cfg.feature_dim);
  const auto r = model.forward(x, &ctx, Mode::Eval, 0, -1);
  EXPECT_EQ(r.vq_layers, (std::vector<Index>{0, 3, 2, 1}));
  const Index padded = valid_length(300, cfg);
  for (std::size_t k = 0; k < r.vq_outputs.size(); ++k) {
    const Index level = r.vq_layers[k];
    EXPECT_EQ(r.vq_outputs[k].frames, padded >> (level == 0 ? cfg.depth : level));
    EXPECT_EQ(r.vq_outputs[k].codewords_per_book, cfg.vq_configs[static_cast<std::size_t>(level)].codewords_per_book);
  }
}

TEST(Enhancer, FusionRequiresAlignedContext) {
  const auto cfg = tiny();
  Enhancer model(cfg, 1);
  const Waveform x = noise(1600, 5);  // 0.1 s
  EXPECT_THROW(model.forward(x, nullptr, Mode::Eval, 0), InvalidArgument);
  const auto far_too_long = context_for(Waveform(std::vector<double>(16000, 0.0)), cfg.feature_dim);
  EXPECT_THROW(model.forward(x, &far_too_long, Mode::Eval, 0), InvalidArgument);
  const auto wrong_dim = context_for(x, cfg.feature_dim + 1);
  EXPECT_THROW(model.forward(x, &wrong_dim, Mode::Eval, 0), InvalidArgument);
  const auto one_extra = context_for(Waveform(std::vector<double>(1600 + 320, 0.0)), cfg.feature_dim);
  EXPECT_NO_THROW(model.forward(x, &one_extra, Mode::Eval, 0));
}

TEST(Enhancer, FusionDisabledNeedsNoContext) {
  const auto cfg = tiny(false);
  Enhancer model(cfg, 1);
  EXPECT_EQ(model.enhance(noise(500, 6), nullptr).size(), 500);
}

TEST(Enhancer, DeterministicGivenSeeds) {
  const auto cfg = tiny();
  const Waveform x = noise(900, 7);
  const auto ctx = context_for(x, cfg.feature_dim);
  Enhancer a(cfg, 11), b(cfg, 11), c(cfg, 12);
  const auto ya = a.forward(x, &ctx, Mode::Train, 3, 10).output.value();
  const auto yb = b.forward(x, &ctx, Mode::Train, 3, 10).output.value();
  const auto yc = c.forward(x, &ctx, Mode::Train, 3, 10).output.value();
  EXPECT_EQ(ya.storage(), yb.storage());
  EXPECT_NE(ya.storage(), yc.storage());
  // Eval mode ignores the noise seed.
  EXPECT_EQ(a.forward(x, &ctx, Mode::Eval, 1).output.value().storage(),
            a.forward(x, &ctx, Mode::Eval, 2).output.value().storage());
}

TEST(Enhancer, NormalisationDividesByRmsAndRestoresScale) {
  auto cfg = tiny(false);
  cfg.vq_enabled.assign(4, false);
  Enhancer normalised(cfg, 1);
  cfg.normalize_input = false;
  Enhancer raw(cfg, 1);
  const Waveform x = noise(640, 8);
  double rms = 0.0;
  for (double v : x.samples) rms += v * v;
  const double norm = std::sqrt(rms / 640.0) + 1e-3;
  Waveform scaled = x;
  for (double& v : scaled.samples) v /= norm;
  const Waveform y = normalised.enhance(x, nullptr);
  const Waveform ref = raw.enhance(scaled, nullptr);
  for (std::size_t i = 0; i < 640; ++i) EXPECT_NEAR(y.samples[i], norm * ref.samples[i], 1e-12);
}

TEST(Enhancer, GradientsReachEveryParameter) {
  const auto cfg = tiny();
  Enhancer model(cfg, 1);
  const Waveform x = noise(800, 9);
  const auto ctx = context_for(x, cfg.feature_dim);
  const auto r = model.forward(x, &ctx, Mode::Train, 4, 0);
  Rng rng(1);
  Var loss = ops::dot_constant(r.output, tk::random_tensor({1, 800}, rng));
  for (const auto& q : r.vq_outputs) loss = ops::add(loss, q.diversity_loss);
  loss.backward();
  for (const auto& p : model.parameters()) {
    ASSERT_TRUE(p.var.has_grad()) << p.name;
    double n = 0.0;
    for (double g : p.var.grad().values()) n += std::abs(g);
    EXPECT_GT(n, 0.0) << p.name;
  }
}

TEST(Enhancer, ParameterGradientsMatchFiniteDifferencesWithoutQuantizers) {
  auto cfg = tiny();
  cfg.vq_enabled.assign(4, false);
  Enhancer model(cfg, 1);
  const Waveform x = noise(128, 10);
  const auto ctx = context_for(x, cfg.feature_dim);
  Rng rng(2);
  const Tensor c = tk::random_tensor({1, 128}, rng);
  auto value = [&] {
    NoGradGuard g;
    const Tensor y = model.forward(x, &ctx, Mode::Eval, 0).output.value();
    double s = 0.0;
    for (Index i = 0; i < y.size(); ++i) s += y[i] * c[i];
    return s;
  };
  ops::dot_constant(model.forward(x, &ctx, Mode::Eval, 0).output, c).backward();
  for (auto p : model.parameters()) {
    // A handful of entries per tensor keeps the check fast.
    Tensor& w = p.var.mutable_value();
    const Tensor grad = p.var.grad();
    for (Index k = 0; k < std::min<Index>(3, w.size()); ++k) {
      const Index i = (k * 7919) % w.size();
      const double orig = w[i];
      const double h = 1e-6;
      w[i] = orig + h;
      const double up = value();
      w[i] = orig - h;
      const double down = value();
      w[i] = orig;
      const double fd = (up - down) / (2 * h);
      EXPECT_NEAR(grad[i], fd, 1e-5 * std::max(1.0, std::abs(fd))) << p.name << "[" << i << "]";
    }
  }
}

TEST(Enhancer, ParameterNamesAreUnique) {
  Enhancer model(tiny(), 1);
  std::set<std::string> names;
  for (const auto& p : model.parameters()) EXPECT_TRUE(names.insert(p.name).second) << p.name;
}
