#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <numeric>

#include "vitpad/errors.hpp"
#include "vitpad/gradcheck.hpp"
#include "vitpad/rng.hpp"
#include "vitpad/vit.hpp"

using namespace vitpad;

namespace {

template <typename T>
Tensor<T> random_image(const ViTConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<T> img({cfg.channels, cfg.image_size, cfg.image_size});
  for (auto& v : img.data()) v = static_cast<T>(2.0 * rng.uniform() - 1.0);
  return img;
}

}  // namespace

TEST(Patchify, BaseGeometry) {
  const Tensor<float> img({3, 224, 224}, 0.5f);
  const auto p = patchify(img, 16);
  EXPECT_EQ(p.shape(), (Shape{196, 768}));
}

TEST(Patchify, SmallGeometry) {
  const Tensor<float> img({3, 32, 32}, 0.0f);
  EXPECT_EQ(patchify(img, 8).shape(), (Shape{16, 192}));
}

TEST(Patchify, ConstantImage) {
  const Tensor<double> img({3, 16, 16}, 0.25);
  for (double v : patchify(img, 8).data()) EXPECT_EQ(v, 0.25);
}

TEST(Patchify, ChannelMajorThenRowMajorWithinPatch) {
  Tensor<double> img({2, 4, 4});
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<double>(i);
  const auto p = patchify(img, 2);
  // patch 1 is the top-right 2×2 block
  const std::vector<double> expected{2, 3, 6, 7, 18, 19, 22, 23};
  for (std::size_t k = 0; k < expected.size(); ++k) EXPECT_EQ(p(1, k), expected[k]);
}

TEST(Patchify, IndivisibleSizeThrows) { EXPECT_THROW(patchify(Tensor<float>({3, 10, 10}), 4), ConfigError); }

TEST(ViTConfig, ValidationRejectsBadGeometry) {
  auto c = ViTConfig::tiny();
  c.image_size = 17;
  EXPECT_THROW(c.validate(), ConfigError);
  c = ViTConfig::tiny();
  c.heads = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  c = ViTConfig::tiny();
  c.num_outputs = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(ParamCount, BaseConfig) { EXPECT_EQ(param_count(ViTConfig::base()), 85'799'425u); }

TEST(ParamCount, ThousandOutputs) {
  auto c = ViTConfig::base();
  c.num_outputs = 1000;
  EXPECT_EQ(param_count(c) - param_count(ViTConfig::base()), 999u * (768u + 1u));
}

TEST(ParamCount, TinyMatchesEnumeration) {
  const auto cfg = ViTConfig::tiny();
  const auto params = init_params(cfg, 1);
  std::uint64_t total = 0;
  for (const auto& [name, t] : params.tensors) total += t.size();
  EXPECT_EQ(param_count(cfg), total);
}

TEST(InitParams, DeterministicInSeed) {
  const auto cfg = ViTConfig::tiny();
  EXPECT_EQ(init_params(cfg, 42), init_params(cfg, 42));
  EXPECT_FALSE(init_params(cfg, 42) == init_params(cfg, 43));
}

TEST(InitParams, BiasesZeroNormsUnit) {
  const auto params = init_params(ViTConfig::tiny(), 3);
  for (const auto& [name, t] : params.tensors) {
    if (is_bias_name(name)) {
      for (float v : t.data()) EXPECT_EQ(v, 0.0f) << name;
    } else if (is_norm_name(name)) {
      for (float v : t.data()) EXPECT_EQ(v, 1.0f) << name;
    } else {
      for (float v : t.data()) EXPECT_LE(std::abs(v), 0.04f) << name;
    }
  }
}

TEST(InitParams, WeightMeanNearZero) {
  ViTConfig c = ViTConfig::tiny();
  c.dim = 64;
  c.heads = 4;
  c.mlp_dim = 512;
  const auto params = init_params(c, 11);
  std::vector<double> draws;
  for (const auto& [name, t] : params.tensors) {
    if (is_bias_name(name) || is_norm_name(name)) continue;
    for (float v : t.data()) draws.push_back(v);
  }
  ASSERT_GE(draws.size(), 100000u);
  draws.resize(100000);
  const double mean = std::accumulate(draws.begin(), draws.end(), 0.0) / static_cast<double>(draws.size());
  EXPECT_LT(std::abs(mean), 0.0005);
}

TEST(ViTParams, ValidateNamesMissingExtraAndShape) {
  const auto cfg = ViTConfig::tiny();
  auto params = init_params(cfg, 1);
  EXPECT_NO_THROW(params.validate(cfg));

  auto missing = params;
  missing.tensors.erase("head.weight");
  try {
    missing.validate(cfg);
    FAIL();
  } catch (const MissingParameterError& e) {
    EXPECT_NE(std::string(e.what()).find("head.weight"), std::string::npos);
  }

  auto extra = params;
  extra.tensors.emplace("head.extra", Tensor<float>({1}));
  EXPECT_THROW(extra.validate(cfg), ConfigError);

  auto wrong = params;
  wrong.at("norm.bias") = Tensor<float>({3});
  EXPECT_THROW(wrong.validate(cfg), ConfigError);
}

TEST(Forward, ZeroWeightsGiveHeadBias) {
  const auto cfg = ViTConfig::tiny();
  auto params = init_params(cfg, 1);
  for (auto& [name, t] : params.tensors) t.fill(0.0f);
  params.at("head.bias")[0] = 1.25f;
  for (std::uint64_t s = 0; s < 3; ++s) EXPECT_EQ(forward(random_image<float>(cfg, s), params, cfg).logit, 1.25f);
}

TEST(Forward, OutputShapes) {
  const auto cfg = ViTConfig::tiny();
  const auto trace = forward(random_image<float>(cfg, 1), init_params(cfg, 2), cfg);
  EXPECT_EQ(trace.logits.size(), 1u);
  EXPECT_EQ(trace.embedding.size(), cfg.dim);
  ASSERT_EQ(trace.attention.size(), cfg.depth);
  for (const auto& a : trace.attention) EXPECT_EQ(a.shape(), (Shape{cfg.heads, cfg.tokens(), cfg.tokens()}));
}

TEST(Forward, RejectsImageOfWrongSize) {
  const auto cfg = ViTConfig::tiny();
  EXPECT_THROW(forward(Tensor<float>({3, 32, 32}), init_params(cfg, 1), cfg), ConfigError);
}

TEST(Forward, AttentionRowsSumToOne) {
  const auto cfg = ViTConfig::tiny();
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto params = gradcheck_params(cfg, s);
    const auto trace = forward(random_image<double>(cfg, s + 100), params, cfg);
    for (const auto& a : trace.attention) {
      const std::size_t n = cfg.tokens();
      for (std::size_t row = 0; row < cfg.heads * n; ++row) {
        double sum = 0;
        for (std::size_t j = 0; j < n; ++j) sum += a[row * n + j];
        EXPECT_NEAR(sum, 1.0, 1e-6);
      }
    }
  }
}

TEST(Forward, Deterministic) {
  const auto cfg = ViTConfig::tiny();
  const auto params = init_params(cfg, 9);
  const auto img = random_image<float>(cfg, 9);
  const auto a = forward(img, params, cfg), b = forward(img, params, cfg);
  EXPECT_EQ(a.logit, b.logit);
  EXPECT_EQ(a.embedding, b.embedding);
}

TEST(EncoderBlock, ZeroedResidualBranchesAreIdentity) {
  const auto cfg = ViTConfig::tiny();
  auto params = init_params(cfg, 4);
  for (const char* n : {"attn.proj.weight", "attn.proj.bias", "mlp.fc2.weight", "mlp.fc2.bias"})
    params.at(std::string("blocks.0.") + n).fill(0.0f);
  Rng rng(8);
  Tensor<float> x({cfg.tokens(), cfg.dim});
  for (auto& v : x.data()) v = static_cast<float>(rng.normal());
  Tape<float> tape;
  const auto vars = bind_params(tape, params, {});
  const Var in = tape.constant(x);
  const Var out = encoder_block(tape, in, vars, cfg, 0);
  EXPECT_EQ(tape.value(out), x);
}

TEST(Forward, PatchPermutationWithPositionsLeavesLogit) {
  const auto cfg = ViTConfig::tiny();
  auto params = gradcheck_params(cfg, 5);
  const auto img = random_image<double>(cfg, 6);
  const double before = forward(img, params, cfg).logit;

  // swap patch 0 (top-left) and patch 3 (bottom-right) and their positional rows
  auto swapped = img;
  const std::size_t p = cfg.patch_size;
  for (std::size_t c = 0; c < cfg.channels; ++c)
    for (std::size_t y = 0; y < p; ++y)
      for (std::size_t x = 0; x < p; ++x) std::swap(swapped(c, y, x), swapped(c, p + y, p + x));
  auto& pos = params.at("pos_embed");
  for (std::size_t k = 0; k < cfg.dim; ++k) std::swap(pos(1, k), pos(4, k));
  EXPECT_NEAR(forward(swapped, params, cfg).logit, before, 1e-5);
}

TEST(GradientCheck, TinyModelSeedSeven) {
  const auto start = std::chrono::steady_clock::now();
  const auto r = gradient_check(ViTConfig::tiny(), 7);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  EXPECT_EQ(r.checked, param_count(ViTConfig::tiny()));
  EXPECT_LT(r.max_relative_error, 1e-5) << r.worst_parameter << "[" << r.worst_index << "] analytic "
                                        << r.worst_analytic << " numeric " << r.worst_numeric;
  EXPECT_LT(secs, 60.0);
}

TEST(GradientCheck, RelativeErrorFloor) {
  EXPECT_EQ(relative_error(0.0, 0.0, 1e-6), 0.0);
  EXPECT_DOUBLE_EQ(relative_error(1.0, 0.5, 1e-6), 0.5);
  EXPECT_DOUBLE_EQ(relative_error(1e-9, 0.0, 1e-6), 1e-3);
}
