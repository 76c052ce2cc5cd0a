// Copyright (C) 2026 The adaattn Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "adaattn/losses.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

namespace adaattn {
namespace {

// Taps at side, side/2, ... with a small channel plan.
FeatureStack random_stack(Rng& rng, std::size_t n = 1, bool grad = false, std::size_t side0 = 32) {
  const std::size_t ch[] = {2, 3, 3, 4, 4};
  FeatureStack s;
  for (int x = 0; x < kNumTaps; ++x) {
    std::size_t side = side0 >> x;
    s.taps[x] = rand_uniform({n, ch[x], side, side}, rng, 0.0f, 1.0f, grad);
  }
  return s;
}

FeatureStack with_taps(const std::vector<Tensor>& t) {
  FeatureStack s;
  for (int x = 0; x < kNumTaps; ++x) s.taps[x] = t[x];
  return s;
}

std::vector<Tensor> taps_of(const FeatureStack& s) { return {s.taps.begin(), s.taps.end()}; }

Tensor permute_positions(const Tensor& t, Rng& rng) {
  std::size_t hw = t.dim(2) * t.dim(3), planes = t.dim(0) * t.dim(1);
  std::vector<std::size_t> perm(hw);
  for (std::size_t i = 0; i < hw; ++i) perm[i] = i;
  for (std::size_t i = hw; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
  std::vector<float> out(t.numel());
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t i = 0; i < hw; ++i) out[p * hw + i] = t[p * hw + perm[i]];
  return Tensor::from(t.shape(), out);
}

TEST(GlobalStyleLoss, ZeroOnIdenticalStacks) {
  Rng rng(1);
  auto s = random_stack(rng, 2);
  EXPECT_EQ(global_style_loss(s, s).item(), 0.0f);
}

TEST(GlobalStyleLoss, ConstantFeaturesClosedForm) {
  FeatureStack a, b;
  for (int x = 0; x < kNumTaps; ++x) {
    std::size_t side = 32u >> x;
    a.taps[x] = Tensor::full({1, 1, side, side}, x == 2 ? 1.0f : 0.5f);
    b.taps[x] = Tensor::full({1, 1, side, side}, x == 2 ? 3.0f : 0.5f);
  }
  EXPECT_NEAR(global_style_loss(a, b).item(), 2.0f, 1e-6);
}

TEST(GlobalStyleLoss, IgnoresFirstTap) {
  Rng rng(2);
  auto a = random_stack(rng), b = a;
  b.taps[0] = rand_uniform(a.taps[0].shape(), rng, 5.0f, 9.0f);
  EXPECT_EQ(global_style_loss(a, b).item(), 0.0f);
}

TEST(GlobalStyleLoss, MatchesMomentOracle) {
  Rng rng(3);
  auto a = random_stack(rng, 2), b = random_stack(rng, 2);
  double expected = 0.0;
  for (std::size_t n = 0; n < 2; ++n)
    for (int x = 2; x <= 5; ++x) {
      auto [ma, sa] = oracle::moments(oracle::planes_of(a.tap(x), n));
      auto [mb, sb] = oracle::moments(oracle::planes_of(b.tap(x), n));
      double dm = 0.0, ds = 0.0;
      for (std::size_t c = 0; c < ma.size(); ++c) {
        dm += (ma[c] - mb[c]) * (ma[c] - mb[c]);
        ds += (sa[c] - sb[c]) * (sa[c] - sb[c]);
      }
      expected += (std::sqrt(dm) + std::sqrt(ds)) / 2.0;
    }
  EXPECT_NEAR(global_style_loss(a, b).item(), expected, 1e-5);
}

TEST(GlobalStyleLoss, InvariantToSpatialPermutation) {
  Rng rng(4);
  auto a = random_stack(rng), b = random_stack(rng);
  auto pa = a, pb = b;
  for (int x = 0; x < kNumTaps; ++x) {
    pa.taps[x] = permute_positions(a.taps[x], rng);
    pb.taps[x] = permute_positions(b.taps[x], rng);
  }
  EXPECT_NEAR(global_style_loss(a, b).item(), global_style_loss(pa, pb).item(), 1e-5);
}

TEST(GlobalStyleLoss, RejectsMismatchedStacks) {
  Rng rng(5);
  auto a = random_stack(rng), b = random_stack(rng, 2);
  EXPECT_THROW(global_style_loss(a, b), ContractError);
}

TEST(LocalFeatureLoss, ZeroAtParameterFreeFixedPoint) {
  Rng rng(6);
  auto c = random_stack(rng), s = random_stack(rng);
  for (auto mode : {AttentionMode::softmax, AttentionMode::cosine}) {
    AttentionConfig cfg{.mode = mode};
    auto cs = c;
    for (int x = 3; x <= 5; ++x) cs.taps[x - 1] = local_feature_target(c, s, x, cfg);
    EXPECT_EQ(local_feature_loss(cs, c, s, cfg).item(), 0.0f);
  }
}

TEST(LocalFeatureLoss, SinglePerturbationGivesItsMagnitude) {
  Rng rng(7);
  auto c = random_stack(rng), s = random_stack(rng);
  AttentionConfig cfg;
  auto cs = c;
  for (int x = 3; x <= 5; ++x) cs.taps[x - 1] = local_feature_target(c, s, x, cfg);
  std::vector<float> v(cs.taps[3].data().begin(), cs.taps[3].data().end());
  v[5] -= 0.375f;
  cs.taps[3] = Tensor::from(cs.taps[3].shape(), v);
  EXPECT_NEAR(local_feature_loss(cs, c, s, cfg).item(), 0.375f, 1e-6);
}

TEST(LocalFeatureLoss, NonNegativeAndTargetIsConstant) {
  Rng rng(8);
  auto c = random_stack(rng, 2, true), s = random_stack(rng, 2, true), cs = random_stack(rng, 2, true);
  auto loss = local_feature_loss(cs, c, s, {});
  EXPECT_GE(loss.item(), 0.0f);
  backward(loss);
  for (int x = 3; x <= 5; ++x) {
    EXPECT_TRUE(cs.tap(x).has_grad());
    EXPECT_FALSE(c.tap(x).has_grad());
    EXPECT_FALSE(s.tap(x).has_grad());
  }
}

TEST(LocalFeatureLoss, VanillaContentLossOnlyWhenRequested) {
  Rng rng(9);
  auto c = random_stack(rng), s = random_stack(rng), cs = random_stack(rng);
  auto base = local_feature_loss(cs, c, s, {}).item();
  EXPECT_NEAR(content_loss(c, c).item(), 0.0f, 0.0f);
  EXPECT_GT(content_loss(cs, c).item(), 0.0f);
  LossOptions opt;
  opt.vanilla_content = true;
  auto parts = image_losses(cs, c, s, {}, opt);
  EXPECT_NEAR(parts.local.item(), content_loss(cs, c).item(), 1e-6);
  EXPECT_NE(parts.local.item(), base);
}

TEST(CrossImageSimilarity, ZeroOnIdentityStylization) {
  Rng rng(10);
  auto c1 = random_stack(rng, 2), c2 = random_stack(rng, 2);
  EXPECT_EQ(cross_image_similarity_loss(c1, c2, c1, c2).item(), 0.0f);
}

TEST(CrossImageSimilarity, ParallelFeaturesGiveUniformColumnsAndZero) {
  FeatureStack a, b;
  for (int x = 0; x < kNumTaps; ++x) {
    std::size_t side = 32u >> x;
    a.taps[x] = Tensor::full({1, 3, side, side}, 0.5f);
    b.taps[x] = Tensor::full({1, 3, side, side}, 2.0f);
  }
  EXPECT_EQ(cross_image_similarity_loss(a, a, b, b).item(), 0.0f);
  auto d = distance_pattern(a.tap(2), b.tap(2));
  for (float v : d.data()) EXPECT_FLOAT_EQ(v, 1.0f / 256.0f);
}

TEST(CrossImageSimilarity, NormalizedColumnsSumToOne) {
  Rng rng(11);
  auto d = distance_pattern(rand_uniform({2, 3, 4, 4}, rng, -1.0f, 1.0f), rand_uniform({2, 3, 4, 4}, rng, -1.0f, 1.0f));
  ASSERT_EQ(d.shape(), (Shape{2, 16, 16}));
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t j = 0; j < 16; ++j) {
      double col = 0.0;
      for (std::size_t i = 0; i < 16; ++i) col += d[(n * 16 + i) * 16 + j];
      EXPECT_NEAR(col, 1.0, 1e-5);
    }
}

TEST(CrossImageSimilarity, TwoPositionToyMatchesLoopOracle) {
  // hand-chosen 2-channel vectors at two positions per image
  auto t = [](std::vector<float> v) { return Tensor::from({1, 2, 1, 2}, v); };
  Tensor c1 = t({1, 0, 0, 1}), c2 = t({1, 1, 1, -1}), s1 = t({2, 1, 0.5f, 1}), s2 = t({0, 3, 1, 1});
  double expected = oracle::similarity_term(oracle::planes_of(c1, 0), oracle::planes_of(c2, 0),
                                            oracle::planes_of(s1, 0), oracle::planes_of(s2, 0));
  EXPECT_NEAR(similarity_term(c1, c2, s1, s2).item(), expected, 1e-6);
  EXPECT_GT(expected, 0.0);
}

TEST(CrossImageSimilarity, SumsTapsTwoToFourAgainstOracle) {
  Rng rng(12);
  auto c1 = random_stack(rng, 2), c2 = random_stack(rng, 2), s1 = random_stack(rng, 2), s2 = random_stack(rng, 2);
  double expected = 0.0;
  for (std::size_t n = 0; n < 2; ++n)
    for (int x = 2; x <= 4; ++x)
      expected += oracle::similarity_term(oracle::planes_of(c1.tap(x), n), oracle::planes_of(c2.tap(x), n),
                                          oracle::planes_of(s1.tap(x), n), oracle::planes_of(s2.tap(x), n)) /
                  2.0;
  EXPECT_NEAR(cross_image_similarity_loss(c1, c2, s1, s2).item(), expected, 1e-6);
}

TEST(TotalLoss, WeightsReproduceStatedSums) {
  LossWeights w;
  EXPECT_EQ(w.global_style, 10.0f);
  EXPECT_EQ(w.local_feature, 3.0f);
  EXPECT_EQ(w.similarity, 100.0f);
  EXPECT_EQ(total_loss({Tensor::scalar(1.0f), Tensor::scalar(1.0f)}, w).item(), 13.0f);
  EXPECT_EQ(total_loss({Tensor::scalar(1.0f), Tensor::scalar(1.0f), Tensor::scalar(1.0f)}, w).item(), 113.0f);
  EXPECT_EQ(total_loss({Tensor::scalar(0.0f), Tensor::scalar(0.0f), Tensor::scalar(0.0f)}, w).item(), 0.0f);
}

TEST(LossGradients, GlobalStyle) {
  Rng rng(13);
  // small grids keep the finite-difference signal above float rounding of the loss
  auto a = random_stack(rng, 2, false, 16), b = random_stack(rng, 2, false, 16);
  auto fn = [&](const std::vector<Tensor>& in) { return global_style_loss(with_taps(in), b); };
  auto r = testing::grad_check(fn, taps_of(a), {false, true, true, true, true});
  EXPECT_LT(r.max_rel_error, 1e-2);
}

TEST(LossGradients, LocalFeature) {
  Rng rng(14);
  auto c = random_stack(rng), s = random_stack(rng), cs = random_stack(rng);
  for (auto mode : {AttentionMode::softmax, AttentionMode::cosine}) {
    AttentionConfig cfg{.mode = mode};
    auto fn = [&](const std::vector<Tensor>& in) { return local_feature_loss(with_taps(in), c, s, cfg); };
    auto r = testing::grad_check(fn, taps_of(cs), {false, false, true, true, true});
    EXPECT_LT(r.max_rel_error, 1e-2) << to_string(mode);
  }
}

TEST(LossGradients, CrossImageSimilarity) {
  Rng rng(15);
  FeatureStack c1, c2, s1, s2;
  for (auto* st : {&c1, &c2, &s1, &s2})
    for (int x = 0; x < kNumTaps; ++x) {
      std::size_t side = 8u >> std::min(x, 3);
      st->taps[x] = rand_uniform({1, 3, side, side}, rng, -1.0f, 1.0f);
    }
  auto fn = [&](const std::vector<Tensor>& in) {
    auto a = with_taps({in[0], in[1], in[2], in[3], in[4]});
    auto b = with_taps({in[5], in[6], in[7], in[8], in[9]});
    return cross_image_similarity_loss(c1, c2, a, b);
  };
  auto inputs = taps_of(s1);
  for (const auto& t : taps_of(s2)) inputs.push_back(t);
  std::vector<bool> tracked = {false, true, true, true, false, false, true, true, true, false};
  auto r = testing::grad_check(fn, inputs, tracked);
  EXPECT_LT(r.max_rel_error, 1e-2);
}

TEST(LossGradients, TotalLoss) {
  auto fn = [](const std::vector<Tensor>& in) { return total_loss({in[0], in[1], in[2]}, LossWeights{}); };
  auto r = testing::grad_check(fn, {Tensor::scalar(0.3f), Tensor::scalar(1.1f), Tensor::scalar(0.2f)});
  EXPECT_LT(r.max_rel_error, 1e-3);
}

}  // namespace
}  // namespace adaattn
