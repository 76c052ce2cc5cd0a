// Copyright (C) 2026 The adaattn Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "adaattn/attention.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

namespace adaattn {
namespace {

struct ToyCase {
  Tensor fc, fs, fc_cas, fs_cas;
  AdaAttNParams params;
};

ToyCase random_case(Rng& rng, std::size_t c, std::size_t qk, std::size_t hc, std::size_t wc, std::size_t hs,
                    std::size_t ws, std::size_t n = 1) {
  ToyCase t;
  t.fc = randn({n, c, hc, wc}, rng);
  t.fs = randn({n, c, hs, ws}, rng);
  t.fc_cas = randn({n, qk, hc, wc}, rng);
  t.fs_cas = randn({n, qk, hs, ws}, rng);
  t.params = init_adaattn_params(qk, c, rng);
  t.params.f_bias = randn({qk}, rng, 0.1f, true);
  t.params.g_bias = randn({qk}, rng, 0.1f, true);
  t.params.h_bias = randn({c}, rng, 0.1f, true);
  return t;
}

oracle::Projections projections(const AdaAttNParams& p) {
  return {p.f_weight, p.f_bias, p.g_weight, p.g_bias, p.h_weight, p.h_bias};
}

FeatureStack toy_stack(Rng& rng, EncoderProfile profile, std::size_t base) {
  FeatureStack s;
  auto plan = channel_plan(profile);
  for (int x = 1; x <= 5; ++x) {
    std::size_t side = base >> (x - 1);
    s.taps[x - 1] = randn({1, plan[x - 1], side, side}, rng);
  }
  return s;
}

TEST(MultiscaleConcat, TinyChannelArithmetic) {
  Rng rng(1);
  auto stack = toy_stack(rng, EncoderProfile::tiny, 32);
  auto cas = multiscale_concat(stack, 3);
  EXPECT_EQ(cas.shape(), (Shape{1, 56, 8, 8}));
  EXPECT_EQ(multiscale_concat(stack, 4).dim(1), 120u);
  EXPECT_EQ(qk_dim_for(EncoderProfile::tiny, 5), 184u);
}

TEST(MultiscaleConcat, ZeroShallowTapsLeaveOnlyCurrentTap) {
  Rng rng(2);
  auto stack = toy_stack(rng, EncoderProfile::tiny, 32);
  stack.taps[0] = Tensor::zeros(stack.tap(1).shape());
  stack.taps[1] = Tensor::zeros(stack.tap(2).shape());
  auto cas = multiscale_concat(stack, 3);
  const std::size_t hw = 64;
  for (std::size_t i = 0; i < 24 * hw; ++i) EXPECT_EQ(cas[i], 0.0f);
  for (std::size_t i = 0; i < 32 * hw; ++i) EXPECT_EQ(cas[24 * hw + i], stack.tap(3)[i]);
}

TEST(MultiscaleConcat, FullProfileChannelCount) {
  Rng rng(3);
  auto stack = toy_stack(rng, EncoderProfile::full, 16);
  EXPECT_EQ(multiscale_concat(stack, 5).dim(1), 1472u);
  EXPECT_EQ(qk_dim_for(EncoderProfile::full, 3), 448u);
  EXPECT_EQ(qk_dim_for(EncoderProfile::full, 4), 960u);
}

TEST(MultiscaleConcat, InvalidTap) {
  Rng rng(4);
  auto stack = toy_stack(rng, EncoderProfile::tiny, 32);
  EXPECT_THROW(multiscale_concat(stack, 2), ContractError);
  EXPECT_THROW(multiscale_concat(stack, 6), ContractError);
}

TEST(AttentionScores, ZeroLogitsGiveUniformRows) {
  Rng rng(5);
  auto t = random_case(rng, 2, 3, 2, 3, 2, 2);
  t.params.f_weight = Tensor::zeros({3, 3, 1, 1});
  t.params.f_bias = Tensor::zeros({3});
  auto a = attention_scores(t.fc_cas, t.fs_cas, t.params, {});
  ASSERT_EQ(a.shape(), (Shape{1, 6, 4}));
  for (float v : a.data()) EXPECT_FLOAT_EQ(v, 0.25f);
}

TEST(AttentionScores, CosineWithIdenticalKeysIsUniform) {
  Rng rng(6);
  auto t = random_case(rng, 2, 3, 2, 2, 3, 1);
  auto b = Tensor::from({3}, {0.3f, -1.0f, 2.0f});
  t.params.f_weight = Tensor::zeros({3, 3, 1, 1});
  t.params.g_weight = Tensor::zeros({3, 3, 1, 1});
  t.params.f_bias = b;
  t.params.g_bias = b;
  AttentionConfig cfg;
  cfg.mode = AttentionMode::cosine;
  auto a = attention_scores(t.fc_cas, t.fs_cas, t.params, cfg);
  for (float v : a.data()) EXPECT_NEAR(v, 1.0f / 3.0f, 1e-6);
}

TEST(AttentionScores, MatchesScalarOracle) {
  Rng rng(7);
  for (bool cosine : {false, true}) {
    // 3 content positions x 5 style positions.
    auto t = random_case(rng, 2, 4, 1, 3, 1, 5);
    AttentionConfig cfg;
    cfg.mode = cosine ? AttentionMode::cosine : AttentionMode::softmax;
    auto a = attention_scores(t.fc_cas, t.fs_cas, t.params, cfg);
    auto q = oracle::conv1x1(oracle::norm(oracle::planes_of(t.fc_cas, 0)), t.params.f_weight, t.params.f_bias);
    auto k = oracle::conv1x1(oracle::norm(oracle::planes_of(t.fs_cas, 0)), t.params.g_weight, t.params.g_bias);
    auto ref = oracle::attention(q, k, cosine);
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 5; ++j) EXPECT_NEAR(a[i * 5 + j], ref[i][j], 1e-6) << cosine;
  }
}

AttentionConfig mask_config(AttentionMode mode, std::size_t hc, std::size_t wc, std::size_t hs, std::size_t ws,
                            std::vector<std::size_t> content_cells, std::vector<std::size_t> allowed_cells) {
  RegionConstraint rc{BoolMap(hc, wc), BoolMap(hs, ws)};
  for (auto i : content_cells) rc.content.cells[i] = 1;
  for (auto j : allowed_cells) rc.style.cells[j] = 1;
  AttentionConfig cfg;
  cfg.mode = mode;
  cfg.region = rc;
  return cfg;
}

TEST(AttentionScores, MaskedColumnCarriesNoWeight) {
  Rng rng(8);
  for (auto mode : {AttentionMode::softmax, AttentionMode::cosine}) {
    auto t = random_case(rng, 2, 4, 2, 2, 2, 2);
    // Row 0 may attend to style positions 1..3 only.
    auto cfg = mask_config(mode, 2, 2, 2, 2, {0}, {1, 2, 3});
    auto a = attention_scores(t.fc_cas, t.fs_cas, t.params, cfg);
    EXPECT_LT(a[0], 1e-8f);
    double row0 = a[1] + a[2] + a[3];
    EXPECT_NEAR(row0, 1.0, 1e-5);
    auto free = attention_scores(t.fc_cas, t.fs_cas, t.params, {.mode = mode});
    for (std::size_t i = 4; i < 16; ++i) EXPECT_FLOAT_EQ(a[i], free[i]);  // rows 1..3 untouched
  }
}

TEST(AttentionScores, MaskMatchesOracle) {
  Rng rng(9);
  auto t = random_case(rng, 2, 4, 2, 2, 2, 3);
  auto cfg = mask_config(AttentionMode::softmax, 2, 2, 2, 3, {0, 3}, {4, 5});
  auto a = attention_scores(t.fc_cas, t.fs_cas, t.params, cfg);
  auto q = oracle::conv1x1(oracle::norm(oracle::planes_of(t.fc_cas, 0)), t.params.f_weight, t.params.f_bias);
  auto k = oracle::conv1x1(oracle::norm(oracle::planes_of(t.fs_cas, 0)), t.params.g_weight, t.params.g_bias);
  oracle::Blocked blocked(4, std::vector<bool>(6, false));
  for (std::size_t i : {0, 3})
    for (std::size_t j = 0; j < 4; ++j) blocked[i][j] = true;
  auto ref = oracle::attention(q, k, false, &blocked);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 6; ++j) EXPECT_NEAR(a[i * 6 + j], ref[i][j], 1e-6);
}

TEST(AttentionScores, EmptyAllowedRegionIsMaskError) {
  Rng rng(10);
  auto t = random_case(rng, 2, 4, 2, 2, 2, 2);
  auto cfg = mask_config(AttentionMode::softmax, 2, 2, 2, 2, {1}, {});
  EXPECT_THROW(attention_scores(t.fc_cas, t.fs_cas, t.params, cfg), MaskError);
}

TEST(RegionMask, DownsamplingUsesHalfCoverage) {
  BoolMap content(4, 4), style(4, 4);
  // Top-left 2x2 block fully inside; top-right block one pixel of four.
  for (std::size_t y = 0; y < 2; ++y)
    for (std::size_t x = 0; x < 2; ++x) content.set(y, x, true);
  content.set(0, 3, true);
  style.set(3, 3, true);  // a quarter of the bottom-right cell
  auto m = downsample_region(content, style, 2, 2, 2, 2);
  EXPECT_EQ(m.content_region.cells, (std::vector<std::uint8_t>{1, 0, 0, 0}));
  EXPECT_EQ(m.style_allowed.cells, (std::vector<std::uint8_t>{0, 0, 0, 1}));  // fallback to any overlap
}

TEST(WeightedStats, TwoPointHandComputation) {
  auto st = weighted_stats(Tensor::from({1, 2}, {0.5f, 0.5f}), Tensor::from({1, 2}, {1, 3}));
  EXPECT_FLOAT_EQ(st.mean[0], 2.0f);
  EXPECT_FLOAT_EQ(st.std[0], 1.0f);
}

TEST(WeightedStats, OneHotRowSelectsColumn) {
  Rng rng(11);
  auto v = randn({3, 4}, rng);
  auto st = weighted_stats(Tensor::from({1, 4}, {0, 0, 1, 0}), v);
  for (std::size_t c = 0; c < 3; ++c) {
    EXPECT_FLOAT_EQ(st.mean[c], v[c * 4 + 2]);
    EXPECT_EQ(st.std[c], 0.0f);
  }
}

TEST(WeightedStats, SingleStylePositionHasZeroStd) {
  Rng rng(12);
  auto v = randn({3, 1}, rng);
  auto st = weighted_stats(Tensor::full({5, 1}, 1.0f), v);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < 5; ++i) {
      EXPECT_FLOAT_EQ(st.mean[c * 5 + i], v[c]);
      EXPECT_EQ(st.std[c * 5 + i], 0.0f);
    }
}

TEST(AdaAttNApply, IdentityAndPureShift) {
  Rng rng(13);
  auto fc = randn({1, 2, 3, 3}, rng);
  auto m = randn({1, 2, 9}, rng);
  auto out = adaattn_apply(fc, Tensor::zeros({1, 2, 9}), Tensor::full({1, 2, 9}, 1.0f));
  auto ref = channel_norm(fc);
  for (std::size_t i = 0; i < out.numel(); ++i) EXPECT_FLOAT_EQ(out[i], ref[i]);
  auto shifted = adaattn_apply(fc, m, Tensor::zeros({1, 2, 9}));
  for (std::size_t i = 0; i < out.numel(); ++i) EXPECT_FLOAT_EQ(shifted[i], m[i]);
}

TEST(AdaAttNApply, UniformAttentionIsAdaIN) {
  Rng rng(14);
  for (int trial = 0; trial < 20; ++trial) {
    std::size_t pc = 1 + rng.below(12), ps = 1 + rng.below(12), c = 1 + rng.below(4);
    auto fc = randn({1, c, 1, pc}, rng);
    auto v = randn({c, ps}, rng, rng.uniform(0.1f, 3.0f));
    auto st = weighted_stats(Tensor::full({pc, ps}, 1.0f / static_cast<float>(ps)), v);
    auto out = adaattn_apply(fc, st.mean, st.std);
    auto normed = channel_norm(fc);
    for (std::size_t ch = 0; ch < c; ++ch) {
      double mu = 0.0, var = 0.0;
      for (std::size_t j = 0; j < ps; ++j) mu += v[ch * ps + j];
      mu /= ps;
      for (std::size_t j = 0; j < ps; ++j) var += (v[ch * ps + j] - mu) * (v[ch * ps + j] - mu);
      double sigma = std::sqrt(var / ps);
      for (std::size_t i = 0; i < pc; ++i)
        EXPECT_NEAR(out[ch * pc + i], sigma * normed[ch * pc + i] + mu, 1e-5);
    }
  }
}

TEST(AdaAttNForward, DeterministicSelfAttention) {
  Rng rng(15);
  auto f = randn({1, 4, 3, 3}, rng);
  auto id = identity_adaattn_params(4, 4);
  auto a = adaattn_forward(f, f, f, f, id, {});
  auto b = adaattn_forward(f, f, f, f, id, {});
  EXPECT_TRUE(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
}

TEST(AdaAttNForward, MatchesLoopOracle) {
  Rng rng(16);
  for (bool cosine : {false, true}) {
    auto t = random_case(rng, 4, 6, 3, 3, 2, 2);
    AttentionConfig cfg{.mode = cosine ? AttentionMode::cosine : AttentionMode::softmax};
    auto out = adaattn_forward(t.fc, t.fs, t.fc_cas, t.fs_cas, t.params, cfg);
    auto ref = oracle::adaattn(t.fc, t.fs, t.fc_cas, t.fs_cas, projections(t.params), cosine);
    for (std::size_t c = 0; c < 4; ++c)
      for (std::size_t p = 0; p < 9; ++p) EXPECT_NEAR(out[c * 9 + p], ref[c][p], 1e-5);
  }
}

TEST(AdaAttNForward, BatchedMatchesPerSampleOracle) {
  Rng rng(17);
  auto t = random_case(rng, 3, 5, 2, 3, 3, 2, 2);
  auto out = adaattn_forward(t.fc, t.fs, t.fc_cas, t.fs_cas, t.params, {});
  for (std::size_t s = 0; s < 2; ++s) {
    auto ref = oracle::adaattn(t.fc, t.fs, t.fc_cas, t.fs_cas, projections(t.params), false, s);
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t p = 0; p < 6; ++p) EXPECT_NEAR(out[(s * 3 + c) * 6 + p], ref[c][p], 1e-5);
  }
}

TEST(AdaAttNForward, GradientWrtProjectionsMatchesFiniteDifferences) {
  Rng rng(18);
  auto t = random_case(rng, 4, 4, 2, 2, 2, 2);
  for (auto mode : {AttentionMode::softmax, AttentionMode::cosine}) {
    auto fn = [&](const std::vector<Tensor>& in) {
      AdaAttNParams p = t.params;
      p.f_weight = in[0];
      p.g_weight = in[1];
      p.h_weight = in[2];
      return sum(adaattn_forward(in[3], t.fs, t.fc_cas, in[4], p, {.mode = mode}));
    };
    auto r = testing::grad_check(fn, {t.params.f_weight, t.params.g_weight, t.params.h_weight, t.fc, t.fs_cas});
    EXPECT_LT(r.max_rel_error, 1e-2) << to_string(mode) << " input " << r.worst_input;
  }
}

TEST(AdaAttNStar, EqualsForwardWithIdentityProjections) {
  Rng rng(19);
  auto t = random_case(rng, 3, 7, 3, 2, 2, 3);
  for (auto mode : {AttentionMode::softmax, AttentionMode::cosine}) {
    auto star = adaattn_star(t.fc, t.fs, t.fc_cas, t.fs_cas, {.mode = mode});
    auto fwd = adaattn_forward(t.fc, t.fs, t.fc_cas, t.fs_cas, identity_adaattn_params(7, 3), {.mode = mode});
    for (std::size_t i = 0; i < star.numel(); ++i) EXPECT_EQ(star[i], fwd[i]);
    EXPECT_FALSE(star.requires_grad());
  }
}

TEST(AdaAttNStar, SingleStylePositionBroadcastsStyle) {
  Rng rng(20);
  auto t = random_case(rng, 3, 5, 2, 2, 1, 1);
  auto out = adaattn_star(t.fc, t.fs, t.fc_cas, t.fs_cas, {});
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t p = 0; p < 4; ++p) EXPECT_FLOAT_EQ(out[c * 4 + p], t.fs[c]);
}

TEST(AdaAttNStar, MatchesLoopOracle) {
  Rng rng(21);
  auto t = random_case(rng, 3, 5, 3, 2, 2, 4);
  auto out = adaattn_star(t.fc, t.fs, t.fc_cas, t.fs_cas, {});
  auto ref = oracle::adaattn(t.fc, t.fs, t.fc_cas, t.fs_cas, std::nullopt, false);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t p = 0; p < 6; ++p) EXPECT_NEAR(out[c * 6 + p], ref[c][p], 1e-5);
}

TEST(AdaAttNForward, LoneCosineStylePositionKeepsEpsVariance) {
  // One style column: its weight is S / (S + eps), so the exact variance is
  // eps-sized but its square root is well above the tolerance.
  Rng rng(27);
  for (int trial = 0; trial < 10; ++trial) {
    auto t = random_case(rng, 3, 4, 2, 3, 1, 1);
    auto out = adaattn_forward(t.fc, t.fs, t.fc_cas, t.fs_cas, t.params, {.mode = AttentionMode::cosine});
    auto ref = oracle::adaattn(t.fc, t.fs, t.fc_cas, t.fs_cas, projections(t.params), true);
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t p = 0; p < 6; ++p) EXPECT_NEAR(out[c * 6 + p], ref[c][p], 1e-5);
  }
}

// Property checks over random toy sizes.

TEST(AttentionProperties, RowsNonNegativeAndNormalized) {
  Rng rng(22);
  for (int trial = 0; trial < 40; ++trial) {
    auto t = random_case(rng, 2, 3, 1 + rng.below(4), 1 + rng.below(4), 1 + rng.below(4), 1 + rng.below(4));
    for (auto mode : {AttentionMode::softmax, AttentionMode::cosine}) {
      auto a = attention_scores(t.fc_cas, t.fs_cas, t.params, {.mode = mode});
      std::size_t cols = a.dim(2);
      for (std::size_t r = 0; r < a.dim(1); ++r) {
        double total = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
          float v = a[r * cols + j];
          EXPECT_GE(v, 0.0f);
          EXPECT_LE(v, 1.0f);
          total += v;
        }
        EXPECT_NEAR(total, 1.0, 1e-5);
      }
      auto st = weighted_stats(a, randn({1, 2, cols}, rng));
      for (float s : st.std.data()) EXPECT_GE(s, 0.0f);
    }
  }
}

TEST(AttentionProperties, StylePermutationInvariance) {
  Rng rng(23);
  for (int trial = 0; trial < 20; ++trial) {
    auto t = random_case(rng, 3, 4, 2, 3, 1, 6);
    std::vector<std::size_t> perm(6);
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = 5; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);
    auto permute = [&](const Tensor& x) {
      std::vector<float> v(x.numel());
      std::size_t c = x.dim(1);
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t j = 0; j < 6; ++j) v[ch * 6 + j] = x[ch * 6 + perm[j]];
      return Tensor::from(x.shape(), v);
    };
    for (auto mode : {AttentionMode::softmax, AttentionMode::cosine}) {
      auto a = adaattn_statistics(t.fc, t.fs, t.fc_cas, t.fs_cas, t.params, {.mode = mode});
      auto b = adaattn_statistics(t.fc, permute(t.fs), t.fc_cas, permute(t.fs_cas), t.params, {.mode = mode});
      for (std::size_t i = 0; i < a.mean.numel(); ++i) {
        EXPECT_NEAR(a.mean[i], b.mean[i], 1e-6);
        EXPECT_NEAR(a.std[i], b.std[i], 1e-6);
      }
    }
  }
}

TEST(AttentionProperties, ContentLocality) {
  Rng rng(24);
  auto t = random_case(rng, 3, 4, 2, 2, 2, 2);
  auto base = adaattn_statistics(t.fc, t.fs, t.fc_cas, t.fs_cas, t.params, {});
  std::vector<float> changed(t.fc_cas.data().begin(), t.fc_cas.data().end());
  // Perturb content position 2 in every channel. Channel-norm statistics
  // shift, so compare after re-normalization is held fixed: use a
  // perturbation that preserves per-channel mean and variance (swap 2 <-> 1).
  for (std::size_t c = 0; c < 4; ++c) std::swap(changed[c * 4 + 1], changed[c * 4 + 2]);
  auto swapped = adaattn_statistics(t.fc, t.fs, Tensor::from(t.fc_cas.shape(), changed), t.fs_cas, t.params, {});
  const std::size_t cols = 4;
  for (std::size_t r : {0u, 3u})
    for (std::size_t j = 0; j < cols; ++j)
      EXPECT_FLOAT_EQ(base.attention[r * cols + j], swapped.attention[r * cols + j]);
  for (std::size_t j = 0; j < cols; ++j) {
    EXPECT_NEAR(base.attention[1 * cols + j], swapped.attention[2 * cols + j], 1e-6);
  }
  for (std::size_t c = 0; c < 3; ++c) {
    EXPECT_FLOAT_EQ(base.mean[c * 4 + 0], swapped.mean[c * 4 + 0]);
    EXPECT_FLOAT_EQ(base.std[c * 4 + 3], swapped.std[c * 4 + 3]);
  }
}

TEST(AttentionProperties, DuplicatedStyleKeysLeaveStatisticsUnchanged) {
  Rng rng(25);
  auto t = random_case(rng, 3, 4, 2, 2, 2, 2);
  auto widen = [](const Tensor& x) {
    std::size_t c = x.dim(1), h = x.dim(2), w = x.dim(3);
    std::vector<float> v;
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < h; ++y)
        for (int copy = 0; copy < 2; ++copy)
          for (std::size_t xx = 0; xx < w; ++xx) v.push_back(x[(ch * h + y) * w + xx]);
    return Tensor::from({1, c, h, 2 * w}, v);
  };
  for (auto mode : {AttentionMode::softmax, AttentionMode::cosine}) {
    auto single = adaattn_statistics(t.fc, t.fs, t.fc_cas, t.fs_cas, t.params, {.mode = mode});
    auto doubled = adaattn_statistics(t.fc, widen(t.fs), t.fc_cas, widen(t.fs_cas), t.params, {.mode = mode});
    for (std::size_t i = 0; i < single.mean.numel(); ++i) {
      EXPECT_NEAR(single.mean[i], doubled.mean[i], 1e-5);
      EXPECT_NEAR(single.std[i], doubled.std[i], 1e-5);
    }
  }
}

TEST(AttentionProperties, OracleEquivalenceOnRandomSizes) {
  Rng rng(26);
  for (int trial = 0; trial < 30; ++trial) {
    std::size_t hc = 1 + rng.below(8), wc = 1 + rng.below(8), hs = 1 + rng.below(8), ws = 1 + rng.below(8);
    bool cosine = trial % 2 == 1;
    auto t = random_case(rng, 1 + rng.below(4), 2 + rng.below(5), hc, wc, hs, ws);
    auto out = adaattn_forward(t.fc, t.fs, t.fc_cas, t.fs_cas, t.params,
                               {.mode = cosine ? AttentionMode::cosine : AttentionMode::softmax});
    auto ref = oracle::adaattn(t.fc, t.fs, t.fc_cas, t.fs_cas, projections(t.params), cosine);
    for (std::size_t c = 0; c < ref.size(); ++c)
      for (std::size_t p = 0; p < ref[c].size(); ++p) EXPECT_NEAR(out[c * ref[c].size() + p], ref[c][p], 1e-5);
  }
}

}  // namespace
}  // namespace adaattn
