// Copyright (C) 2026 The adaattn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <tuple>
#include <utility>
#include <vector>

#include "adaattn/core.hpp"
#include "adaattn/encoder.hpp"

namespace adaattn {

enum class AttentionMode { softmax, cosine };

inline std::string to_string(AttentionMode m) { return m == AttentionMode::softmax ? "softmax" : "cosine"; }

inline AttentionMode parse_attention_mode(const std::string& s) {
  if (s == "softmax") return AttentionMode::softmax;
  if (s == "cosine" || s == "cos") return AttentionMode::cosine;
  raise<ConfigError>("unknown attention mode '", s, "' (expected softmax or cosine)");
}

/// Score added to disallowed logits before the softmax; stands in for -inf.
inline constexpr float kMaskedLogit = -1e9f;

/// Row-major boolean map.
struct BoolMap {
  std::size_t height = 0, width = 0;
  std::vector<std::uint8_t> cells;

  BoolMap() = default;
  BoolMap(std::size_t h, std::size_t w, bool value = false) : height(h), width(w), cells(h * w, value) {}

  bool at(std::size_t y, std::size_t x) const { return cells[y * width + x] != 0; }
  void set(std::size_t y, std::size_t x, bool v) { cells[y * width + x] = v ? 1 : 0; }
  std::size_t count() const {
    std::size_t n = 0;
    for (auto c : cells) n += c != 0;
    return n;
  }
  bool operator==(const BoolMap&) const = default;
};

/// Fraction of source cells inside each target cell, for an area-style
/// reduction of `src` onto an h x w grid.
inline std::vector<double> coverage(const BoolMap& src, std::size_t h, std::size_t w) {
  std::vector<double> frac(h * w, 0.0);
  for (std::size_t ty = 0; ty < h; ++ty) {
    std::size_t r0 = ty * src.height / h, r1 = ((ty + 1) * src.height + h - 1) / h;
    for (std::size_t tx = 0; tx < w; ++tx) {
      std::size_t c0 = tx * src.width / w, c1 = ((tx + 1) * src.width + w - 1) / w;
      std::size_t hit = 0, total = 0;
      for (std::size_t y = r0; y < r1; ++y)
        for (std::size_t x = c0; x < c1; ++x) {
          hit += src.at(y, x);
          ++total;
        }
      frac[ty * w + tx] = total ? double(hit) / double(total) : 0.0;
    }
  }
  return frac;
}

/// Region constraint at one tap's resolution: constrained content positions
/// may only attend to allowed style positions.
struct RegionMask {
  BoolMap content_region;
  BoolMap style_allowed;

  /// Checks the invariant that every constrained row keeps at least one
  /// allowed style column.
  void validate() const {
    if (content_region.count() > 0)
      require<MaskError>(style_allowed.count() > 0,
                         "region mask leaves constrained content positions with no allowed style position");
  }
};

/// Reduces full-resolution masks to a tap grid. A content cell is constrained
/// when at least half of its pixels are in the region. Style cells follow the
/// same rule; if that leaves none, any cell touching the region is allowed.
inline RegionMask downsample_region(const BoolMap& content_full, const BoolMap& style_full,
                                    std::size_t hc, std::size_t wc, std::size_t hs, std::size_t ws) {
  RegionMask m{BoolMap(hc, wc), BoolMap(hs, ws)};
  auto cf = coverage(content_full, hc, wc);
  for (std::size_t i = 0; i < cf.size(); ++i) m.content_region.cells[i] = cf[i] >= 0.5;
  auto sf = coverage(style_full, hs, ws);
  for (std::size_t i = 0; i < sf.size(); ++i) m.style_allowed.cells[i] = sf[i] >= 0.5;
  if (m.style_allowed.count() == 0)
    for (std::size_t i = 0; i < sf.size(); ++i) m.style_allowed.cells[i] = sf[i] > 0.0;
  m.validate();
  return m;
}

/// Full-resolution region pair supplied by the user.
struct RegionConstraint {
  BoolMap content;
  BoolMap style;
};

struct AttentionConfig {
  AttentionMode mode = AttentionMode::softmax;
  std::optional<RegionConstraint> region;
  float eps = 1e-8f;
};

/// Learnable 1x1 projections of one AdaAttN instance.
struct AdaAttNParams {
  Tensor f_weight, f_bias;  // qk x qk x 1 x 1, qk
  Tensor g_weight, g_bias;
  Tensor h_weight, h_bias;  // v x v x 1 x 1, v

  std::size_t qk_dim() const { return f_weight.dim(0); }
  std::size_t v_dim() const { return h_weight.dim(0); }

  std::vector<Tensor*> parameters() { return {&f_weight, &f_bias, &g_weight, &g_bias, &h_weight, &h_bias}; }
  std::vector<const Tensor*> parameters() const {
    return {&f_weight, &f_bias, &g_weight, &g_bias, &h_weight, &h_bias};
  }
};

/// Channels of the cascade F^{1:x}.
inline std::size_t qk_dim_for(EncoderProfile profile, int tap) {
  auto ch = channel_plan(profile);
  std::size_t total = 0;
  for (int i = 0; i < tap; ++i) total += ch[i];
  return total;
}

/// Fan-in scaled normal kernels (gain 1), zero biases.
inline AdaAttNParams init_adaattn_params(std::size_t qk_dim, std::size_t v_dim, Rng& rng) {
  auto kernel = [&](std::size_t n) {
    return randn({n, n, 1, 1}, rng, 1.0f / std::sqrt(static_cast<float>(n)), true);
  };
  AdaAttNParams p;
  p.f_weight = kernel(qk_dim);
  p.f_bias = Tensor::zeros({qk_dim}, true);
  p.g_weight = kernel(qk_dim);
  p.g_bias = Tensor::zeros({qk_dim}, true);
  p.h_weight = kernel(v_dim);
  p.h_bias = Tensor::zeros({v_dim}, true);
  return p;
}

/// Identity projections: turns adaattn_forward into the parameter-free variant.
inline AdaAttNParams identity_adaattn_params(std::size_t qk_dim, std::size_t v_dim) {
  auto eye = [](std::size_t n) {
    std::vector<float> v(n * n, 0.0f);
    for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0f;
    return Tensor::from({n, n, 1, 1}, std::move(v));
  };
  return {eye(qk_dim), Tensor::zeros({qk_dim}), eye(qk_dim), Tensor::zeros({qk_dim}), eye(v_dim),
          Tensor::zeros({v_dim})};
}

/// F^{1:x}: taps 1..x bilinearly resized to tap x's grid and concatenated
/// along channels.
inline Tensor multiscale_concat(const FeatureStack& stack, int x) {
  require<ContractError>(x >= 3 && x <= kNumTaps, "multiscale_concat: tap must be 3, 4 or 5, got ", x);
  const Tensor& target = stack.tap(x);
  std::vector<Tensor> parts;
  for (int i = 1; i < x; ++i) parts.push_back(bilinear_resize(stack.tap(i), target.dim(2), target.dim(3)));
  parts.push_back(target);
  return concat_channels(parts);
}

namespace detail {

// N x C x H x W -> N x C x (H*W)
inline Tensor flatten_spatial(const Tensor& x) {
  return x.reshape({x.dim(0), x.dim(1), x.dim(2) * x.dim(3)});
}

inline Tensor project(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  return conv2d(x, weight, bias, Padding::zero);
}

// Mask tensor over [HcWc x HsWs]: additive bias (softmax) or 0/1 factor (cosine).
inline Tensor region_mask_tensor(const RegionMask& m, AttentionMode mode) {
  const std::size_t rows = m.content_region.cells.size(), cols = m.style_allowed.cells.size();
  const float blocked = mode == AttentionMode::softmax ? kMaskedLogit : 0.0f;
  const float open = mode == AttentionMode::softmax ? 0.0f : 1.0f;
  std::vector<float> v(rows * cols, open);
  for (std::size_t i = 0; i < rows; ++i) {
    if (!m.content_region.cells[i]) continue;
    for (std::size_t j = 0; j < cols; ++j)
      if (!m.style_allowed.cells[j]) v[i * cols + j] = blocked;
  }
  return Tensor::from({rows, cols}, std::move(v));
}

// q: N x C x Pc, k: N x C x Ps (already projected) -> A: N x Pc x Ps.
/// In cosine mode, `deficit` (if given) receives each row's exact relative
/// shortfall, see normalize_rows_by_sum.
inline Tensor attention_from_qk(const Tensor& q, const Tensor& k, const AttentionConfig& cfg,
                                const std::optional<RegionMask>& mask, std::vector<double>* deficit = nullptr) {
  if (mask) {
    require<ShapeError>(mask->content_region.cells.size() == q.dim(2) &&
                            mask->style_allowed.cells.size() == k.dim(2),
                        "region mask does not match attention grid");
    mask->validate();
  }
  if (deficit) deficit->clear();
  if (cfg.mode == AttentionMode::softmax) {
    Tensor logits = matmul(transpose(q), k);
    if (mask) logits = add_broadcast_batch(logits, region_mask_tensor(*mask, cfg.mode));
    return softmax_rows(logits);
  }
  Tensor sim = shift(cosine_similarity_matrix(q, k, cfg.eps), 1.0f);
  if (mask) sim = multiply_broadcast_batch(sim, region_mask_tensor(*mask, cfg.mode));
  return normalize_rows_by_sum(sim, cfg.eps, deficit);
}

inline std::optional<RegionMask> mask_for_grid(const AttentionConfig& cfg, const Tensor& fc, const Tensor& fs) {
  if (!cfg.region) return std::nullopt;
  return downsample_region(cfg.region->content, cfg.region->style, fc.dim(2), fc.dim(3), fs.dim(2), fs.dim(3));
}

}  // namespace detail

/// Attention map A [N x HcWc x HsWs] between content and style cascades.
inline Tensor attention_scores(const Tensor& fc_cas, const Tensor& fs_cas, const AdaAttNParams& params,
                               const AttentionConfig& cfg, std::vector<double>* deficit = nullptr) {
  require<ShapeError>(fc_cas.rank() == 4 && fs_cas.rank() == 4 && fc_cas.dim(1) == params.qk_dim() &&
                          fs_cas.dim(1) == params.qk_dim() && fc_cas.dim(0) == fs_cas.dim(0),
                      "attention_scores: cascades ", to_string(fc_cas.shape()), " / ",
                      to_string(fs_cas.shape()), " do not match qk_dim ", params.qk_dim());
  Tensor q = detail::flatten_spatial(detail::project(channel_norm(fc_cas), params.f_weight, params.f_bias));
  Tensor k = detail::flatten_spatial(detail::project(channel_norm(fs_cas), params.g_weight, params.g_bias));
  return detail::attention_from_qk(q, k, cfg, detail::mask_for_grid(cfg, fc_cas, fs_cas), deficit);
}

struct WeightedStats {
  Tensor mean;  // M: N x C x HcWc
  Tensor std;   // S: N x C x HcWc
};

namespace detail {

/// Statistics for rows (1 - d) A given those of A: M scales by (1 - d) and the
/// variance becomes (1 - d) Var + d (1 - d) M^2. `d` holds one entry per row.
inline std::pair<Tensor, Tensor> apply_row_deficit(const Tensor& m, const Tensor& var,
                                                   const std::vector<double>& d) {
  const std::size_t batch = m.dim(0), ch = m.dim(1), rows = m.dim(2);
  require<ShapeError>(d.size() == batch * rows, "row deficit has ", d.size(), " entries for ", batch * rows, " rows");
  std::vector<float> keep(m.numel()), extra(m.numel());
  for (std::size_t s = 0; s < batch; ++s)
    for (std::size_t c = 0; c < ch; ++c)
      for (std::size_t i = 0; i < rows; ++i) {
        double di = d[s * rows + i];
        keep[(s * ch + c) * rows + i] = static_cast<float>(1.0 - di);
        extra[(s * ch + c) * rows + i] = static_cast<float>(di * (1.0 - di));
      }
  Tensor k = Tensor::from(m.shape(), std::move(keep)), e = Tensor::from(m.shape(), std::move(extra));
  return {multiply(m, k), add(multiply(var, k), multiply(square(m), e))};
}

}  // namespace detail

/// Attention-weighted mean and standard deviation of the values.
/// Accepts A [HcWc x HsWs] with V [C x HsWs], or batched forms with a leading N.
/// `deficit` optionally scales each row of A by (1 - d).
inline WeightedStats weighted_stats(const Tensor& attn, const Tensor& values,
                                    const std::vector<double>* deficit = nullptr) {
  const bool batched = attn.rank() == 3;
  Tensor a = batched ? attn : attn.reshape({1, attn.dim(0), attn.dim(1)});
  Tensor v = values.rank() == 3 ? values : values.reshape({1, values.dim(0), values.dim(1)});
  require<ShapeError>(a.rank() == 3 && v.rank() == 3 && a.dim(0) == v.dim(0) && a.dim(2) == v.dim(2),
                      "weighted_stats: A ", to_string(attn.shape()), " and V ", to_string(values.shape()),
                      " are incompatible");
  Tensor m = weighted_mean(a, v);
  Tensor var = weighted_variance(a, v);
  if (deficit && !deficit->empty()) std::tie(m, var) = detail::apply_row_deficit(m, var, *deficit);
  Tensor s = sqrt_clamped(var);  // variance clamped at 0
  if (!batched) {
    m = m.reshape({m.dim(1), m.dim(2)});
    s = s.reshape({s.dim(1), s.dim(2)});
  }
  return {m, s};
}

/// Fcs = S * channel_norm(Fc) + M, with M and S reshaped to Fc's grid.
inline Tensor adaattn_apply(const Tensor& fc, const Tensor& mean_map, const Tensor& std_map) {
  require<ShapeError>(mean_map.numel() == fc.numel() && std_map.numel() == fc.numel(),
                      "adaattn_apply: statistics do not cover content grid ", to_string(fc.shape()));
  return add(multiply(std_map.reshape(fc.shape()), channel_norm(fc)), mean_map.reshape(fc.shape()));
}

struct AttentionOutput {
  Tensor attention;  // N x HcWc x HsWs
  Tensor mean;       // N x C x Hc x Wc
  Tensor std;
};

/// Attention map plus weighted statistics, reshaped to the content grid.
inline AttentionOutput adaattn_statistics(const Tensor& fc_x, const Tensor& fs_x, const Tensor& fc_cas,
                                          const Tensor& fs_cas, const AdaAttNParams& params,
                                          const AttentionConfig& cfg) {
  require<ShapeError>(fc_x.rank() == 4 && fs_x.rank() == 4 && fc_x.dim(1) == params.v_dim() &&
                          fs_x.dim(1) == params.v_dim(),
                      "adaattn: features do not match v_dim ", params.v_dim());
  require<ShapeError>(fc_cas.dim(2) == fc_x.dim(2) && fc_cas.dim(3) == fc_x.dim(3) &&
                          fs_cas.dim(2) == fs_x.dim(2) && fs_cas.dim(3) == fs_x.dim(3),
                      "adaattn: cascade and tap grids differ");
  std::vector<double> deficit;
  Tensor a = attention_scores(fc_cas, fs_cas, params, cfg, &deficit);
  Tensor v = detail::flatten_spatial(detail::project(fs_x, params.h_weight, params.h_bias));
  auto st = weighted_stats(a, v, &deficit);
  return {a, st.mean.reshape(fc_x.shape()), st.std.reshape(fc_x.shape())};
}

inline Tensor adaattn_forward(const Tensor& fc_x, const Tensor& fs_x, const Tensor& fc_cas, const Tensor& fs_cas,
                              const AdaAttNParams& params, const AttentionConfig& cfg) {
  auto out = adaattn_statistics(fc_x, fs_x, fc_cas, fs_cas, params, cfg);
  return adaattn_apply(fc_x, out.mean, out.std);
}

/// Parameter-free AdaAttN used as a loss target: Q, K and V are the
/// normalized cascades and the raw style tap. The result is detached.
inline Tensor adaattn_star(const Tensor& fc_x, const Tensor& fs_x, const Tensor& fc_cas, const Tensor& fs_cas,
                           const AttentionConfig& cfg) {
  NoGradGuard no_grad;
  require<ShapeError>(fc_cas.dim(1) == fs_cas.dim(1) && fc_x.dim(1) == fs_x.dim(1),
                      "adaattn_star: channel mismatch");
  Tensor q = detail::flatten_spatial(channel_norm(fc_cas));
  Tensor k = detail::flatten_spatial(channel_norm(fs_cas));
  std::vector<double> deficit;
  Tensor a = detail::attention_from_qk(q, k, cfg, detail::mask_for_grid(cfg, fc_cas, fs_cas), &deficit);
  auto st = weighted_stats(a, detail::flatten_spatial(fs_x), &deficit);
  return adaattn_apply(fc_x, st.mean, st.std);
}

}  // namespace adaattn
