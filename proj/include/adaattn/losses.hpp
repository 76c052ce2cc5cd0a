// Copyright (C) 2026 The adaattn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "adaattn/attention.hpp"
#include "adaattn/core.hpp"
#include "adaattn/encoder.hpp"

// Norms are Euclidean over all non-batch axes and averaged over the batch.

namespace adaattn {

struct LossWeights {
  float global_style = 10.0f;
  float local_feature = 3.0f;
  float similarity = 100.0f;  // video mode only
};

struct LossOptions {
  bool vanilla_content = false;  // replace the local feature term by a plain feature distance
};

namespace detail {

inline void require_matching_taps(const FeatureStack& a, const FeatureStack& b, int from, int to, const char* op) {
  for (int x = from; x <= to; ++x)
    require<ContractError>(a.tap(x).shape() == b.tap(x).shape(), op, ": tap ", x, " shapes ",
                           to_string(a.tap(x).shape()), " and ", to_string(b.tap(x).shape()), " differ");
}

inline Tensor batch_mean_norm(const Tensor& diff) { return mean(norm_per_sample(diff)); }

}  // namespace detail

/// Mean/std matching over taps 2..5.
inline Tensor global_style_loss(const FeatureStack& cs, const FeatureStack& s) {
  detail::require_matching_taps(cs, s, 2, 5, "global_style_loss");
  Tensor total;
  for (int x = 2; x <= 5; ++x) {
    Tensor term = add(detail::batch_mean_norm(subtract(spatial_mean(cs.tap(x)), spatial_mean(s.tap(x)))),
                      detail::batch_mean_norm(subtract(spatial_std(cs.tap(x)), spatial_std(s.tap(x)))));
    total = total.defined() ? add(total, term) : term;
  }
  return total;
}

/// Parameter-free attention target at tap x (detached).
inline Tensor local_feature_target(const FeatureStack& c, const FeatureStack& s, int x, const AttentionConfig& cfg) {
  return adaattn_star(c.tap(x), s.tap(x), multiscale_concat(c, x), multiscale_concat(s, x), cfg);
}

/// Distance to the parameter-free attention target over taps 3..5.
inline Tensor local_feature_loss(const FeatureStack& cs, const FeatureStack& c, const FeatureStack& s,
                                 const AttentionConfig& cfg) {
  detail::require_matching_taps(cs, c, 3, 5, "local_feature_loss");
  Tensor total;
  for (int x = 3; x <= 5; ++x) {
    Tensor term = detail::batch_mean_norm(subtract(cs.tap(x), local_feature_target(c, s, x, cfg)));
    total = total.defined() ? add(total, term) : term;
  }
  return total;
}

/// Plain feature distance to the content at taps 4 and 5.
inline Tensor content_loss(const FeatureStack& cs, const FeatureStack& c) {
  detail::require_matching_taps(cs, c, 4, 5, "content_loss");
  return add(detail::batch_mean_norm(subtract(cs.tap(4), c.tap(4).detach())),
             detail::batch_mean_norm(subtract(cs.tap(5), c.tap(5).detach())));
}

/// 1 - cos between every position of a and every position of b, each column
/// normalized over a's positions: [N x Pa x Pb].
inline Tensor distance_pattern(const Tensor& a, const Tensor& b, float eps = 1e-8f) {
  Tensor cos = cosine_similarity_matrix(detail::flatten_spatial(a), detail::flatten_spatial(b), eps);
  return normalize_columns_or_uniform(affine(cos, -1.0f, 1.0f), eps);
}

/// Mean absolute difference of the content and stylized distance patterns at one tap.
inline Tensor similarity_term(const Tensor& c1, const Tensor& c2, const Tensor& cs1, const Tensor& cs2) {
  Tensor target;
  {
    NoGradGuard no_grad;
    target = distance_pattern(c1, c2);
  }
  return mean(abs(subtract(distance_pattern(cs1, cs2), target)));
}

/// Cross-frame similarity agreement over taps 2..4.
inline Tensor cross_image_similarity_loss(const FeatureStack& c1, const FeatureStack& c2, const FeatureStack& cs1,
                                          const FeatureStack& cs2) {
  detail::require_matching_taps(c1, cs1, 2, 4, "cross_image_similarity_loss");
  detail::require_matching_taps(c2, cs2, 2, 4, "cross_image_similarity_loss");
  Tensor total;
  for (int x = 2; x <= 4; ++x) {
    Tensor term = similarity_term(c1.tap(x), c2.tap(x), cs1.tap(x), cs2.tap(x));
    total = total.defined() ? add(total, term) : term;
  }
  return total;
}

struct LossParts {
  Tensor global;
  Tensor local;
  Tensor similarity;  // undefined in image mode
};

inline LossParts image_losses(const FeatureStack& cs, const FeatureStack& c, const FeatureStack& s,
                              const AttentionConfig& cfg, const LossOptions& opt = {}) {
  return {global_style_loss(cs, s), opt.vanilla_content ? content_loss(cs, c) : local_feature_loss(cs, c, s, cfg),
          Tensor()};
}

/// Weighted sum of (global, local[, similarity]).
inline Tensor total_loss(const std::vector<Tensor>& parts, const LossWeights& w) {
  require<ContractError>(parts.size() == 2 || parts.size() == 3, "total_loss: expected 2 or 3 parts, got ",
                         parts.size());
  Tensor total = add(scale(parts[0], w.global_style), scale(parts[1], w.local_feature));
  if (parts.size() == 3 && parts[2].defined()) total = add(total, scale(parts[2], w.similarity));
  return total;
}

inline Tensor combine_losses(const LossParts& p, const LossWeights& w) {
  if (p.similarity.defined()) return total_loss(std::vector<Tensor>{p.global, p.local, p.similarity}, w);
  return total_loss(std::vector<Tensor>{p.global, p.local}, w);
}

}  // namespace adaattn
