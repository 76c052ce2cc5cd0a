// Copyright (C) 2026 The adaattn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <vector>

#include "adaattn/core/spatial.hpp"
#include "adaattn/core/tensor.hpp"

namespace adaattn {

inline constexpr float kNormEps = 1e-5f;

namespace detail {

struct PlaneStats {
  std::vector<double> mean, var;
};

// Population mean/variance over H*W for each (sample, channel) plane.
inline PlaneStats plane_stats(const Tensor& x, std::size_t planes, std::size_t hw) {
  PlaneStats st{std::vector<double>(planes), std::vector<double>(planes)};
  const auto& xd = x.data();
  for (std::size_t p = 0; p < planes; ++p) {
    const float* v = xd.data() + p * hw;
    double m = 0.0;
    for (std::size_t i = 0; i < hw; ++i) m += v[i];
    m /= static_cast<double>(hw);
    double s = 0.0;
    for (std::size_t i = 0; i < hw; ++i) s += (v[i] - m) * (v[i] - m);
    st.mean[p] = m;
    st.var[p] = s / static_cast<double>(hw);
  }
  return st;
}

}  // namespace detail

/// Per-sample, per-channel mean/variance normalization over the spatial axes:
/// (x - mean) / sqrt(var + eps).
inline Tensor channel_norm(const Tensor& x, float eps = kNormEps) {
  auto d = detail::dims4(x, "channel_norm");
  const std::size_t planes = d.n * d.c, hw = d.h * d.w;
  auto st = detail::plane_stats(x, planes, hw);
  std::vector<float> inv_std(planes);
  std::vector<float> out(x.numel());
  const auto& xd = x.data();
  for (std::size_t p = 0; p < planes; ++p) {
    double inv = 1.0 / std::sqrt(st.var[p] + eps);
    inv_std[p] = static_cast<float>(inv);
    for (std::size_t i = 0; i < hw; ++i)
      out[p * hw + i] = static_cast<float>((xd[p * hw + i] - st.mean[p]) * inv);
  }
  auto in = x.node();
  return detail::make_result(
      "channel_norm", x.shape(), std::move(out), {x},
      [in, planes, hw, inv_std = std::move(inv_std)](const detail::Node& self) {
        auto* g = in->grad_sink();
        if (!g) return;
        // dx = inv_std * (gy - mean(gy) - y * mean(gy * y))
        for (std::size_t p = 0; p < planes; ++p) {
          const float* gy = self.grad.data() + p * hw;
          const float* y = self.data.data() + p * hw;
          double mg = 0.0, mgy = 0.0;
          for (std::size_t i = 0; i < hw; ++i) {
            mg += gy[i];
            mgy += double(gy[i]) * y[i];
          }
          mg /= static_cast<double>(hw);
          mgy /= static_cast<double>(hw);
          for (std::size_t i = 0; i < hw; ++i)
            (*g)[p * hw + i] += static_cast<float>(inv_std[p] * (gy[i] - mg - y[i] * mgy));
        }
      });
}

/// Spatial mean per (sample, channel): N x C x H x W -> N x C.
inline Tensor spatial_mean(const Tensor& x) {
  auto d = detail::dims4(x, "spatial_mean");
  const std::size_t planes = d.n * d.c, hw = d.h * d.w;
  auto st = detail::plane_stats(x, planes, hw);
  std::vector<float> out(planes);
  for (std::size_t p = 0; p < planes; ++p) out[p] = static_cast<float>(st.mean[p]);
  auto in = x.node();
  return detail::make_result("spatial_mean", {d.n, d.c}, std::move(out), {x},
                             [in, planes, hw](const detail::Node& self) {
                               if (auto* g = in->grad_sink())
                                 for (std::size_t p = 0; p < planes; ++p) {
                                   float v = self.grad[p] / static_cast<float>(hw);
                                   for (std::size_t i = 0; i < hw; ++i) (*g)[p * hw + i] += v;
                                 }
                             });
}

/// Spatial standard deviation per (sample, channel): sqrt(var + eps).
inline Tensor spatial_std(const Tensor& x, float eps = kNormEps) {
  auto d = detail::dims4(x, "spatial_std");
  const std::size_t planes = d.n * d.c, hw = d.h * d.w;
  auto st = detail::plane_stats(x, planes, hw);
  std::vector<float> out(planes);
  for (std::size_t p = 0; p < planes; ++p) out[p] = static_cast<float>(std::sqrt(st.var[p] + eps));
  auto in = x.node();
  return detail::make_result(
      "spatial_std", {d.n, d.c}, std::move(out), {x},
      [in, planes, hw, mean = std::move(st.mean)](const detail::Node& self) {
        auto* g = in->grad_sink();
        if (!g) return;
        for (std::size_t p = 0; p < planes; ++p) {
          double coef = self.grad[p] / (self.data[p] * static_cast<double>(hw));
          for (std::size_t i = 0; i < hw; ++i)
            (*g)[p * hw + i] += static_cast<float>(coef * (in->data[p * hw + i] - mean[p]));
        }
      });
}

/// Euclidean norm of each sample over all non-batch axes: shape {N}.
/// The gradient at a zero sample is taken as zero.
inline Tensor norm_per_sample(const Tensor& x) {
  const std::size_t n = x.dim(0), inner = x.numel() / n;
  std::vector<float> out(n);
  const auto& xd = x.data();
  for (std::size_t s = 0; s < n; ++s) {
    double ss = 0.0;
    for (std::size_t i = 0; i < inner; ++i) ss += double(xd[s * inner + i]) * xd[s * inner + i];
    out[s] = static_cast<float>(std::sqrt(ss));
  }
  auto in = x.node();
  return detail::make_result("norm_per_sample", {n}, std::move(out), {x},
                             [in, n, inner](const detail::Node& self) {
                               auto* g = in->grad_sink();
                               if (!g) return;
                               for (std::size_t s = 0; s < n; ++s) {
                                 if (self.data[s] == 0.0f) continue;
                                 float coef = self.grad[s] / self.data[s];
                                 for (std::size_t i = 0; i < inner; ++i)
                                   (*g)[s * inner + i] += coef * in->data[s * inner + i];
                               }
                             });
}

}  // namespace adaattn
