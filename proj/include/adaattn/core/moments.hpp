// Copyright (C) 2026 The adaattn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cblas.h>

#include <vector>

#include "adaattn/core/tensor.hpp"

// Row-weighted moments of value vectors. For weights W [N x P x Q] and values
// V [N x C x Q]:
//   weighted_mean:      M[c,i]   = sum_j W[i,j] V[c,j]
//   weighted_variance:  Var[c,i] = sum_j W[i,j] V[c,j]^2 - M[c,i]^2
// Both accumulate in double. The variance is formed as E[v^2] - E[v]^2 and may
// come out slightly negative; callers clamp.

namespace adaattn {

namespace detail {

struct MomentDims {
  std::size_t batch, rows, cols, ch;
};

inline MomentDims moment_dims(const Tensor& w, const Tensor& v, const char* op) {
  require<ShapeError>(w.rank() == 3 && v.rank() == 3 && w.dim(0) == v.dim(0) && w.dim(2) == v.dim(2), op,
                      ": weights ", to_string(w.shape()), " and values ", to_string(v.shape()),
                      " are incompatible");
  return {w.dim(0), w.dim(1), w.dim(2), v.dim(1)};
}

inline std::vector<double> to_double(std::span<const float> src, std::size_t offset, std::size_t n) {
  return std::vector<double>(src.begin() + offset, src.begin() + offset + n);
}

// C[m x n] = A[m x k] * B^T, B given as [n x k]; all row-major doubles.
inline void dgemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, int(m), int(n), int(k), 1.0, a, int(k), b, int(k), 0.0, c,
              int(n));
}

inline void dgemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, int(m), int(n), int(k), 1.0, a, int(k), b, int(n), 0.0,
              c, int(n));
}

}  // namespace detail

/// M = V W^T per batch entry: [N x C x P].
inline Tensor weighted_mean(const Tensor& weights, const Tensor& values) {
  auto d = detail::moment_dims(weights, values, "weighted_mean");
  std::vector<float> out(d.batch * d.ch * d.rows);
  std::vector<double> m(d.ch * d.rows);
  for (std::size_t s = 0; s < d.batch; ++s) {
    auto w = detail::to_double(weights.data(), s * d.rows * d.cols, d.rows * d.cols);
    auto v = detail::to_double(values.data(), s * d.ch * d.cols, d.ch * d.cols);
    detail::dgemm_nt(d.ch, d.rows, d.cols, v.data(), w.data(), m.data());
    for (std::size_t i = 0; i < m.size(); ++i) out[s * m.size() + i] = static_cast<float>(m[i]);
  }
  auto nw = weights.node(), nv = values.node();
  return detail::make_result("weighted_mean", {d.batch, d.ch, d.rows}, std::move(out), {weights, values},
                             [nw, nv, d](const detail::Node& self) {
                               auto* gw = nw->grad_sink();
                               auto* gv = nv->grad_sink();
                               std::vector<double> tmp;
                               for (std::size_t s = 0; s < d.batch; ++s) {
                                 auto g = detail::to_double(self.grad, s * d.ch * d.rows, d.ch * d.rows);
                                 if (gw) {
                                   // dW[i,j] = sum_c G[c,i] V[c,j]  -> G^T V
                                   auto v = detail::to_double(nv->data, s * d.ch * d.cols, d.ch * d.cols);
                                   tmp.assign(d.rows * d.cols, 0.0);
                                   cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, int(d.rows), int(d.cols),
                                               int(d.ch), 1.0, g.data(), int(d.rows), v.data(), int(d.cols), 0.0,
                                               tmp.data(), int(d.cols));
                                   for (std::size_t i = 0; i < tmp.size(); ++i)
                                     (*gw)[s * d.rows * d.cols + i] += static_cast<float>(tmp[i]);
                                 }
                                 if (gv) {
                                   // dV[c,j] = sum_i G[c,i] W[i,j]  -> G W
                                   auto w = detail::to_double(nw->data, s * d.rows * d.cols, d.rows * d.cols);
                                   tmp.assign(d.ch * d.cols, 0.0);
                                   detail::dgemm_nn(d.ch, d.cols, d.rows, g.data(), w.data(), tmp.data());
                                   for (std::size_t i = 0; i < tmp.size(); ++i)
                                     (*gv)[s * d.ch * d.cols + i] += static_cast<float>(tmp[i]);
                                 }
                               }
                             });
}

/// Var = (V*V) W^T - (V W^T)^2 per batch entry: [N x C x P]. Not clamped.
inline Tensor weighted_variance(const Tensor& weights, const Tensor& values) {
  auto d = detail::moment_dims(weights, values, "weighted_variance");
  const std::size_t plane = d.ch * d.rows;
  std::vector<float> out(d.batch * plane);
  std::vector<double> means(d.batch * plane);
  std::vector<double> m(plane), sq(plane);
  for (std::size_t s = 0; s < d.batch; ++s) {
    auto w = detail::to_double(weights.data(), s * d.rows * d.cols, d.rows * d.cols);
    auto v = detail::to_double(values.data(), s * d.ch * d.cols, d.ch * d.cols);
    auto v2 = v;
    for (auto& x : v2) x *= x;
    detail::dgemm_nt(d.ch, d.rows, d.cols, v.data(), w.data(), m.data());
    detail::dgemm_nt(d.ch, d.rows, d.cols, v2.data(), w.data(), sq.data());
    for (std::size_t i = 0; i < plane; ++i) {
      out[s * plane + i] = static_cast<float>(sq[i] - m[i] * m[i]);
      means[s * plane + i] = m[i];
    }
  }
  auto nw = weights.node(), nv = values.node();
  return detail::make_result(
      "weighted_variance", {d.batch, d.ch, d.rows}, std::move(out), {weights, values},
      [nw, nv, d, means = std::move(means)](const detail::Node& self) {
        auto* gw = nw->grad_sink();
        auto* gv = nv->grad_sink();
        const std::size_t plane = d.ch * d.rows;
        for (std::size_t s = 0; s < d.batch; ++s) {
          auto g = detail::to_double(self.grad, s * plane, plane);
          auto v = detail::to_double(nv->data, s * d.ch * d.cols, d.ch * d.cols);
          auto w = detail::to_double(nw->data, s * d.rows * d.cols, d.rows * d.cols);
          const double* mu = means.data() + s * plane;
          if (gw) {
            // dW[i,j] = sum_c G[c,i] (V[c,j]^2 - 2 M[c,i] V[c,j])
            std::vector<double> gm(plane);
            for (std::size_t i = 0; i < plane; ++i) gm[i] = -2.0 * g[i] * mu[i];
            auto v2 = v;
            for (auto& x : v2) x *= x;
            std::vector<double> tmp(d.rows * d.cols);
            cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, int(d.rows), int(d.cols), int(d.ch), 1.0, g.data(),
                        int(d.rows), v2.data(), int(d.cols), 0.0, tmp.data(), int(d.cols));
            cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, int(d.rows), int(d.cols), int(d.ch), 1.0,
                        gm.data(), int(d.rows), v.data(), int(d.cols), 1.0, tmp.data(), int(d.cols));
            for (std::size_t i = 0; i < tmp.size(); ++i) (*gw)[s * d.rows * d.cols + i] += static_cast<float>(tmp[i]);
          }
          if (gv) {
            // dV[c,j] = 2 V[c,j] sum_i G[c,i] W[i,j] - 2 sum_i G[c,i] M[c,i] W[i,j]
            std::vector<double> gw_sum(d.ch * d.cols), gmw(d.ch * d.cols), gm(plane);
            for (std::size_t i = 0; i < plane; ++i) gm[i] = g[i] * mu[i];
            detail::dgemm_nn(d.ch, d.cols, d.rows, g.data(), w.data(), gw_sum.data());
            detail::dgemm_nn(d.ch, d.cols, d.rows, gm.data(), w.data(), gmw.data());
            for (std::size_t i = 0; i < gw_sum.size(); ++i)
              (*gv)[s * d.ch * d.cols + i] += static_cast<float>(2.0 * (v[i] * gw_sum[i] - gmw[i]));
          }
        }
      });
}

}  // namespace adaattn
