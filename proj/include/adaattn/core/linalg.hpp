// Copyright (C) 2026 The adaattn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "adaattn/core/tensor.hpp"

namespace adaattn {

namespace detail {

// C[m x n] (+)= op(A) * op(B), row-major.
inline void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
                 const float* a, const float* b, float* c, bool accumulate) {
  cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, static_cast<int>(m), static_cast<int>(n),
              static_cast<int>(k), 1.0f, a, static_cast<int>(trans_a ? m : k), b,
              static_cast<int>(trans_b ? k : n), accumulate ? 1.0f : 0.0f, c,
              static_cast<int>(n));
}

struct MatDims {
  std::size_t batch, rows, cols;
};

inline MatDims mat_dims(const Tensor& t, const char* op) {
  if (t.rank() == 2) return {1, t.dim(0), t.dim(1)};
  if (t.rank() == 3) return {t.dim(0), t.dim(1), t.dim(2)};
  raise<ShapeError>(op, ": expected a matrix or a batch of matrices, got ", to_string(t.shape()));
}

}  // namespace detail

/// Matrix product of [m x k] and [k x n], or batched over a leading axis.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  auto da = detail::mat_dims(a, "matmul");
  auto db = detail::mat_dims(b, "matmul");
  require<ShapeError>(a.rank() == b.rank() && da.batch == db.batch && da.cols == db.rows,
                      "matmul: dimension mismatch ", to_string(a.shape()), " x ",
                      to_string(b.shape()));
  const std::size_t batch = da.batch, m = da.rows, k = da.cols, n = db.cols;
  std::vector<float> out(batch * m * n);
  for (std::size_t s = 0; s < batch; ++s)
    detail::gemm(false, false, m, n, k, a.data().data() + s * m * k, b.data().data() + s * k * n,
                 out.data() + s * m * n, false);
  Shape shape = a.rank() == 2 ? Shape{m, n} : Shape{batch, m, n};
  auto na = a.node(), nb = b.node();
  return detail::make_result(
      "matmul", std::move(shape), std::move(out), {a, b},
      [na, nb, batch, m, n, k](const detail::Node& self) {
        if (auto* g = na->grad_sink())
          for (std::size_t s = 0; s < batch; ++s)
            detail::gemm(false, true, m, k, n, self.grad.data() + s * m * n,
                         nb->data.data() + s * k * n, g->data() + s * m * k, true);
        if (auto* g = nb->grad_sink())
          for (std::size_t s = 0; s < batch; ++s)
            detail::gemm(true, false, k, n, m, na->data.data() + s * m * k,
                         self.grad.data() + s * m * n, g->data() + s * k * n, true);
      });
}

/// Swaps the last two axes of a matrix or matrix batch.
inline Tensor transpose(const Tensor& x) {
  auto d = detail::mat_dims(x, "transpose");
  std::vector<float> out(x.numel());
  const auto& xd = x.data();
  for (std::size_t s = 0; s < d.batch; ++s)
    for (std::size_t r = 0; r < d.rows; ++r)
      for (std::size_t c = 0; c < d.cols; ++c)
        out[s * d.rows * d.cols + c * d.rows + r] = xd[s * d.rows * d.cols + r * d.cols + c];
  Shape shape = x.rank() == 2 ? Shape{d.cols, d.rows} : Shape{d.batch, d.cols, d.rows};
  auto in = x.node();
  return detail::make_result("transpose", std::move(shape), std::move(out), {x},
                             [in, d](const detail::Node& self) {
                               if (auto* g = in->grad_sink())
                                 for (std::size_t s = 0; s < d.batch; ++s)
                                   for (std::size_t r = 0; r < d.rows; ++r)
                                     for (std::size_t c = 0; c < d.cols; ++c)
                                       (*g)[s * d.rows * d.cols + r * d.cols + c] +=
                                           self.grad[s * d.rows * d.cols + c * d.rows + r];
                             });
}

/// Row-wise softmax over the last axis, stabilized by subtracting the row max.
inline Tensor softmax_rows(const Tensor& x) {
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.numel() / n;
  std::vector<float> out(x.numel());
  const auto& xd = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const float* row = xd.data() + r * n;
    float* dst = out.data() + r * n;
    float peak = *std::max_element(row, row + n);
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      dst[j] = std::exp(row[j] - peak);
      total += dst[j];
    }
    float inv = static_cast<float>(1.0 / total);
    for (std::size_t j = 0; j < n; ++j) dst[j] *= inv;
  }
  auto in = x.node();
  return detail::make_result("softmax_rows", x.shape(), std::move(out), {x},
                             [in, rows, n](const detail::Node& self) {
                               auto* g = in->grad_sink();
                               if (!g) return;
                               for (std::size_t r = 0; r < rows; ++r) {
                                 const float* y = self.data.data() + r * n;
                                 const float* gy = self.grad.data() + r * n;
                                 double dot = 0.0;
                                 for (std::size_t j = 0; j < n; ++j) dot += double(y[j]) * gy[j];
                                 for (std::size_t j = 0; j < n; ++j)
                                   (*g)[r * n + j] += y[j] * (gy[j] - static_cast<float>(dot));
                               }
                             });
}

/// Divides each row (last axis) by its sum plus eps.
inline Tensor normalize_rows_by_sum(const Tensor& x, float eps, std::vector<double>* deficit = nullptr) {
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.numel() / n;
  std::vector<float> out(x.numel());
  std::vector<float> denom(rows);
  const auto& xd = x.data();
  if (deficit) deficit->assign(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) total += xd[r * n + j];
    denom[r] = static_cast<float>(total) + eps;
    double stored = 0.0;
    for (std::size_t j = 0; j < n; ++j) stored += out[r * n + j] = xd[r * n + j] / denom[r];
    // eps is mostly below float resolution of the denominator. The exact row
    // sum is total / (total + eps); `deficit` gets its relative shortfall
    // from the row as stored.
    if (deficit && stored > 0.0) (*deficit)[r] = 1.0 - total / (total + double(eps)) / stored;
  }
  auto in = x.node();
  return detail::make_result(
      "normalize_rows_by_sum", x.shape(), std::move(out), {x},
      [in, rows, n, denom = std::move(denom)](const detail::Node& self) {
        auto* g = in->grad_sink();
        if (!g) return;
        // y_j = x_j / d, d = sum x + eps  =>  dx_k = (gy_k - sum_j gy_j y_j) / d
        for (std::size_t r = 0; r < rows; ++r) {
          double dot = 0.0;
          for (std::size_t j = 0; j < n; ++j) dot += double(self.grad[r * n + j]) * self.data[r * n + j];
          for (std::size_t j = 0; j < n; ++j)
            (*g)[r * n + j] += (self.grad[r * n + j] - static_cast<float>(dot)) / denom[r];
        }
      });
}

/// Divides each column of x [B x P x Q] by its sum over P. A column whose sum
/// is at most eps becomes uniform 1/P and passes no gradient.
inline Tensor normalize_columns_or_uniform(const Tensor& x, float eps) {
  require<ShapeError>(x.rank() == 3, "normalize_columns_or_uniform: expected B x P x Q, got ", to_string(x.shape()));
  const std::size_t b = x.dim(0), p = x.dim(1), q = x.dim(2);
  std::vector<float> out(x.numel());
  std::vector<double> totals(b * q);
  const auto& xd = x.data();
  for (std::size_t s = 0; s < b; ++s)
    for (std::size_t j = 0; j < q; ++j) {
      double total = 0.0;
      for (std::size_t i = 0; i < p; ++i) total += xd[(s * p + i) * q + j];
      totals[s * q + j] = total;
      for (std::size_t i = 0; i < p; ++i)
        out[(s * p + i) * q + j] =
            total > eps ? static_cast<float>(xd[(s * p + i) * q + j] / total) : 1.0f / static_cast<float>(p);
    }
  auto in = x.node();
  return detail::make_result(
      "normalize_columns_or_uniform", x.shape(), std::move(out), {x},
      [in, b, p, q, eps, totals = std::move(totals)](const detail::Node& self) {
        auto* g = in->grad_sink();
        if (!g) return;
        for (std::size_t s = 0; s < b; ++s)
          for (std::size_t j = 0; j < q; ++j) {
            double total = totals[s * q + j];
            if (total <= eps) continue;
            double dot = 0.0;
            for (std::size_t i = 0; i < p; ++i) {
              std::size_t k = (s * p + i) * q + j;
              dot += double(self.grad[k]) * self.data[k];
            }
            for (std::size_t i = 0; i < p; ++i) {
              std::size_t k = (s * p + i) * q + j;
              (*g)[k] += static_cast<float>((self.grad[k] - dot) / total);
            }
          }
      });
}

/// Pairwise cosine similarity between the columns of x [B x C x P] and the
/// columns of y [B x C x Q], giving [B x P x Q]. Norms are guarded as
/// v / (|v| + eps). Accumulates in double.
inline Tensor cosine_similarity_matrix(const Tensor& x, const Tensor& y, float eps) {
  require<ShapeError>(x.rank() == 3 && y.rank() == 3 && x.dim(0) == y.dim(0) && x.dim(1) == y.dim(1),
                      "cosine_similarity_matrix: incompatible ", to_string(x.shape()), " and ",
                      to_string(y.shape()));
  const std::size_t batch = x.dim(0), ch = x.dim(1), p = x.dim(2), q = y.dim(2);

  // Unit vectors stored position-major: [B x P x C].
  auto normalize = [&](const Tensor& t, std::size_t count, std::vector<double>& unit,
                       std::vector<double>& norms) {
    unit.assign(batch * count * ch, 0.0);
    norms.assign(batch * count, 0.0);
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t i = 0; i < count; ++i) {
        double ss = 0.0;
        for (std::size_t c = 0; c < ch; ++c) {
          double v = t[(b * ch + c) * count + i];
          ss += v * v;
        }
        double nrm = std::sqrt(ss);
        norms[b * count + i] = nrm;
        for (std::size_t c = 0; c < ch; ++c)
          unit[(b * count + i) * ch + c] = t[(b * ch + c) * count + i] / (nrm + eps);
      }
  };
  std::vector<double> ux, nx, uy, ny;
  normalize(x, p, ux, nx);
  normalize(y, q, uy, ny);

  std::vector<float> out(batch * p * q);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < p; ++i) {
      const double* a = &ux[(b * p + i) * ch];
      for (std::size_t j = 0; j < q; ++j) {
        const double* c2 = &uy[(b * q + j) * ch];
        double dot = 0.0;
        for (std::size_t c = 0; c < ch; ++c) dot += a[c] * c2[c];
        out[(b * p + i) * q + j] = static_cast<float>(dot);
      }
    }

  auto nxp = x.node(), nyp = y.node();
  return detail::make_result(
      "cosine_similarity_matrix", {batch, p, q}, std::move(out), {x, y},
      [=, ux = std::move(ux), nx = std::move(nx), uy = std::move(uy),
       ny = std::move(ny)](const detail::Node& self) {
        // For u = v / (|v| + eps):  d(u.w)/dv = w / n - v (v.w) / (n^2 |v|),  n = |v| + eps.
        auto push = [&](detail::Node* target, const std::vector<double>& own_unit,
                        const std::vector<double>& own_norm, const std::vector<double>& other_unit,
                        std::size_t own_count, std::size_t other_count, bool rows) {
          auto* g = target->grad_sink();
          if (!g) return;
          std::vector<double> w(ch);
          for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t i = 0; i < own_count; ++i) {
              std::fill(w.begin(), w.end(), 0.0);
              for (std::size_t j = 0; j < other_count; ++j) {
                double gij = rows ? self.grad[(b * p + i) * q + j] : self.grad[(b * p + j) * q + i];
                if (gij == 0.0) continue;
                const double* o = &other_unit[(b * other_count + j) * ch];
                for (std::size_t c = 0; c < ch; ++c) w[c] += gij * o[c];
              }
              double nrm = own_norm[b * own_count + i];
              if (nrm == 0.0) continue;  // zero vector: take the zero subgradient
              double n = nrm + eps;
              const double* u = &own_unit[(b * own_count + i) * ch];
              double uw = 0.0;
              for (std::size_t c = 0; c < ch; ++c) uw += u[c] * w[c];
              // v (v.w) / (n^2 |v|) = u (u.w) / |v| since v = u n.
              for (std::size_t c = 0; c < ch; ++c)
                (*g)[(b * ch + c) * own_count + i] += static_cast<float>(w[c] / n - u[c] * uw / nrm);
            }
        };
        push(nxp.get(), ux, nx, uy, p, q, true);
        push(nyp.get(), uy, ny, ux, q, p, false);
      });
}

}  // namespace adaattn
