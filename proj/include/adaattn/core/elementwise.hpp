// Copyright (C) 2026 The adaattn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <vector>

#include "adaattn/core/tensor.hpp"

namespace adaattn {

namespace detail {

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require<ShapeError>(a.shape() == b.shape(), op, ": shape mismatch ", to_string(a.shape()),
                      " vs ", to_string(b.shape()));
}

// y = fn(x) with dy/dx = dfn(x, y).
template <typename Fn, typename DFn>
Tensor unary(const char* op, const Tensor& x, Fn fn, DFn dfn) {
  const auto& xd = x.data();
  std::vector<float> out(xd.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fn(xd[i]);
  auto in = x.node();
  return make_result(op, x.shape(), std::move(out), {x}, [in, dfn](const Node& self) {
    if (auto* g = in->grad_sink())
      for (std::size_t i = 0; i < g->size(); ++i)
        (*g)[i] += self.grad[i] * dfn(in->data[i], self.data[i]);
  });
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<float> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  auto na = a.node(), nb = b.node();
  return detail::make_result("add", a.shape(), std::move(out), {a, b},
                             [na, nb](const detail::Node& self) {
                               for (auto* n : {na.get(), nb.get()})
                                 if (auto* g = n->grad_sink())
                                   for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
                             });
}

inline Tensor subtract(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "subtract");
  std::vector<float> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  auto na = a.node(), nb = b.node();
  return detail::make_result("subtract", a.shape(), std::move(out), {a, b},
                             [na, nb](const detail::Node& self) {
                               if (auto* g = na->grad_sink())
                                 for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
                               if (auto* g = nb->grad_sink())
                                 for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] -= self.grad[i];
                             });
}

inline Tensor multiply(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "multiply");
  std::vector<float> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  auto na = a.node(), nb = b.node();
  return detail::make_result("multiply", a.shape(), std::move(out), {a, b},
                             [na, nb](const detail::Node& self) {
                               if (auto* g = na->grad_sink())
                                 for (std::size_t i = 0; i < g->size(); ++i)
                                   (*g)[i] += self.grad[i] * nb->data[i];
                               if (auto* g = nb->grad_sink())
                                 for (std::size_t i = 0; i < g->size(); ++i)
                                   (*g)[i] += self.grad[i] * na->data[i];
                             });
}

/// a / (b + eps).
inline Tensor divide(const Tensor& a, const Tensor& b, float eps) {
  detail::require_same_shape(a, b, "divide");
  std::vector<float> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] / (b[i] + eps);
  auto na = a.node(), nb = b.node();
  return detail::make_result(
      "divide", a.shape(), std::move(out), {a, b}, [na, nb, eps](const detail::Node& self) {
        if (auto* g = na->grad_sink())
          for (std::size_t i = 0; i < g->size(); ++i)
            (*g)[i] += self.grad[i] / (nb->data[i] + eps);
        if (auto* g = nb->grad_sink())
          for (std::size_t i = 0; i < g->size(); ++i) {
            float d = nb->data[i] + eps;
            (*g)[i] -= self.grad[i] * na->data[i] / (d * d);
          }
      });
}

inline Tensor square(const Tensor& x) {
  return detail::unary(
      "square", x, [](float v) { return v * v; }, [](float v, float) { return 2.0f * v; });
}

/// sqrt(max(x, 0)); the derivative is 0 wherever x <= 0.
inline Tensor sqrt_clamped(const Tensor& x) {
  return detail::unary(
      "sqrt", x, [](float v) { return v > 0.0f ? std::sqrt(v) : 0.0f; },
      [](float v, float y) { return v > 0.0f && y > 0.0f ? 0.5f / y : 0.0f; });
}

inline Tensor relu(const Tensor& x) {
  return detail::unary(
      "relu", x, [](float v) { return v <= 0.0f ? 0.0f : v; },  // NaN passes through
      [](float v, float) { return v > 0.0f ? 1.0f : 0.0f; });
}

inline Tensor abs(const Tensor& x) {
  return detail::unary(
      "abs", x, [](float v) { return std::fabs(v); },
      [](float v, float) { return v > 0.0f ? 1.0f : (v < 0.0f ? -1.0f : 0.0f); });
}

/// x * factor + offset.
inline Tensor affine(const Tensor& x, float factor, float offset) {
  return detail::unary(
      "affine", x, [=](float v) { return v * factor + offset; },
      [=](float, float) { return factor; });
}

inline Tensor scale(const Tensor& x, float factor) { return affine(x, factor, 0.0f); }
inline Tensor shift(const Tensor& x, float offset) { return affine(x, 1.0f, offset); }

/// Scalar sum of all elements.
inline Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (float v : x.data()) acc += v;
  auto in = x.node();
  return detail::make_result("sum", {1}, {static_cast<float>(acc)}, {x},
                             [in](const detail::Node& self) {
                               if (auto* g = in->grad_sink())
                                 for (auto& v : *g) v += self.grad[0];
                             });
}

inline Tensor mean(const Tensor& x) { return scale(sum(x), 1.0f / static_cast<float>(x.numel())); }

/// Weighted sum of scalar tensors; absent (undefined) terms are skipped.
inline Tensor weighted_sum(std::initializer_list<std::pair<float, Tensor>> terms) {
  Tensor total;
  for (const auto& [w, t] : terms) {
    if (!t.defined()) continue;
    Tensor term = scale(t, w);
    total = total.defined() ? add(total, term) : term;
  }
  return total.defined() ? total : Tensor::scalar(0.0f);
}

/// Adds a constant tensor broadcast over the leading batch axis of x.
/// `addend` has the shape of x without its first axis.
inline Tensor add_broadcast_batch(const Tensor& x, const Tensor& addend) {
  std::size_t inner = addend.numel();
  require<ShapeError>(x.numel() % inner == 0 && x.numel() / inner == x.dim(0),
                      "add_broadcast_batch: ", to_string(addend.shape()), " does not tile ",
                      to_string(x.shape()));
  std::vector<float> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + addend[i % inner];
  auto in = x.node();
  return detail::make_result("add_broadcast", x.shape(), std::move(out), {x},
                             [in](const detail::Node& self) {
                               if (auto* g = in->grad_sink())
                                 for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
                             });
}

/// Multiplies by a constant tensor broadcast over the leading batch axis.
inline Tensor multiply_broadcast_batch(const Tensor& x, const Tensor& factor) {
  std::size_t inner = factor.numel();
  require<ShapeError>(x.numel() % inner == 0 && x.numel() / inner == x.dim(0),
                      "multiply_broadcast_batch: ", to_string(factor.shape()), " does not tile ",
                      to_string(x.shape()));
  std::vector<float> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * factor[i % inner];
  auto in = x.node();
  auto f = factor.node();
  return detail::make_result("multiply_broadcast", x.shape(), std::move(out), {x},
                             [in, f, inner](const detail::Node& self) {
                               if (auto* g = in->grad_sink())
                                 for (std::size_t i = 0; i < g->size(); ++i)
                                   (*g)[i] += self.grad[i] * f->data[i % inner];
                             });
}

}  // namespace adaattn
