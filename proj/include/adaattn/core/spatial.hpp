// Copyright (C) 2026 The adaattn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "adaattn/core/linalg.hpp"
#include "adaattn/core/tensor.hpp"

namespace adaattn {

enum class Padding { zero, reflect };

namespace detail {

struct Dims4 {
  std::size_t n, c, h, w;
};

inline Dims4 dims4(const Tensor& t, const char* op) {
  require<ShapeError>(t.rank() == 4, op, ": expected N x C x H x W, got ", to_string(t.shape()));
  return {t.dim(0), t.dim(1), t.dim(2), t.dim(3)};
}

// Source index for a padded coordinate, or -1 when it falls in zero padding.
inline long padded_index(long i, long extent, Padding mode) {
  if (i >= 0 && i < extent) return i;
  if (mode == Padding::zero) return -1;
  if (extent == 1) return 0;
  return i < 0 ? -i : 2 * (extent - 1) - i;
}

// Column buffer [C*k*k x H*W] for one sample.
inline void im2col(const float* src, std::size_t c, std::size_t h, std::size_t w, std::size_t k,
                   Padding mode, float* col) {
  const long r = static_cast<long>(k / 2);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t ky = 0; ky < k; ++ky)
      for (std::size_t kx = 0; kx < k; ++kx) {
        float* row = col + ((ch * k + ky) * k + kx) * h * w;
        for (std::size_t y = 0; y < h; ++y) {
          long sy = padded_index(static_cast<long>(y) + static_cast<long>(ky) - r, long(h), mode);
          for (std::size_t x = 0; x < w; ++x) {
            long sx = padded_index(static_cast<long>(x) + static_cast<long>(kx) - r, long(w), mode);
            row[y * w + x] = (sy < 0 || sx < 0) ? 0.0f : src[(ch * h + sy) * w + sx];
          }
        }
      }
}

inline void col2im_add(const float* col, std::size_t c, std::size_t h, std::size_t w,
                       std::size_t k, Padding mode, float* dst) {
  const long r = static_cast<long>(k / 2);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t ky = 0; ky < k; ++ky)
      for (std::size_t kx = 0; kx < k; ++kx) {
        const float* row = col + ((ch * k + ky) * k + kx) * h * w;
        for (std::size_t y = 0; y < h; ++y) {
          long sy = padded_index(static_cast<long>(y) + static_cast<long>(ky) - r, long(h), mode);
          if (sy < 0) continue;
          for (std::size_t x = 0; x < w; ++x) {
            long sx = padded_index(static_cast<long>(x) + static_cast<long>(kx) - r, long(w), mode);
            if (sx < 0) continue;
            dst[(ch * h + sy) * w + sx] += row[y * w + x];
          }
        }
      }
}

}  // namespace detail

/// Same-size 2-D cross-correlation with a k x k kernel (k in {1, 3}) and an
/// optional per-output-channel bias (pass an undefined Tensor to omit it).
inline Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
                     Padding mode = Padding::zero) {
  auto d = detail::dims4(input, "conv2d");
  require<ShapeError>(kernel.rank() == 4, "conv2d: kernel must be O x C x k x k, got ",
                      to_string(kernel.shape()));
  const std::size_t out_ch = kernel.dim(0), k = kernel.dim(2);
  require<UnsupportedError>(kernel.dim(3) == k && (k == 1 || k == 3),
                            "conv2d: unsupported kernel size ", to_string(kernel.shape()));
  require<ShapeError>(kernel.dim(1) == d.c, "conv2d: kernel expects ", kernel.dim(1),
                      " input channels, input has ", d.c);
  if (bias.defined())
    require<ShapeError>(bias.numel() == out_ch, "conv2d: bias has ", bias.numel(),
                        " entries for ", out_ch, " output channels");

  const std::size_t hw = d.h * d.w, ckk = d.c * k * k;
  std::vector<float> out(d.n * out_ch * hw);
  std::vector<float> col(k == 1 ? 0 : ckk * hw);
  for (std::size_t s = 0; s < d.n; ++s) {
    const float* src = input.data().data() + s * d.c * hw;
    const float* cols = src;
    if (k != 1) {
      detail::im2col(src, d.c, d.h, d.w, k, mode, col.data());
      cols = col.data();
    }
    float* dst = out.data() + s * out_ch * hw;
    detail::gemm(false, false, out_ch, hw, ckk, kernel.data().data(), cols, dst, false);
    if (bias.defined())
      for (std::size_t o = 0; o < out_ch; ++o)
        std::for_each(dst + o * hw, dst + (o + 1) * hw, [b = bias[o]](float& v) { v += b; });
  }

  auto ni = input.node(), nk = kernel.node();
  auto nb = bias.defined() ? bias.node() : nullptr;
  return detail::make_result(
      "conv2d", {d.n, out_ch, d.h, d.w}, std::move(out), {input, kernel, bias},
      [=](const detail::Node& self) {
        auto* gi = ni->grad_sink();
        auto* gk = nk->grad_sink();
        auto* gb = nb ? nb->grad_sink() : nullptr;
        std::vector<float> col_buf(k == 1 ? 0 : ckk * hw);
        std::vector<float> dcol(gi && k != 1 ? ckk * hw : 0);
        for (std::size_t s = 0; s < d.n; ++s) {
          const float* gout = self.grad.data() + s * out_ch * hw;
          if (gb)
            for (std::size_t o = 0; o < out_ch; ++o) {
              double acc = 0.0;
              for (std::size_t i = 0; i < hw; ++i) acc += gout[o * hw + i];
              (*gb)[o] += static_cast<float>(acc);
            }
          const float* src = ni->data.data() + s * d.c * hw;
          if (gk) {
            const float* cols = src;
            if (k != 1) {
              detail::im2col(src, d.c, d.h, d.w, k, mode, col_buf.data());
              cols = col_buf.data();
            }
            detail::gemm(false, true, out_ch, ckk, hw, gout, cols, gk->data(), true);
          }
          if (gi) {
            float* gsrc = gi->data() + s * d.c * hw;
            if (k == 1) {
              detail::gemm(true, false, ckk, hw, out_ch, nk->data.data(), gout, gsrc, true);
            } else {
              detail::gemm(true, false, ckk, hw, out_ch, nk->data.data(), gout, dcol.data(), false);
              detail::col2im_add(dcol.data(), d.c, d.h, d.w, k, mode, gsrc);
            }
          }
        }
      });
}

/// 2x2 max pooling with stride 2; odd trailing rows/columns are dropped.
inline Tensor max_pool2x2(const Tensor& x) {
  auto d = detail::dims4(x, "max_pool2x2");
  require<ShapeError>(d.h >= 2 && d.w >= 2, "max_pool2x2: input too small ", to_string(x.shape()));
  const std::size_t oh = d.h / 2, ow = d.w / 2;
  std::vector<float> out(d.n * d.c * oh * ow);
  std::vector<std::size_t> argmax(out.size());
  const auto& xd = x.data();
  for (std::size_t p = 0; p < d.n * d.c; ++p)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xo = 0; xo < ow; ++xo) {
        std::size_t best = p * d.h * d.w + (2 * y) * d.w + 2 * xo;
        for (std::size_t dy = 0; dy < 2; ++dy)
          for (std::size_t dx = 0; dx < 2; ++dx) {
            std::size_t idx = p * d.h * d.w + (2 * y + dy) * d.w + 2 * xo + dx;
            if (xd[idx] > xd[best] || std::isnan(xd[idx])) best = idx;
          }
        std::size_t o = (p * oh + y) * ow + xo;
        out[o] = xd[best];
        argmax[o] = best;
      }
  auto in = x.node();
  return detail::make_result("max_pool2x2", {d.n, d.c, oh, ow}, std::move(out), {x},
                             [in, argmax = std::move(argmax)](const detail::Node& self) {
                               if (auto* g = in->grad_sink())
                                 for (std::size_t o = 0; o < argmax.size(); ++o)
                                   (*g)[argmax[o]] += self.grad[o];
                             });
}

/// Nearest-neighbour upsampling by a factor of two.
inline Tensor upsample_nearest2x(const Tensor& x) {
  auto d = detail::dims4(x, "upsample_nearest2x");
  const std::size_t oh = d.h * 2, ow = d.w * 2;
  std::vector<float> out(d.n * d.c * oh * ow);
  const auto& xd = x.data();
  for (std::size_t p = 0; p < d.n * d.c; ++p)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xo = 0; xo < ow; ++xo)
        out[(p * oh + y) * ow + xo] = xd[(p * d.h + y / 2) * d.w + xo / 2];
  auto in = x.node();
  return detail::make_result("upsample_nearest2x", {d.n, d.c, oh, ow}, std::move(out), {x},
                             [in, d, oh, ow](const detail::Node& self) {
                               if (auto* g = in->grad_sink())
                                 for (std::size_t p = 0; p < d.n * d.c; ++p)
                                   for (std::size_t y = 0; y < oh; ++y)
                                     for (std::size_t xo = 0; xo < ow; ++xo)
                                       (*g)[(p * d.h + y / 2) * d.w + xo / 2] +=
                                           self.grad[(p * oh + y) * ow + xo];
                             });
}

namespace detail {

struct LerpTap {
  std::size_t lo, hi;
  float frac;
};

// Half-pixel centres: src = (dst + 0.5) * in / out - 0.5, clamped to the grid.
inline std::vector<LerpTap> lerp_taps(std::size_t in, std::size_t out) {
  std::vector<LerpTap> taps(out);
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t i = 0; i < out; ++i) {
    double src = (static_cast<double>(i) + 0.5) * ratio - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    auto lo = static_cast<std::size_t>(std::floor(src));
    std::size_t hi = std::min(lo + 1, in - 1);
    taps[i] = {lo, hi, static_cast<float>(src - static_cast<double>(lo))};
  }
  return taps;
}

}  // namespace detail

/// Bilinear resampling to out_h x out_w with half-pixel centres.
inline Tensor bilinear_resize(const Tensor& x, std::size_t out_h, std::size_t out_w) {
  auto d = detail::dims4(x, "bilinear_resize");
  require<ContractError>(out_h > 0 && out_w > 0, "bilinear_resize: target extents must be positive");
  if (out_h == d.h && out_w == d.w) return x.reshape(x.shape());

  auto ty = detail::lerp_taps(d.h, out_h);
  auto tx = detail::lerp_taps(d.w, out_w);
  std::vector<float> out(d.n * d.c * out_h * out_w);
  const auto& xd = x.data();
  for (std::size_t p = 0; p < d.n * d.c; ++p) {
    const float* src = xd.data() + p * d.h * d.w;
    for (std::size_t y = 0; y < out_h; ++y) {
      const auto& a = ty[y];
      for (std::size_t xo = 0; xo < out_w; ++xo) {
        const auto& b = tx[xo];
        float top = src[a.lo * d.w + b.lo] * (1.0f - b.frac) + src[a.lo * d.w + b.hi] * b.frac;
        float bot = src[a.hi * d.w + b.lo] * (1.0f - b.frac) + src[a.hi * d.w + b.hi] * b.frac;
        out[(p * out_h + y) * out_w + xo] = top * (1.0f - a.frac) + bot * a.frac;
      }
    }
  }
  auto in = x.node();
  return detail::make_result(
      "bilinear_resize", {d.n, d.c, out_h, out_w}, std::move(out), {x},
      [in, d, out_h, out_w, ty = std::move(ty), tx = std::move(tx)](const detail::Node& self) {
        auto* g = in->grad_sink();
        if (!g) return;
        for (std::size_t p = 0; p < d.n * d.c; ++p) {
          float* dst = g->data() + p * d.h * d.w;
          for (std::size_t y = 0; y < out_h; ++y) {
            const auto& a = ty[y];
            for (std::size_t xo = 0; xo < out_w; ++xo) {
              const auto& b = tx[xo];
              float gv = self.grad[(p * out_h + y) * out_w + xo];
              dst[a.lo * d.w + b.lo] += gv * (1.0f - a.frac) * (1.0f - b.frac);
              dst[a.lo * d.w + b.hi] += gv * (1.0f - a.frac) * b.frac;
              dst[a.hi * d.w + b.lo] += gv * a.frac * (1.0f - b.frac);
              dst[a.hi * d.w + b.hi] += gv * a.frac * b.frac;
            }
          }
        }
      });
}

/// Concatenates N x C_i x H x W tensors along the channel axis.
inline Tensor concat_channels(const std::vector<Tensor>& parts) {
  require<ContractError>(!parts.empty(), "concat_channels: nothing to concatenate");
  auto d0 = detail::dims4(parts.front(), "concat_channels");
  std::size_t total_c = 0;
  for (const auto& t : parts) {
    auto d = detail::dims4(t, "concat_channels");
    require<ShapeError>(d.n == d0.n && d.h == d0.h && d.w == d0.w,
                        "concat_channels: incompatible ", to_string(t.shape()), " vs ",
                        to_string(parts.front().shape()));
    total_c += d.c;
  }
  const std::size_t hw = d0.h * d0.w;
  std::vector<float> out(d0.n * total_c * hw);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& t : parts) {
    offsets.push_back(off);
    const std::size_t c = t.dim(1);
    for (std::size_t s = 0; s < d0.n; ++s)
      std::copy_n(t.data().data() + s * c * hw, c * hw, out.data() + (s * total_c + off) * hw);
    off += c;
  }

  Tensor result = Tensor::from({d0.n, total_c, d0.h, d0.w}, std::move(out));
  bool track = grad_enabled() && std::any_of(parts.begin(), parts.end(),
                                             [](const Tensor& t) { return t.requires_grad(); });
  if (track) {
    auto& node = *result.node();
    node.op = "concat_channels";
    node.requires_grad = true;
    std::vector<detail::NodePtr> inputs;
    for (const auto& t : parts) inputs.push_back(t.node());
    node.inputs = inputs;
    node.backward = [inputs, offsets, d0, total_c, hw](const detail::Node& self) {
      for (std::size_t i = 0; i < inputs.size(); ++i) {
        auto* g = inputs[i]->grad_sink();
        if (!g) continue;
        const std::size_t c = inputs[i]->shape[1];
        for (std::size_t s = 0; s < d0.n; ++s)
          for (std::size_t j = 0; j < c * hw; ++j)
            (*g)[s * c * hw + j] += self.grad[(s * total_c + offsets[i]) * hw + j];
      }
    };
  }
  return result;
}

}  // namespace adaattn
