// Copyright (C) 2026 The adaattn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <optional>
#include <vector>

#include "adaattn/app/region.hpp"
#include "adaattn/data.hpp"
#include "adaattn/image.hpp"
#include "adaattn/model.hpp"

namespace adaattn {

namespace detail {

inline void require_single_rgb(const Tensor& img, const char* what) {
  require<ShapeError>(img.rank() == 4 && img.dim(0) == 1 && img.dim(1) == 3, what,
                      " must be a single RGB image, got ", to_string(img.shape()));
}

/// Resizes to multiples of 16, warning when that changes the size.
inline Tensor aligned_input(const Tensor& img, const char* what, std::ostream* log) {
  require_single_rgb(img, what);
  Tensor out = resize_to_multiple(img, 16);
  if (log && out.shape() != img.shape())
    *log << "warning: " << what << " " << img.dim(3) << "x" << img.dim(2) << " resized to " << out.dim(3) << "x"
         << out.dim(2) << " (sides must be multiples of 16)\n";
  return out;
}

/// Region masks must match the images as supplied; they follow any resize.
inline std::optional<RegionConstraint> aligned_region(const std::optional<RegionConstraint>& region,
                                                      const Tensor& content, const Tensor& content_aligned,
                                                      const Tensor& style, const Tensor& style_aligned) {
  if (!region) return std::nullopt;
  auto check = [](const BoolMap& m, const Tensor& img, const char* what) {
    require<MaskError>(m.height == img.dim(2) && m.width == img.dim(3), what, " mask is ", m.width, "x", m.height,
                       " but the image is ", img.dim(3), "x", img.dim(2));
  };
  check(region->content, content, "content");
  check(region->style, style, "style");
  require<MaskError>(region->style.count() > 0, "style mask is empty");
  return RegionConstraint{resize_mask(region->content, content_aligned.dim(2), content_aligned.dim(3)),
                          resize_mask(region->style, style_aligned.dim(2), style_aligned.dim(3))};
}

}  // namespace detail

/// Stylized image, same size as the (16-aligned) content. Inference only.
inline Tensor stylize(const ModelBundle& b, const Tensor& content, const Tensor& style, const AttentionConfig& cfg,
                      std::ostream* log = &std::cerr) {
  Tensor c = detail::aligned_input(content, "content", log);
  Tensor s = detail::aligned_input(style, "style", log);
  AttentionConfig run = cfg;
  run.region = detail::aligned_region(cfg.region, content, c, style, s);
  NoGradGuard no_grad;
  return generate(b, c, s, run);
}

/// Masks grown from clicked points on each image.
inline RegionConstraint region_from_points(const Tensor& content, const Tensor& style,
                                           const std::vector<PixelPoint>& content_points,
                                           const std::vector<PixelPoint>& style_points, float threshold) {
  return {region_grow(content, content_points, threshold), region_grow(style, style_points, threshold)};
}

namespace detail {

inline std::vector<double> normalized_weights(const std::vector<float>& weights, std::size_t styles) {
  require<ContractError>(styles >= 2, "interpolation needs at least two styles, got ", styles);
  require<ContractError>(weights.size() == styles, weights.size(), " weights for ", styles, " styles");
  double total = 0.0;
  for (float w : weights) {
    require<ContractError>(std::isfinite(w) && w >= 0.0f, "interpolation weights must be nonnegative, got ", w);
    total += w;
  }
  require<ContractError>(total > 0.0, "interpolation weights sum to zero");
  std::vector<double> out;
  for (float w : weights) out.push_back(double(w) / total);
  return out;
}

}  // namespace detail

/// Per-tap mean and std maps of every style, combined with the normalized weights.
inline std::array<AttentionOutput, 3> blended_statistics(const ModelBundle& b, const Tensor& content,
                                                         const std::vector<Tensor>& styles,
                                                         const std::vector<float>& weights,
                                                         const AttentionConfig& cfg, std::ostream* log = &std::cerr) {
  auto w = detail::normalized_weights(weights, styles.size());
  require<UnsupportedError>(!cfg.region, "region constraints are not supported with style interpolation");
  NoGradGuard no_grad;
  FeatureStack fc = encode(detail::aligned_input(content, "content", log), b.encoder);
  std::array<std::vector<double>, 3> mean, stdv;
  std::array<Shape, 3> shapes;
  for (std::size_t k = 0; k < styles.size(); ++k) {
    FeatureStack fs = encode(detail::aligned_input(styles[k], "style", log), b.encoder);
    auto stats = attention_statistics(b, fc, fs, cfg);
    for (std::size_t m = 0; m < 3; ++m) {
      if (k == 0) {
        shapes[m] = stats[m].mean.shape();
        mean[m].assign(stats[m].mean.numel(), 0.0);
        stdv[m].assign(stats[m].std.numel(), 0.0);
      }
      for (std::size_t i = 0; i < mean[m].size(); ++i) {
        mean[m][i] += w[k] * stats[m].mean.data()[i];
        stdv[m][i] += w[k] * stats[m].std.data()[i];
      }
    }
  }
  std::array<AttentionOutput, 3> out;
  for (std::size_t m = 0; m < 3; ++m) {
    out[m].mean = Tensor::from(shapes[m], std::vector<float>(mean[m].begin(), mean[m].end()));
    out[m].std = Tensor::from(shapes[m], std::vector<float>(stdv[m].begin(), stdv[m].end()));
  }
  return out;
}

inline Tensor interpolate_styles(const ModelBundle& b, const Tensor& content, const std::vector<Tensor>& styles,
                                 const std::vector<float>& weights, const AttentionConfig& cfg,
                                 std::ostream* log = &std::cerr) {
  auto stats = blended_statistics(b, content, styles, weights, cfg, log);
  NoGradGuard no_grad;
  FeatureStack fc = encode(detail::aligned_input(content, "content", nullptr), b.encoder);
  std::array<Tensor, 3> taps;
  for (std::size_t m = 0; m < 3; ++m) taps[m] = adaattn_apply(fc.tap(kAttentionTaps[m]), stats[m].mean, stats[m].std);
  return decode_taps(b, taps);
}

/// Styles resized to the smallest height among them, joined left to right.
inline Tensor concat_style_image(const std::vector<Tensor>& styles) {
  require<ContractError>(!styles.empty(), "concat_styles: no style images");
  std::size_t height = styles.front().dim(2);
  for (const auto& s : styles) {
    detail::require_single_rgb(s, "style");
    height = std::min(height, s.dim(2));
  }
  return concat_horizontal(styles, height);
}

inline Tensor concat_styles(const ModelBundle& b, const Tensor& content, const std::vector<Tensor>& styles,
                            const AttentionConfig& cfg, std::ostream* log = &std::cerr) {
  return stylize(b, content, concat_style_image(styles), cfg, log);
}

/// Stylizes every PNG frame in `frame_dir` independently and writes frames
/// with the same names to `out_dir`. Returns the frame count.
inline std::size_t stylize_video(const ModelBundle& b, const std::filesystem::path& frame_dir, const Tensor& style,
                                 const std::filesystem::path& out_dir, const AttentionConfig& cfg,
                                 std::ostream* log = &std::cerr) {
  require<IoError>(std::filesystem::is_directory(frame_dir), "frame directory ", frame_dir.string(),
                   " does not exist");
  auto paths = list_pngs(frame_dir);
  require<IoError>(!paths.empty(), "no PNG frames in ", frame_dir.string());
  std::vector<Tensor> frames;
  for (const auto& p : paths) {
    frames.push_back(load_image(p));
    require<ShapeError>(frames.back().shape() == frames.front().shape(), "frame ", p.filename().string(), " is ",
                        to_string(frames.back().shape()), ", first frame is ", to_string(frames.front().shape()));
  }
  std::filesystem::create_directories(out_dir);
  for (std::size_t t = 0; t < frames.size(); ++t)
    save_image(out_dir / paths[t].filename(), stylize(b, frames[t], style, cfg, t == 0 ? log : nullptr));
  return frames.size();
}

/// One logical stylization request, shared by the CLI and the service.
struct StylizeRequest {
  Tensor content;
  std::vector<Tensor> styles;
  std::vector<float> weights;  // empty means equal weights
  bool concat = false;         // several styles: join them instead of interpolating
  AttentionMode mode = AttentionMode::softmax;
  std::vector<PixelPoint> content_points, style_points;
  std::optional<BoolMap> content_mask, style_mask;
  float threshold = 0.1f;
};

struct StylizeResult {
  Tensor image;
  std::optional<BoolMap> content_mask, style_mask;
};

namespace detail {

/// Full-resolution region from clicked points or supplied masks, one of each per side.
inline std::optional<RegionConstraint> request_region(const StylizeRequest& req, const Tensor& style) {
  bool content_side = !req.content_points.empty() || req.content_mask.has_value();
  bool style_side = !req.style_points.empty() || req.style_mask.has_value();
  if (!content_side && !style_side) return std::nullopt;
  require<MaskError>(content_side && style_side, "a region constraint needs both a content and a style region");
  auto side = [&](const std::vector<PixelPoint>& pts, const std::optional<BoolMap>& mask, const Tensor& img,
                  const char* what) {
    require<MaskError>(pts.empty() || !mask, what, ": give points or a mask, not both");
    return mask ? *mask : region_grow(img, pts, req.threshold);
  };
  return RegionConstraint{side(req.content_points, req.content_mask, req.content, "content"),
                          side(req.style_points, req.style_mask, style, "style")};
}

}  // namespace detail

inline StylizeResult run_stylize(const ModelBundle& b, const StylizeRequest& req, std::ostream* log = &std::cerr) {
  require<ContractError>(req.content.defined(), "no content image");
  require<ContractError>(!req.styles.empty(), "no style image");
  AttentionConfig cfg{.mode = req.mode};
  StylizeResult out;
  if (req.styles.size() == 1 || req.concat) {
    Tensor style = req.styles.size() == 1 ? req.styles.front() : concat_style_image(req.styles);
    cfg.region = detail::request_region(req, style);
    if (cfg.region) {
      out.content_mask = cfg.region->content;
      out.style_mask = cfg.region->style;
    }
    out.image = stylize(b, req.content, style, cfg, log);
    return out;
  }
  require<UnsupportedError>(!detail::request_region(req, req.styles.front()),
                            "region constraints need a single (or concatenated) style");
  std::vector<float> w = req.weights.empty() ? std::vector<float>(req.styles.size(), 1.0f) : req.weights;
  out.image = interpolate_styles(b, req.content, req.styles, w, cfg, log);
  return out;
}

}  // namespace adaattn
