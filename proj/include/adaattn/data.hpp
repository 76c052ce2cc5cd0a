// Copyright (C) 2026 The adaattn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <numbers>
#include <string>
#include <vector>

#include "adaattn/core.hpp"
#include "adaattn/image.hpp"

namespace adaattn {

namespace fs = std::filesystem;

/// Images of one directory, preprocessed to load_size x load_size.
struct ImageSet {
  std::vector<std::string> ids;
  std::vector<Tensor> images;  // each 1 x 3 x S x S
};

/// Video clips: one subdirectory per clip, frames in lexical order.
struct ClipSet {
  std::vector<std::string> ids;
  std::vector<std::vector<Tensor>> clips;
};

inline std::vector<fs::path> list_pngs(const fs::path& dir) {
  std::vector<fs::path> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".png") out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

/// Loads every PNG in `dir`. Unreadable files are skipped with a warning.
inline ImageSet load_image_set(const fs::path& dir, std::size_t load_size) {
  ImageSet set;
  for (const auto& p : list_pngs(dir)) {
    try {
      set.images.push_back(fit_square(load_image(p), load_size));
      set.ids.push_back(p.filename().string());
    } catch (const IoError& e) {
      std::cerr << "warning: skipping " << p.string() << ": " << e.what() << "\n";
    }
  }
  require<ConfigError>(!set.images.empty(), "no readable PNG images in ", dir.string());
  return set;
}

inline ClipSet load_clip_set(const fs::path& dir, std::size_t load_size) {
  ClipSet set;
  require<ConfigError>(fs::is_directory(dir), "clip directory ", dir.string(), " does not exist");
  std::vector<fs::path> subdirs;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory()) subdirs.push_back(e.path());
  std::sort(subdirs.begin(), subdirs.end());
  for (const auto& sub : subdirs) {
    std::vector<Tensor> frames;
    for (const auto& p : list_pngs(sub)) {
      try {
        frames.push_back(fit_square(load_image(p), load_size));
      } catch (const IoError& e) {
        std::cerr << "warning: skipping " << p.string() << ": " << e.what() << "\n";
      }
    }
    if (frames.size() < 2) continue;
    set.ids.push_back(sub.filename().string());
    set.clips.push_back(std::move(frames));
  }
  require<ConfigError>(!set.clips.empty(), "no clip with at least two frames under ", dir.string());
  return set;
}

struct SamplerConfig {
  std::size_t batch_size = 2;
  std::size_t crop_size = 64;
  int video_window = 5;
};

struct Batch {
  Tensor content;       // B x 3 x crop x crop
  Tensor style;
  Tensor content_next;  // video mode: second frame of each pair
  std::vector<std::string> content_ids, style_ids;
};

/// Generator for the batch of training step `step`; a run can resume from the
/// step count alone.
inline Rng batch_rng(std::uint64_t seed, std::int64_t step) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * static_cast<std::uint64_t>(step + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return Rng(z ^ (z >> 31));
}

namespace detail {

inline Tensor random_crop(const Tensor& image, std::size_t size, Rng& rng, std::size_t& y, std::size_t& x) {
  require<ConfigError>(image.dim(2) >= size && image.dim(3) >= size, "crop size ", size, " exceeds image ",
                       image.dim(2), "x", image.dim(3));
  y = rng.below(image.dim(2) - size + 1);
  x = rng.below(image.dim(3) - size + 1);
  return crop(image, y, x, size, size);
}

inline Tensor random_style_batch(const ImageSet& style, const SamplerConfig& cfg, Rng& rng,
                                 std::vector<std::string>& ids) {
  std::vector<Tensor> out;
  for (std::size_t b = 0; b < cfg.batch_size; ++b) {
    std::size_t k = rng.below(style.images.size()), y, x;
    out.push_back(random_crop(style.images[k], cfg.crop_size, rng, y, x));
    ids.push_back(style.ids[k]);
  }
  return stack_images(out);
}

}  // namespace detail

inline Batch sample_batch(const ImageSet& content, const ImageSet& style, const SamplerConfig& cfg, Rng& rng) {
  Batch batch;
  std::vector<Tensor> cs;
  for (std::size_t b = 0; b < cfg.batch_size; ++b) {
    std::size_t k = rng.below(content.images.size()), y, x;
    cs.push_back(detail::random_crop(content.images[k], cfg.crop_size, rng, y, x));
    batch.content_ids.push_back(content.ids[k]);
  }
  batch.content = stack_images(cs);
  batch.style = detail::random_style_batch(style, cfg, rng, batch.style_ids);
  return batch;
}

/// Pairs of distinct frames from one clip at most `video_window` apart, sharing a crop window.
inline Batch sample_video_batch(const ClipSet& clips, const ImageSet& style, const SamplerConfig& cfg, Rng& rng) {
  require<ConfigError>(cfg.video_window >= 1, "video window must be at least 1");
  Batch batch;
  std::vector<Tensor> first, second;
  for (std::size_t b = 0; b < cfg.batch_size; ++b) {
    std::size_t c = rng.below(clips.clips.size());
    const auto& frames = clips.clips[c];
    std::size_t t = rng.below(frames.size());
    std::size_t lo = t >= std::size_t(cfg.video_window) ? t - cfg.video_window : 0;
    std::size_t hi = std::min(frames.size() - 1, t + cfg.video_window);
    std::size_t u = lo + rng.below(hi - lo);  // skip t itself
    if (u >= t) ++u;
    std::size_t y, x;
    first.push_back(detail::random_crop(frames[t], cfg.crop_size, rng, y, x));
    second.push_back(crop(frames[u], y, x, cfg.crop_size, cfg.crop_size));
    batch.content_ids.push_back(clips.ids[c] + "/" + std::to_string(t) + "+" + std::to_string(u));
  }
  batch.content = stack_images(first);
  batch.content_next = stack_images(second);
  batch.style = detail::random_style_batch(style, cfg, rng, batch.style_ids);
  return batch;
}

// Synthetic desk corpus: smooth scenes as content, periodic textures as style.

namespace detail {

struct Rgb {
  float r, g, b;
};

inline Rgb random_colour(Rng& rng) { return {rng.uniform(), rng.uniform(), rng.uniform()}; }

inline Tensor render(std::size_t size, const auto& shade) {
  const std::size_t hw = size * size;
  std::vector<float> out(3 * hw);
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      Rgb c = shade(double(x) / size, double(y) / size);
      out[y * size + x] = std::clamp(c.r, 0.0f, 1.0f);
      out[hw + y * size + x] = std::clamp(c.g, 0.0f, 1.0f);
      out[2 * hw + y * size + x] = std::clamp(c.b, 0.0f, 1.0f);
    }
  return Tensor::from({1, 3, size, size}, std::move(out));
}

inline Rgb mix(Rgb a, Rgb b, float t) {
  return {a.r + (b.r - a.r) * t, a.g + (b.g - a.g) * t, a.b + (b.b - a.b) * t};
}

}  // namespace detail

/// Gradient background with a few soft discs and a box.
inline Tensor desk_content_image(std::size_t index, std::size_t size, std::uint64_t seed) {
  Rng rng(seed * 0x100000001B3ull + index * 2 + 1);
  auto bg0 = detail::random_colour(rng), bg1 = detail::random_colour(rng);
  float angle = rng.uniform(0.0f, 2.0f * std::numbers::pi_v<float>);
  struct Disc {
    float cx, cy, r;
    detail::Rgb c;
  };
  std::vector<Disc> discs;
  for (int i = 0; i < 3; ++i)
    discs.push_back({rng.uniform(0.15f, 0.85f), rng.uniform(0.15f, 0.85f), rng.uniform(0.08f, 0.25f),
                     detail::random_colour(rng)});
  float bx0 = rng.uniform(0.0f, 0.6f), by0 = rng.uniform(0.0f, 0.6f);
  float bx1 = bx0 + rng.uniform(0.15f, 0.4f), by1 = by0 + rng.uniform(0.15f, 0.4f);
  auto box = detail::random_colour(rng);
  return detail::render(size, [&](double u, double v) {
    float t = 0.5f + 0.5f * float((u - 0.5) * std::cos(angle) + (v - 0.5) * std::sin(angle));
    auto c = detail::mix(bg0, bg1, std::clamp(t, 0.0f, 1.0f));
    if (u >= bx0 && u <= bx1 && v >= by0 && v <= by1) c = detail::mix(c, box, 0.8f);
    for (const auto& d : discs) {
      float dist = float(std::hypot(u - d.cx, v - d.cy));
      float w = std::clamp((d.r - dist) / 0.03f, 0.0f, 1.0f);
      c = detail::mix(c, d.c, w);
    }
    return c;
  });
}

/// Stripes, checks, rings or wave interference in a two-to-three colour palette.
inline Tensor desk_style_image(std::size_t index, std::size_t size, std::uint64_t seed) {
  Rng rng(seed * 0x100000001B3ull + index * 2 + 2);
  auto c0 = detail::random_colour(rng), c1 = detail::random_colour(rng), c2 = detail::random_colour(rng);
  float freq = rng.uniform(3.0f, 9.0f), angle = rng.uniform(0.0f, std::numbers::pi_v<float>);
  float phase = rng.uniform(0.0f, 6.28f);
  const double two_pi = 2.0 * std::numbers::pi;
  const std::size_t kind = index % 4;
  return detail::render(size, [&](double u, double v) {
    double a = u * std::cos(angle) + v * std::sin(angle), b = -u * std::sin(angle) + v * std::cos(angle);
    float t = 0.0f;
    switch (kind) {
      case 0: t = float(0.5 + 0.5 * std::sin(two_pi * freq * a + phase)); break;
      case 1: t = float((int(std::floor(a * freq)) + int(std::floor(b * freq))) & 1); break;
      case 2: t = float(0.5 + 0.5 * std::sin(two_pi * freq * std::hypot(u - 0.5, v - 0.5) + phase)); break;
      default:
        t = float(0.5 + 0.25 * std::sin(two_pi * freq * a + phase) + 0.25 * std::sin(two_pi * 1.7 * freq * b));
    }
    float s = float(0.5 + 0.5 * std::sin(two_pi * 2.0 * freq * b));
    return detail::mix(detail::mix(c0, c1, t), c2, 0.3f * s);
  });
}

struct DeskCorpusSpec {
  std::size_t content_count = 16;
  std::size_t style_count = 8;
  std::size_t size = 64;
  std::uint64_t seed = 2026;
};

/// Writes content/ and style/ PNG directories under `root`.
inline void write_desk_corpus(const fs::path& root, const DeskCorpusSpec& spec) {
  char name[32];
  for (std::size_t i = 0; i < spec.content_count; ++i) {
    std::snprintf(name, sizeof name, "content_%03zu.png", i);
    save_image(root / "content" / name, desk_content_image(i, spec.size, spec.seed));
  }
  for (std::size_t i = 0; i < spec.style_count; ++i) {
    std::snprintf(name, sizeof name, "style_%03zu.png", i);
    save_image(root / "style" / name, desk_style_image(i, spec.size, spec.seed));
  }
}

/// Frames of a smooth texture moving `shift` pixels right and `shift_y` down per frame.
inline std::vector<Tensor> translating_clip(std::size_t frames, std::size_t size, double shift, double shift_y,
                                            std::uint64_t seed) {
  Rng rng(seed);
  auto c0 = detail::random_colour(rng), c1 = detail::random_colour(rng), c2 = detail::random_colour(rng);
  const double two_pi = 2.0 * std::numbers::pi;
  std::vector<Tensor> out;
  for (std::size_t t = 0; t < frames; ++t) {
    double ox = shift * double(t), oy = shift_y * double(t);
    out.push_back(detail::render(size, [&](double u, double v) {
      double px = u * size - ox, py = v * size - oy;
      float a = float(0.5 + 0.5 * std::sin(two_pi * px / 23.0) * std::cos(two_pi * py / 17.0));
      float b = float(0.5 + 0.5 * std::sin(two_pi * (px + py) / 31.0));
      return detail::mix(detail::mix(c0, c1, a), c2, 0.5f * b);
    }));
  }
  return out;
}

}  // namespace adaattn
