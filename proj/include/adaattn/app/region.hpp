// Copyright (C) 2026 The adaattn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <queue>
#include <vector>

#include "adaattn/attention.hpp"
#include "adaattn/core.hpp"

namespace adaattn {

/// Pixel coordinate, column first.
struct PixelPoint {
  std::size_t x = 0;
  std::size_t y = 0;
};

/// 4-connected flood fill from each seed. A neighbour joins when its RGB
/// distance to the running mean of the region grown so far is below
/// `threshold` (or exactly zero, so threshold 0 keeps exact matches).
/// Each seed grows on its own; the result is the union.
inline BoolMap region_grow(const Tensor& image, const std::vector<PixelPoint>& seeds, float threshold) {
  require<ShapeError>(image.rank() == 4 && image.dim(0) == 1 && image.dim(1) == 3,
                      "region_grow: expected a 1x3xHxW image, got ", to_string(image.shape()));
  require<MaskError>(!seeds.empty(), "region_grow: no seed points");
  require<MaskError>(threshold >= 0.0f && std::isfinite(threshold), "region_grow: threshold must be >= 0, got ",
                     threshold);
  const std::size_t h = image.dim(2), w = image.dim(3), plane = h * w;
  const auto& px = image.data();
  auto colour = [&](std::size_t i) {
    return std::array<double, 3>{px[i], px[plane + i], px[2 * plane + i]};
  };
  BoolMap out(h, w);
  std::vector<std::uint8_t> seen(plane);
  for (const auto& s : seeds) {
    require<MaskError>(s.x < w && s.y < h, "seed point (", s.x, ", ", s.y, ") outside the ", w, "x", h, " image");
    std::fill(seen.begin(), seen.end(), 0);
    std::array<double, 3> sum = colour(s.y * w + s.x);
    double count = 1.0;
    std::queue<std::size_t> frontier;
    frontier.push(s.y * w + s.x);
    seen[s.y * w + s.x] = 1;
    while (!frontier.empty()) {
      std::size_t i = frontier.front();
      frontier.pop();
      out.cells[i] = 1;
      const std::size_t y = i / w, x = i % w;
      const std::size_t next[4] = {y > 0 ? i - w : plane, y + 1 < h ? i + w : plane, x > 0 ? i - 1 : plane,
                                   x + 1 < w ? i + 1 : plane};
      for (std::size_t j : next) {
        if (j == plane || seen[j]) continue;
        auto c = colour(j);
        double d2 = 0.0;
        for (int k = 0; k < 3; ++k) {
          double diff = c[k] - sum[k] / count;
          d2 += diff * diff;
        }
        double d = std::sqrt(d2);
        if (d < threshold || d == 0.0) {
          seen[j] = 1;
          for (int k = 0; k < 3; ++k) sum[k] += c[k];
          count += 1.0;
          frontier.push(j);
        }
      }
    }
  }
  return out;
}

}  // namespace adaattn
