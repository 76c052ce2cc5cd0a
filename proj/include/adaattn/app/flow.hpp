// Copyright (C) 2026 The adaattn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "adaattn/blob.hpp"
#include "adaattn/core.hpp"
#include "adaattn/data.hpp"
#include "adaattn/image.hpp"

namespace adaattn {

/// Per-pixel displacement in pixels, interleaved (dx, dy), row-major.
struct FlowField {
  std::size_t height = 0, width = 0;
  std::vector<float> uv;

  FlowField() = default;
  FlowField(std::size_t h, std::size_t w) : height(h), width(w), uv(2 * h * w, 0.0f) {}

  float dx(std::size_t y, std::size_t x) const { return uv[2 * (y * width + x)]; }
  float dy(std::size_t y, std::size_t x) const { return uv[2 * (y * width + x) + 1]; }
};

inline constexpr const char* kFlowMagic = "ADAATTN-FLOW 1";

/// Text header "ADAATTN-FLOW 1\n<width> <height>\n" then little-endian
/// float32 pairs.
inline std::string encode_flow(const FlowField& f) {
  require<ContractError>(f.uv.size() == 2 * f.height * f.width, "flow buffer does not match ", f.width, "x",
                         f.height);
  std::string out = std::string(kFlowMagic) + "\n" + std::to_string(f.width) + " " + std::to_string(f.height) + "\n";
  out += detail::encode_floats(f.uv);
  return out;
}

inline FlowField decode_flow(const std::string& bytes, const std::string& what = "flow") {
  std::size_t l1 = bytes.find('\n');
  require<IoError>(l1 != std::string::npos && bytes.compare(0, l1, kFlowMagic) == 0, what,
                   ": not an ADAATTN-FLOW 1 file");
  std::size_t l2 = bytes.find('\n', l1 + 1);
  require<IoError>(l2 != std::string::npos, what, ": truncated header");
  std::istringstream dims(bytes.substr(l1 + 1, l2 - l1 - 1));
  long long w = -1, h = -1;
  dims >> w >> h;
  require<IoError>(dims && w > 0 && h > 0, what, ": bad size line");
  FlowField f(static_cast<std::size_t>(h), static_cast<std::size_t>(w));
  require<IoError>(bytes.size() - l2 - 1 == f.uv.size() * 4, what, ": payload has ", bytes.size() - l2 - 1,
                   " bytes, expected ", f.uv.size() * 4);
  f.uv = detail::decode_floats(std::string_view(bytes).substr(l2 + 1));
  for (float v : f.uv) require<NumericError>(std::isfinite(v), what, ": non-finite displacement");
  return f;
}

inline void write_flow(const std::filesystem::path& path, const FlowField& f) { write_file_bytes(path, encode_flow(f)); }

inline FlowField read_flow(const std::filesystem::path& path) {
  return decode_flow(read_file_bytes(path), path.string());
}

namespace detail {

inline float lerp_exact(float a, float b, float t) { return a == b ? a : a + (b - a) * t; }

}  // namespace detail

/// Warp error between consecutive frames, in units of 1e-2.
///
/// With forward flow f (frame t to t+1), frame t+1 is sampled bilinearly at
/// p + f(p) and compared with frame t at p. Pixels whose sample falls
/// outside the frame, or that the optional mask marks invalid, are skipped.
/// The mean absolute difference over valid pixels and channels is averaged
/// over pairs and multiplied by 100.
inline double flow_error(const std::vector<Tensor>& frames, const std::vector<FlowField>& flows,
                         const std::vector<BoolMap>& masks = {}) {
  require<ContractError>(frames.size() >= 2, "flow_error needs at least two frames");
  require<ContractError>(flows.size() + 1 == frames.size(), "flow_error: ", frames.size(), " frames need ",
                         frames.size() - 1, " flow fields, got ", flows.size());
  require<ContractError>(masks.empty() || masks.size() == flows.size(), "flow_error: ", masks.size(),
                         " masks for ", flows.size(), " frame pairs");
  const Shape shape = frames.front().shape();
  require<ShapeError>(shape.size() == 4 && shape[0] == 1, "flow_error: frames must be 1xCxHxW");
  const std::size_t ch = shape[1], h = shape[2], w = shape[3];
  double total = 0.0;
  for (std::size_t t = 0; t + 1 < frames.size(); ++t) {
    require<ShapeError>(frames[t + 1].shape() == shape, "flow_error: frame ", t + 1, " has shape ",
                        to_string(frames[t + 1].shape()), ", expected ", to_string(shape));
    const FlowField& f = flows[t];
    require<ShapeError>(f.height == h && f.width == w, "flow_error: flow ", t, " is ", f.width, "x", f.height,
                        ", frames are ", w, "x", h);
    if (!masks.empty())
      require<ShapeError>(masks[t].height == h && masks[t].width == w, "flow_error: mask ", t, " size mismatch");
    const auto& a = frames[t].data();
    const auto& b = frames[t + 1].data();
    double sum = 0.0;
    std::size_t valid = 0;
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        if (!masks.empty() && !masks[t].at(y, x)) continue;
        double sx = double(x) + f.dx(y, x), sy = double(y) + f.dy(y, x);
        if (sx < 0.0 || sy < 0.0 || sx > double(w - 1) || sy > double(h - 1)) continue;
        std::size_t x0 = std::size_t(sx), y0 = std::size_t(sy);
        std::size_t x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
        float tx = float(sx - double(x0)), ty = float(sy - double(y0));
        for (std::size_t c = 0; c < ch; ++c) {
          const float* p = b.data() + c * h * w;
          float top = detail::lerp_exact(p[y0 * w + x0], p[y0 * w + x1], tx);
          float bottom = detail::lerp_exact(p[y1 * w + x0], p[y1 * w + x1], tx);
          float warped = detail::lerp_exact(top, bottom, ty);
          sum += std::fabs(double(warped) - double(a[(c * h + y) * w + x]));
        }
        ++valid;
      }
    if (valid > 0) total += sum / double(valid * ch);
  }
  return 100.0 * total / double(frames.size() - 1);
}

namespace detail {

inline std::vector<std::filesystem::path> list_with_extension(const std::filesystem::path& dir,
                                                              const std::string& ext) {
  require<IoError>(std::filesystem::is_directory(dir), "not a directory: ", dir.string());
  std::vector<std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ext) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace detail

/// Directory form: lexically ordered PNG frames, `.flow` files for each
/// consecutive pair and, optionally, PNG validity masks (white = valid).
inline double flow_error_dir(const std::filesystem::path& frame_dir, const std::filesystem::path& flow_dir,
                             const std::optional<std::filesystem::path>& mask_dir = std::nullopt) {
  std::vector<Tensor> frames;
  for (const auto& p : list_pngs(frame_dir)) frames.push_back(load_image(p));
  std::vector<FlowField> flows;
  for (const auto& p : detail::list_with_extension(flow_dir, ".flow")) flows.push_back(read_flow(p));
  std::vector<BoolMap> masks;
  if (mask_dir)
    for (const auto& p : list_pngs(*mask_dir)) masks.push_back(load_mask(p));
  return flow_error(frames, flows, masks);
}

/// Writes frames/NNNN.png of a texture moving (shift, shift_y) pixels per
/// frame and flows/NNNN.flow holding that constant displacement.
inline void write_translating_clip(const std::filesystem::path& root, std::size_t frames, std::size_t size,
                                   double shift, double shift_y, std::uint64_t seed) {
  auto clip = translating_clip(frames, size, shift, shift_y, seed);
  FlowField f(size, size);
  for (std::size_t i = 0; i < f.uv.size(); i += 2) {
    f.uv[i] = float(shift);
    f.uv[i + 1] = float(shift_y);
  }
  char name[32];
  for (std::size_t t = 0; t < clip.size(); ++t) {
    std::snprintf(name, sizeof name, "%04zu.png", t);
    save_image(root / "frames" / name, clip[t]);
    if (t + 1 < clip.size()) {
      std::snprintf(name, sizeof name, "%04zu.flow", t);
      write_flow(root / "flows" / name, f);
    }
  }
}

}  // namespace adaattn
