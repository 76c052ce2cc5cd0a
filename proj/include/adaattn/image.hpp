// Copyright (C) 2026 The adaattn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "adaattn/attention.hpp"
#include "adaattn/blob.hpp"
#include "adaattn/core.hpp"

// Images are N x 3 x H x W float tensors with RGB in [0, 1].

namespace adaattn {

namespace detail {

struct PngImage {
  png_image img;
  PngImage() {
    std::memset(&img, 0, sizeof img);
    img.version = PNG_IMAGE_VERSION;
  }
  ~PngImage() { png_image_free(&img); }
  PngImage(const PngImage&) = delete;
  PngImage& operator=(const PngImage&) = delete;
};

inline std::vector<std::uint8_t> decode_png_bytes(const std::string& bytes, std::uint32_t format, std::size_t& h,
                                                  std::size_t& w, const std::string& what) {
  PngImage png;
  if (!png_image_begin_read_from_memory(&png.img, bytes.data(), bytes.size()))
    raise<IoError>("cannot decode PNG ", what, ": ", png.img.message);
  png.img.format = format;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(png.img));
  if (!png_image_finish_read(&png.img, nullptr, buf.data(), 0, nullptr))
    raise<IoError>("cannot decode PNG ", what, ": ", png.img.message);
  h = png.img.height;
  w = png.img.width;
  return buf;
}

inline std::string encode_png_bytes(const std::vector<std::uint8_t>& pixels, std::size_t h, std::size_t w,
                                    std::uint32_t format) {
  PngImage png;
  png.img.width = static_cast<png_uint_32>(w);
  png.img.height = static_cast<png_uint_32>(h);
  png.img.format = format;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&png.img, nullptr, &size, 0, pixels.data(), 0, nullptr))
    raise<IoError>("cannot encode PNG: ", png.img.message);
  std::string out(size, '\0');
  if (!png_image_write_to_memory(&png.img, out.data(), &size, 0, pixels.data(), 0, nullptr))
    raise<IoError>("cannot encode PNG: ", png.img.message);
  out.resize(size);
  return out;
}

inline std::uint8_t to_byte(float v) {
  float c = std::clamp(v, 0.0f, 1.0f);
  return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

}  // namespace detail

/// Decodes any PNG (gray, palette, alpha are converted) into 1 x 3 x H x W.
inline Tensor decode_png(const std::string& bytes, const std::string& what = "image") {
  std::size_t h = 0, w = 0;
  auto px = detail::decode_png_bytes(bytes, PNG_FORMAT_RGB, h, w, what);
  std::vector<float> out(3 * h * w);
  for (std::size_t i = 0; i < h * w; ++i)
    for (std::size_t c = 0; c < 3; ++c) out[c * h * w + i] = px[i * 3 + c] / 255.0f;
  return Tensor::from({1, 3, h, w}, std::move(out));
}

/// Encodes sample `index` of an image batch, clamped to [0, 1] and rounded to 8 bits.
inline std::string encode_png(const Tensor& image, std::size_t index = 0) {
  require<ShapeError>(image.rank() == 4 && image.dim(1) == 3 && index < image.dim(0),
                      "encode_png: expected N x 3 x H x W, got ", to_string(image.shape()));
  const std::size_t h = image.dim(2), w = image.dim(3), hw = h * w;
  std::vector<std::uint8_t> px(3 * hw);
  for (std::size_t i = 0; i < hw; ++i)
    for (std::size_t c = 0; c < 3; ++c) px[i * 3 + c] = detail::to_byte(image[(index * 3 + c) * hw + i]);
  return detail::encode_png_bytes(px, h, w, PNG_FORMAT_RGB);
}

inline Tensor load_image(const std::filesystem::path& path) {
  return decode_png(read_file_bytes(path), path.string());
}

inline void save_image(const std::filesystem::path& path, const Tensor& image, std::size_t index = 0) {
  write_file_bytes(path, encode_png(image, index));
}

/// Gray PNG: pixels above half intensity are set.
inline BoolMap decode_mask_png(const std::string& bytes, const std::string& what = "mask") {
  std::size_t h = 0, w = 0;
  auto px = detail::decode_png_bytes(bytes, PNG_FORMAT_GRAY, h, w, what);
  BoolMap m(h, w);
  for (std::size_t i = 0; i < h * w; ++i) m.cells[i] = px[i] >= 128;
  return m;
}

inline std::string encode_mask_png(const BoolMap& m) {
  std::vector<std::uint8_t> px(m.cells.size());
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = m.cells[i] ? 255 : 0;
  return detail::encode_png_bytes(px, m.height, m.width, PNG_FORMAT_GRAY);
}

inline BoolMap load_mask(const std::filesystem::path& path) {
  return decode_mask_png(read_file_bytes(path), path.string());
}

inline void save_mask(const std::filesystem::path& path, const BoolMap& m) { write_file_bytes(path, encode_mask_png(m)); }

/// Nearest-neighbour resize of a boolean map.
inline BoolMap resize_mask(const BoolMap& m, std::size_t h, std::size_t w) {
  BoolMap out(h, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) out.set(y, x, m.at(y * m.height / h, x * m.width / w));
  return out;
}

/// Largest multiple of `multiple` not above each side. Throws if a side is too small.
inline std::pair<std::size_t, std::size_t> floor_to_multiple(std::size_t h, std::size_t w, std::size_t multiple) {
  require<ShapeError>(h >= multiple && w >= multiple, "image ", h, "x", w, " is smaller than ", multiple, " pixels");
  return {h / multiple * multiple, w / multiple * multiple};
}

/// Resized copy whose sides are multiples of `multiple`; unchanged if already aligned.
inline Tensor resize_to_multiple(const Tensor& image, std::size_t multiple = 16) {
  auto [h, w] = floor_to_multiple(image.dim(2), image.dim(3), multiple);
  if (h == image.dim(2) && w == image.dim(3)) return image;
  return bilinear_resize(image, h, w);
}

/// Window [y, y+h) x [x, x+w) of every sample.
inline Tensor crop(const Tensor& image, std::size_t y, std::size_t x, std::size_t h, std::size_t w) {
  require<ShapeError>(y + h <= image.dim(2) && x + w <= image.dim(3), "crop window out of bounds");
  const std::size_t planes = image.dim(0) * image.dim(1), ih = image.dim(2), iw = image.dim(3);
  std::vector<float> out(planes * h * w);
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t r = 0; r < h; ++r)
      std::copy_n(image.data().begin() + (p * ih + y + r) * iw + x, w, out.begin() + (p * h + r) * w);
  return Tensor::from({image.dim(0), image.dim(1), h, w}, std::move(out));
}

/// Aspect-preserving resize so the shorter side equals `size`, then a
/// centred square crop.
inline Tensor fit_square(const Tensor& image, std::size_t size) {
  const std::size_t h = image.dim(2), w = image.dim(3);
  std::size_t nh = size, nw = size;
  if (h < w)
    nw = std::max(size, static_cast<std::size_t>(std::lround(double(w) * size / h)));
  else
    nh = std::max(size, static_cast<std::size_t>(std::lround(double(h) * size / w)));
  Tensor r = (nh == h && nw == w) ? image : bilinear_resize(image, nh, nw);
  return crop(r, (nh - size) / 2, (nw - size) / 2, size, size);
}

/// Stacks single images into one batch.
inline Tensor stack_images(const std::vector<Tensor>& images) {
  require<ContractError>(!images.empty(), "stack_images: no images");
  const Shape& s = images.front().shape();
  std::vector<float> out;
  out.reserve(images.size() * images.front().numel());
  for (const auto& im : images) {
    require<ShapeError>(im.rank() == 4 && im.dim(1) == s[1] && im.dim(2) == s[2] && im.dim(3) == s[3],
                        "stack_images: shape ", to_string(im.shape()), " differs from ", to_string(s));
    out.insert(out.end(), im.data().begin(), im.data().end());
  }
  std::size_t n = out.size() / (s[1] * s[2] * s[3]);
  return Tensor::from({n, s[1], s[2], s[3]}, std::move(out));
}

/// Sample `index` of a batch as a 1 x C x H x W tensor.
inline Tensor sample_of(const Tensor& batch, std::size_t index) {
  const std::size_t per = batch.numel() / batch.dim(0);
  std::vector<float> out(batch.data().begin() + index * per, batch.data().begin() + (index + 1) * per);
  return Tensor::from({1, batch.dim(1), batch.dim(2), batch.dim(3)}, std::move(out));
}

/// Resizes every image to `height` (keeping aspect) and joins them left to right.
inline Tensor concat_horizontal(const std::vector<Tensor>& images, std::size_t height) {
  require<ContractError>(!images.empty(), "concat_horizontal: no images");
  std::vector<Tensor> parts;
  std::size_t total_w = 0;
  for (const auto& im : images) {
    std::size_t w = std::max<std::size_t>(1, std::lround(double(im.dim(3)) * height / im.dim(2)));
    parts.push_back(im.dim(2) == height && im.dim(3) == w ? im : bilinear_resize(im, height, w));
    total_w += w;
  }
  std::vector<float> out(3 * height * total_w);
  std::size_t x0 = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.dim(3);
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < height; ++y)
        std::copy_n(p.data().begin() + (c * height + y) * w, w, out.begin() + (c * height + y) * total_w + x0);
    x0 += w;
  }
  return Tensor::from({1, 3, height, total_w}, std::move(out));
}

}  // namespace adaattn
