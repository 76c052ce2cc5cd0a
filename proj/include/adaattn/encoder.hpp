// Copyright (C) 2026 The adaattn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "adaattn/blob.hpp"
#include "adaattn/core.hpp"

namespace adaattn {

enum class EncoderProfile { full, tiny };

inline std::string to_string(EncoderProfile p) { return p == EncoderProfile::full ? "full" : "tiny"; }

inline EncoderProfile parse_profile(const std::string& name) {
  if (name == "full") return EncoderProfile::full;
  if (name == "tiny") return EncoderProfile::tiny;
  raise<ConfigError>("unknown encoder profile '", name, "' (expected full or tiny)");
}

inline constexpr int kNumTaps = 5;
inline constexpr std::uint64_t kTinyEncoderSeed = 0x5EED0001;

/// Channels at ReLU-1_1 .. ReLU-5_1.
inline std::array<std::size_t, kNumTaps> channel_plan(EncoderProfile p) {
  if (p == EncoderProfile::full) return {64, 128, 256, 512, 512};
  return {8, 16, 32, 64, 64};
}

struct ConvSpec {
  std::string name;
  std::size_t in_channels, out_channels;
  int tap;           // 1..5 if the ReLU after this conv is a feature tap, else 0
  bool pool_before;  // 2x2 max-pool precedes this conv
};

/// The VGG-19 convolution stack up to and including conv5_1.
inline std::vector<ConvSpec> encoder_layout(EncoderProfile p) {
  const auto ch = channel_plan(p);
  const int convs_per_block[] = {2, 2, 4, 4, 1};
  std::vector<ConvSpec> layers;
  std::size_t in = 3;
  for (int block = 0; block < kNumTaps; ++block)
    for (int i = 0; i < convs_per_block[block]; ++i) {
      layers.push_back({"conv" + std::to_string(block + 1) + "_" + std::to_string(i + 1), in,
                        ch[block], i == 0 ? block + 1 : 0, i == 0 && block > 0});
      in = ch[block];
    }
  return layers;
}

struct ConvLayer {
  std::string name;
  Tensor weight;  // O x C x 3 x 3
  Tensor bias;    // O
};

/// Frozen encoder parameters. Weights never require gradients.
struct EncoderWeights {
  EncoderProfile profile = EncoderProfile::tiny;
  std::vector<ConvLayer> layers;
};

/// Five feature taps F1..F5 of one batch of images.
struct FeatureStack {
  std::array<Tensor, kNumTaps> taps;

  const Tensor& tap(int x) const {
    require<ContractError>(x >= 1 && x <= kNumTaps, "tap index ", x, " out of range 1..5");
    return taps[x - 1];
  }
};

/// Kaiming-normal (fan-in) initialized encoder with zero biases.
inline EncoderWeights random_encoder(EncoderProfile profile, std::uint64_t seed) {
  Rng rng(seed);
  EncoderWeights w{profile, {}};
  for (const auto& spec : encoder_layout(profile)) {
    float stddev = std::sqrt(2.0f / static_cast<float>(spec.in_channels * 9));
    w.layers.push_back({spec.name, randn({spec.out_channels, spec.in_channels, 3, 3}, rng, stddev),
                        Tensor::zeros({spec.out_channels})});
  }
  return w;
}

inline EncoderWeights tiny_encoder() { return random_encoder(EncoderProfile::tiny, kTinyEncoderSeed); }

inline BlobFile encoder_to_blob(const EncoderWeights& w) {
  BlobFile file;
  file.kind = "encoder";
  file.set_meta("profile", to_string(w.profile));
  for (const auto& layer : w.layers) {
    file.tensors.push_back({layer.name + ".weight", layer.weight.shape(),
                            {layer.weight.data().begin(), layer.weight.data().end()}});
    file.tensors.push_back(
        {layer.name + ".bias", layer.bias.shape(), {layer.bias.data().begin(), layer.bias.data().end()}});
  }
  return file;
}

/// Validates names and shapes against the declared profile's architecture.
inline EncoderWeights encoder_from_blob(const BlobFile& file) {
  require<ManifestError>(file.kind == "encoder", "manifest kind is '", file.kind, "', expected 'encoder'");
  EncoderWeights w{parse_profile(file.meta_at("profile")), {}};
  auto layout = encoder_layout(w.profile);
  require<ManifestError>(file.tensors.size() == 2 * layout.size(), "manifest has ", file.tensors.size(),
                         " tensors, architecture needs ", 2 * layout.size());
  std::size_t i = 0;
  for (const auto& spec : layout) {
    Shape wshape{spec.out_channels, spec.in_channels, 3, 3};
    Shape bshape{spec.out_channels};
    const auto& wt = file.tensors[i++];
    const auto& bt = file.tensors[i++];
    require<ManifestError>(wt.name == spec.name + ".weight", "expected tensor '", spec.name,
                           ".weight', found '", wt.name, "'");
    require<ManifestError>(wt.shape == wshape, "layer ", spec.name, ": weight shape ", to_string(wt.shape),
                           " does not match architecture ", to_string(wshape));
    require<ManifestError>(bt.name == spec.name + ".bias", "expected tensor '", spec.name,
                           ".bias', found '", bt.name, "'");
    require<ManifestError>(bt.shape == bshape, "layer ", spec.name, ": bias shape ", to_string(bt.shape),
                           " does not match architecture ", to_string(bshape));
    w.layers.push_back({spec.name, Tensor::from(wshape, wt.values), Tensor::from(bshape, bt.values)});
  }
  return w;
}

inline void save_encoder_weights(const std::filesystem::path& path, const EncoderWeights& w) {
  write_blob_file(path, encoder_to_blob(w));
}

/// Loads an encoder weight manifest. Checksums are verified per tensor.
inline EncoderWeights load_weights(const std::filesystem::path& path) {
  return encoder_from_blob(read_blob_file(path));
}

/// Runs the frozen encoder and returns the five ReLU-x_1 taps.
/// Height and width must be divisible by 16.
inline FeatureStack encode(const Tensor& image, const EncoderWeights& w) {
  require<ShapeError>(image.rank() == 4 && image.dim(1) == 3, "encode: expected N x 3 x H x W, got ",
                      to_string(image.shape()));
  require<ShapeError>(image.dim(2) % 16 == 0 && image.dim(3) % 16 == 0, "encode: image size ",
                      image.dim(2), "x", image.dim(3), " is not divisible by 16");
  auto layout = encoder_layout(w.profile);
  require<ContractError>(layout.size() == w.layers.size(), "encoder weights are incomplete");
  FeatureStack stack;
  Tensor x = image;
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (layout[i].pool_before) x = max_pool2x2(x);
    x = relu(conv2d(x, w.layers[i].weight, w.layers[i].bias, Padding::zero));
    if (layout[i].tap) stack.taps[layout[i].tap - 1] = x;
  }
  return stack;
}

}  // namespace adaattn
