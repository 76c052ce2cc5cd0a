// Copyright (C) 2026 The adaattn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "adaattn/blob.hpp"
#include "adaattn/core.hpp"
#include "adaattn/encoder.hpp"

// Decoder stages, each named after the tap grid it starts from:
//   stage5: up(F5) + F4, conv c4 -> c4
//   stage4: conv c4 -> c3, up
//   stage3: concat F3, conv 2c3 -> c3, conv c3 -> c3 (x2), conv c3 -> c2, up
//   stage2: conv c2 -> c2, conv c2 -> c1, up
//   stage1: conv c1 -> c1, conv c1 -> 3 (no activation)
// All convs are 3x3 with reflect padding.

namespace adaattn {

using ChannelPlan = std::array<std::size_t, kNumTaps>;

struct DecoderConvSpec {
  std::string name;
  std::size_t in_channels, out_channels;
  bool relu;
  bool upsample_after;
  int stage;  // 5..1
};

inline std::vector<DecoderConvSpec> decoder_layout(const ChannelPlan& c) {
  return {
      {"stage5.conv1", c[3], c[3], true, false, 5},
      {"stage4.conv1", c[3], c[2], true, true, 4},
      {"stage3.conv1", 2 * c[2], c[2], true, false, 3},
      {"stage3.conv2", c[2], c[2], true, false, 3},
      {"stage3.conv3", c[2], c[2], true, false, 3},
      {"stage3.conv4", c[2], c[1], true, true, 3},
      {"stage2.conv1", c[1], c[1], true, false, 2},
      {"stage2.conv2", c[1], c[0], true, true, 2},
      {"stage1.conv1", c[0], c[0], true, false, 1},
      {"stage1.conv2", c[0], 3, false, false, 1},
  };
}

/// Trainable decoder parameters.
struct DecoderWeights {
  ChannelPlan plan{};
  std::vector<ConvLayer> layers;

  std::vector<Tensor> parameters() const {
    std::vector<Tensor> out;
    for (const auto& l : layers) {
      out.push_back(l.weight);
      out.push_back(l.bias);
    }
    return out;
  }
};

/// He-normal kernels, zero biases; all tensors require gradients.
inline DecoderWeights random_decoder(const ChannelPlan& plan, Rng& rng) {
  DecoderWeights w{plan, {}};
  for (const auto& spec : decoder_layout(plan)) {
    float stddev = std::sqrt(2.0f / static_cast<float>(spec.in_channels * 9));
    w.layers.push_back({spec.name, randn({spec.out_channels, spec.in_channels, 3, 3}, rng, stddev, true),
                        Tensor::zeros({spec.out_channels}, true)});
  }
  return w;
}

struct DecodeTrace {
  std::array<Tensor, kNumTaps> stages;  // outputs of stage5 .. stage1
  Tensor image;
};

inline DecodeTrace decode_traced(const Tensor& f3, const Tensor& f4, const Tensor& f5, const DecoderWeights& w) {
  const auto& c = w.plan;
  auto check = [](const Tensor& t, std::size_t ch, const char* name) {
    require<ShapeError>(t.rank() == 4 && t.dim(1) == ch, "decode: ", name, " has shape ", to_string(t.shape()),
                        ", expected ", ch, " channels");
  };
  check(f3, c[2], "tap-3 input");
  check(f4, c[3], "tap-4 input");
  check(f5, c[4], "tap-5 input");
  require<ShapeError>(f3.dim(0) == f4.dim(0) && f4.dim(0) == f5.dim(0), "decode: batch sizes differ");
  require<ShapeError>(f4.dim(2) == 2 * f5.dim(2) && f4.dim(3) == 2 * f5.dim(3) && f3.dim(2) == 2 * f4.dim(2) &&
                          f3.dim(3) == 2 * f4.dim(3),
                      "decode: tap grids ", to_string(f3.shape()), ", ", to_string(f4.shape()), ", ",
                      to_string(f5.shape()), " do not halve from tap to tap");
  auto layout = decoder_layout(c);
  require<ContractError>(w.layers.size() == layout.size(), "decoder weights are incomplete");

  DecodeTrace trace;
  Tensor x = add(upsample_nearest2x(f5), f4);
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const auto& spec = layout[i];
    if (i == 2) x = concat_channels({x, f3});
    x = conv2d(x, w.layers[i].weight, w.layers[i].bias, Padding::reflect);
    if (spec.relu) x = relu(x);
    if (spec.upsample_after) x = upsample_nearest2x(x);
    if (i + 1 == layout.size() || layout[i + 1].stage != spec.stage) trace.stages[5 - spec.stage] = x;
  }
  trace.image = x;
  return trace;
}

/// Image from the three stylized taps: N x 3 x 4*H3 x 4*W3. No output clamp.
inline Tensor decode(const Tensor& f3, const Tensor& f4, const Tensor& f5, const DecoderWeights& w) {
  return decode_traced(f3, f4, f5, w).image;
}

inline void append_decoder(BlobFile& file, const DecoderWeights& w, const std::string& prefix = "decoder.") {
  for (const auto& l : w.layers) {
    file.tensors.push_back({prefix + l.name + ".weight", l.weight.shape(),
                            {l.weight.data().begin(), l.weight.data().end()}});
    file.tensors.push_back({prefix + l.name + ".bias", l.bias.shape(), {l.bias.data().begin(), l.bias.data().end()}});
  }
}

inline DecoderWeights decoder_from_blob(const BlobFile& file, const ChannelPlan& plan,
                                        const std::string& prefix = "decoder.") {
  DecoderWeights w{plan, {}};
  for (const auto& spec : decoder_layout(plan)) {
    Shape wshape{spec.out_channels, spec.in_channels, 3, 3}, bshape{spec.out_channels};
    auto fetch = [&](const std::string& suffix, const Shape& shape) {
      std::string name = prefix + spec.name + suffix;
      const BlobEntry* e = file.find(name);
      require<ManifestError>(e != nullptr, "missing tensor '", name, "'");
      require<ManifestError>(e->shape == shape, "layer ", spec.name, ": shape ", to_string(e->shape),
                             " does not match architecture ", to_string(shape));
      return Tensor::from(shape, e->values, true);
    };
    w.layers.push_back({spec.name, fetch(".weight", wshape), fetch(".bias", bshape)});
  }
  return w;
}

}  // namespace adaattn
