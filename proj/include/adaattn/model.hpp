// Copyright (C) 2026 The adaattn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "adaattn/attention.hpp"
#include "adaattn/config.hpp"
#include "adaattn/core.hpp"
#include "adaattn/decoder.hpp"
#include "adaattn/encoder.hpp"
#include "adaattn/optim.hpp"

namespace adaattn {

/// Taps that carry an attention module.
inline constexpr std::array<int, 3> kAttentionTaps = {3, 4, 5};

/// Everything a checkpoint holds: frozen encoder, three attention modules,
/// decoder, optimizer state and the configuration they were trained with.
struct ModelBundle {
  TrainConfig config;
  EncoderWeights encoder;
  std::string encoder_ref;  // "tiny" or a manifest path
  std::array<AdaAttNParams, 3> attention;
  DecoderWeights decoder;
  AdamState optimizer;

  EncoderProfile profile() const { return encoder.profile; }

  void for_each_parameter(const std::function<void(const std::string&, Tensor&)>& fn) {
    static const char* const kNames[] = {"f_weight", "f_bias", "g_weight", "g_bias", "h_weight", "h_bias"};
    for (std::size_t m = 0; m < attention.size(); ++m) {
      auto ps = attention[m].parameters();
      for (std::size_t i = 0; i < ps.size(); ++i)
        fn("attn" + std::to_string(kAttentionTaps[m]) + "." + kNames[i], *ps[i]);
    }
    for (auto& l : decoder.layers) {
      fn("decoder." + l.name + ".weight", l.weight);
      fn("decoder." + l.name + ".bias", l.bias);
    }
  }

  std::vector<std::pair<std::string, Tensor>> named_parameters() const {
    std::vector<std::pair<std::string, Tensor>> out;
    const_cast<ModelBundle*>(this)->for_each_parameter(
        [&](const std::string& name, Tensor& t) { out.emplace_back(name, t); });
    return out;
  }

  std::vector<Tensor> parameters() const {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_parameters()) out.push_back(t);
    return out;
  }
};

inline std::pair<EncoderWeights, std::string> encoder_for(const TrainConfig& cfg) {
  auto profile = parse_profile(cfg.profile);
  if (profile == EncoderProfile::tiny) return {tiny_encoder(), "tiny"};
  require<ConfigError>(!cfg.encoder_weights.empty(), "the full profile needs encoder_weights (a manifest path)");
  auto w = load_weights(cfg.encoder_weights);
  require<ConfigError>(w.profile == EncoderProfile::full, "manifest ", cfg.encoder_weights,
                       " is not a full-profile encoder");
  return {std::move(w), cfg.encoder_weights};
}

/// Fresh trainable parameters drawn from the config seed.
inline ModelBundle make_bundle(const TrainConfig& cfg, EncoderWeights encoder, std::string encoder_ref) {
  cfg.validate();
  ModelBundle b;
  b.config = cfg;
  b.encoder = std::move(encoder);
  b.encoder_ref = std::move(encoder_ref);
  Rng rng(cfg.seed);
  auto plan = channel_plan(b.encoder.profile);
  for (std::size_t m = 0; m < kAttentionTaps.size(); ++m) {
    int x = kAttentionTaps[m];
    b.attention[m] = init_adaattn_params(qk_dim_for(b.encoder.profile, x), plan[x - 1], rng);
  }
  b.decoder = random_decoder(plan, rng);
  for (const auto& [name, t] : b.named_parameters()) {
    b.optimizer.first.emplace_back(t.numel(), 0.0f);
    b.optimizer.second.emplace_back(t.numel(), 0.0f);
  }
  return b;
}

inline ModelBundle make_bundle(const TrainConfig& cfg) {
  auto [w, ref] = encoder_for(cfg);
  return make_bundle(cfg, std::move(w), std::move(ref));
}

/// Per-tap attention outputs (attention map, mean and std maps) for taps 3..5.
inline std::array<AttentionOutput, 3> attention_statistics(const ModelBundle& b, const FeatureStack& c,
                                                           const FeatureStack& s, const AttentionConfig& cfg) {
  std::array<AttentionOutput, 3> out;
  for (std::size_t m = 0; m < kAttentionTaps.size(); ++m) {
    int x = kAttentionTaps[m];
    out[m] = adaattn_statistics(c.tap(x), s.tap(x), multiscale_concat(c, x), multiscale_concat(s, x),
                                b.attention[m], cfg);
  }
  return out;
}

/// The three stylized taps fed to the decoder.
inline std::array<Tensor, 3> stylized_taps(const ModelBundle& b, const FeatureStack& c, const FeatureStack& s,
                                           const AttentionConfig& cfg) {
  auto stats = attention_statistics(b, c, s, cfg);
  std::array<Tensor, 3> out;
  for (std::size_t m = 0; m < 3; ++m)
    out[m] = adaattn_apply(c.tap(kAttentionTaps[m]), stats[m].mean, stats[m].std);
  return out;
}

inline Tensor decode_taps(const ModelBundle& b, const std::array<Tensor, 3>& taps) {
  return decode(taps[0], taps[1], taps[2], b.decoder);
}

/// Stylized image for content and style batches of equal batch size.
inline Tensor generate(const ModelBundle& b, const Tensor& content, const Tensor& style, const AttentionConfig& cfg) {
  FeatureStack c, s;
  {
    NoGradGuard no_grad;
    c = encode(content, b.encoder);
    s = encode(style, b.encoder);
  }
  return decode_taps(b, stylized_taps(b, c, s, cfg));
}

}  // namespace adaattn
