// Copyright (C) 2026 The adaattn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "adaattn/core.hpp"

namespace adaattn {

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second moment buffers, one per parameter, plus the step count.
struct AdamState {
  std::int64_t step = 0;
  std::vector<std::vector<float>> first;
  std::vector<std::vector<float>> second;
};

/// One bias-corrected Adam update of the leaf tensors in `params`, in place.
/// A parameter without a gradient is treated as having a zero gradient.
/// Any non-finite gradient aborts before anything is modified.
inline void adam_step(std::vector<Tensor>& params, AdamState& state, const AdamConfig& cfg,
                      const std::vector<std::string>& names = {}) {
  if (state.first.empty() && state.second.empty()) {
    for (const auto& p : params) {
      state.first.emplace_back(p.numel(), 0.0f);
      state.second.emplace_back(p.numel(), 0.0f);
    }
  }
  require<ContractError>(state.first.size() == params.size() && state.second.size() == params.size(),
                         "adam: state holds ", state.first.size(), " buffers for ", params.size(), " parameters");
  for (std::size_t k = 0; k < params.size(); ++k) {
    require<ContractError>(state.first[k].size() == params[k].numel() && state.second[k].size() == params[k].numel(),
                           "adam: moment buffer ", k, " does not match parameter shape ",
                           to_string(params[k].shape()));
    if (!params[k].has_grad()) continue;
    const auto& g = params[k].grad();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (!std::isfinite(g[i]))
        raise<NumericError>("adam: non-finite gradient ", g[i], " in parameter ",
                            k < names.size() ? "'" + names[k] + "'" : std::to_string(k), " at element ", i,
                            " (step ", state.step + 1, ")");
  }

  const std::int64_t t = ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, double(t));
  const double c2 = 1.0 - std::pow(cfg.beta2, double(t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto data = params[k].mutable_data();
    auto& m = state.first[k];
    auto& v = state.second[k];
    const bool has = params[k].has_grad();
    for (std::size_t i = 0; i < data.size(); ++i) {
      double g = has ? params[k].grad()[i] : 0.0;
      double mi = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
      double vi = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      double update = cfg.learning_rate * (mi / c1) / (std::sqrt(vi / c2) + cfg.eps);
      data[i] = static_cast<float>(data[i] - update);
    }
  }
}

}  // namespace adaattn
