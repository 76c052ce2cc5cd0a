// Copyright (C) 2026 The adaattn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cctype>
#include <cstdint>
#include <filesystem>
#include <string>

#include "json.hpp"

#include "adaattn/attention.hpp"
#include "adaattn/blob.hpp"
#include "adaattn/core.hpp"

namespace adaattn {

using json = nlohmann::json;

enum class TrainMode { image, video };

inline std::string to_string(TrainMode m) { return m == TrainMode::image ? "image" : "video"; }

inline TrainMode parse_train_mode(const std::string& s) {
  if (s == "image") return TrainMode::image;
  if (s == "video") return TrainMode::video;
  raise<ConfigError>("unknown training mode '", s, "' (expected image or video)");
}

struct TrainConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::int64_t iterations = 200;
  std::size_t batch_size = 2;
  std::size_t crop_size = 64;
  std::size_t load_size = 64;
  TrainMode mode = TrainMode::image;
  std::uint64_t seed = 1;
  std::string profile = "tiny";
  std::string encoder_weights;  // manifest path; required for the full profile
  std::string attention;        // softmax | cosine; empty picks by mode
  float lambda_global = 10.0f;
  float lambda_local = 3.0f;
  float lambda_similarity = 100.0f;
  int video_window = 5;
  bool vanilla_content = false;
  std::string content_dir;
  std::string style_dir;

  AttentionMode attention_mode() const {
    if (!attention.empty()) return parse_attention_mode(attention);
    return mode == TrainMode::video ? AttentionMode::cosine : AttentionMode::softmax;
  }

  void validate() const {
    require<ConfigError>(learning_rate > 0 && beta1 > 0 && beta1 < 1 && beta2 > 0 && beta2 < 1 && adam_eps > 0,
                         "optimizer settings out of range");
    require<ConfigError>(iterations > 0 && batch_size > 0 && crop_size > 0 && load_size > 0,
                         "iterations, batch_size, crop_size and load_size must be positive");
    require<ConfigError>(crop_size <= load_size, "crop_size ", crop_size, " exceeds load_size ", load_size);
    require<ConfigError>(crop_size % 16 == 0, "crop_size ", crop_size, " is not a multiple of 16");
    require<ConfigError>(lambda_global >= 0 && lambda_local >= 0 && lambda_similarity >= 0,
                         "loss weights must be nonnegative");
    require<ConfigError>(video_window >= 1, "video_window must be at least 1");
    parse_profile(profile);
    attention_mode();
  }
};

inline void to_json(json& j, const TrainConfig& c) {
  j = json{{"learning_rate", c.learning_rate},
           {"beta1", c.beta1},
           {"beta2", c.beta2},
           {"adam_eps", c.adam_eps},
           {"iterations", c.iterations},
           {"batch_size", c.batch_size},
           {"crop_size", c.crop_size},
           {"load_size", c.load_size},
           {"mode", to_string(c.mode)},
           {"seed", c.seed},
           {"profile", c.profile},
           {"encoder_weights", c.encoder_weights},
           {"attention", c.attention},
           {"lambda_global", c.lambda_global},
           {"lambda_local", c.lambda_local},
           {"lambda_similarity", c.lambda_similarity},
           {"video_window", c.video_window},
           {"vanilla_content", c.vanilla_content},
           {"content_dir", c.content_dir},
           {"style_dir", c.style_dir}};
}

/// Unknown keys are rejected so typos do not silently fall back to defaults.
inline void from_json(const json& j, TrainConfig& c) {
  require<ConfigError>(j.is_object(), "config must be an object");
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "learning_rate") c.learning_rate = value.get<double>();
      else if (key == "beta1") c.beta1 = value.get<double>();
      else if (key == "beta2") c.beta2 = value.get<double>();
      else if (key == "adam_eps") c.adam_eps = value.get<double>();
      else if (key == "iterations") c.iterations = value.get<std::int64_t>();
      else if (key == "batch_size") c.batch_size = value.get<std::size_t>();
      else if (key == "crop_size") c.crop_size = value.get<std::size_t>();
      else if (key == "load_size") c.load_size = value.get<std::size_t>();
      else if (key == "mode") c.mode = parse_train_mode(value.get<std::string>());
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else if (key == "profile") c.profile = value.get<std::string>();
      else if (key == "encoder_weights") c.encoder_weights = value.get<std::string>();
      else if (key == "attention") c.attention = value.get<std::string>();
      else if (key == "lambda_global") c.lambda_global = value.get<float>();
      else if (key == "lambda_local") c.lambda_local = value.get<float>();
      else if (key == "lambda_similarity") c.lambda_similarity = value.get<float>();
      else if (key == "video_window") c.video_window = value.get<int>();
      else if (key == "vanilla_content") c.vanilla_content = value.get<bool>();
      else if (key == "content_dir") c.content_dir = value.get<std::string>();
      else if (key == "style_dir") c.style_dir = value.get<std::string>();
      else raise<ConfigError>("unknown config key '", key, "'");
    } catch (const json::exception& e) {
      raise<ConfigError>("config key '", key, "': ", e.what());
    }
  }
}

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r"), b = s.find_last_not_of(" \t\r");
  return a == std::string::npos ? "" : s.substr(a, b - a + 1);
}

/// `key = value` lines; '#' starts a comment; [sections] are ignored. Values
/// are JSON scalars when they parse as such, otherwise bare strings.
inline json parse_key_values(const std::string& text, const std::string& origin) {
  json out = json::object();
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty() || line.front() == '[') continue;
    auto eq = line.find('=');
    require<ConfigError>(eq != std::string::npos, origin, ":", lineno, ": expected key = value");
    std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    json parsed = json::parse(value, nullptr, false);
    out[key] = parsed.is_discarded() ? json(value) : parsed;
  }
  return out;
}

}  // namespace detail

/// Reads a JSON object or key = value file into a JSON object.
inline json read_config_file(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_file_bytes(path);
  } catch (const IoError& e) {
    raise<ConfigError>("cannot read config ", path.string(), ": ", e.what());
  }
  auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '{') {
    json j = json::parse(text, nullptr, false);
    require<ConfigError>(!j.is_discarded() && j.is_object(), "config ", path.string(), " is not a JSON object");
    return j;
  }
  return detail::parse_key_values(text, path.string());
}

}  // namespace adaattn
