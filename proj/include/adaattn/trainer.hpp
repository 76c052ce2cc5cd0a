// Copyright (C) 2026 The adaattn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "adaattn/blob.hpp"
#include "adaattn/data.hpp"
#include "adaattn/losses.hpp"
#include "adaattn/model.hpp"

namespace adaattn {

inline constexpr int kCheckpointVersion = 1;

struct LossReport {
  std::int64_t step = 0;  // optimizer step count after the update
  float total = 0.0f;
  float global = 0.0f;
  float local = 0.0f;
  float similarity = 0.0f;
  bool has_similarity = false;
};

namespace detail {

inline std::string join(const std::vector<std::string>& v) {
  std::string out;
  for (const auto& s : v) out += (out.empty() ? "" : ",") + s;
  return out;
}

/// L_gs and L_lf of one frame.
inline LossParts frame_losses(const ModelBundle& b, const Tensor& content, const FeatureStack& c,
                              const FeatureStack& s, const AttentionConfig& acfg, FeatureStack& cs_out) {
  Tensor image = decode_taps(b, stylized_taps(b, c, s, acfg));
  cs_out = encode(image, b.encoder);
  (void)content;
  return image_losses(cs_out, c, s, acfg, {.vanilla_content = b.config.vanilla_content});
}

}  // namespace detail

/// Forward, backward and one Adam update of the attention modules and the decoder.
inline LossReport train_iteration(ModelBundle& b, const Batch& batch) {
  const auto& cfg = b.config;
  const bool video = cfg.mode == TrainMode::video;
  require<ContractError>(!video || batch.content_next.defined(), "video training needs frame pairs in the batch");
  auto named = b.named_parameters();
  std::vector<Tensor> params;
  std::vector<std::string> names;
  for (auto& [name, t] : named) {
    t.zero_grad();
    params.push_back(t);
    names.push_back(name);
  }
  AttentionConfig acfg{.mode = cfg.attention_mode()};
  LossWeights weights{cfg.lambda_global, cfg.lambda_local, cfg.lambda_similarity};

  FeatureStack c1, c2, s;
  {
    NoGradGuard no_grad;
    c1 = encode(batch.content, b.encoder);
    s = encode(batch.style, b.encoder);
    if (video) c2 = encode(batch.content_next, b.encoder);
  }
  FeatureStack cs1, cs2;
  LossParts parts = detail::frame_losses(b, batch.content, c1, s, acfg, cs1);
  if (video) {
    LossParts second = detail::frame_losses(b, batch.content_next, c2, s, acfg, cs2);
    parts.global = scale(add(parts.global, second.global), 0.5f);
    parts.local = scale(add(parts.local, second.local), 0.5f);
    parts.similarity = cross_image_similarity_loss(c1, c2, cs1, cs2);
  }
  Tensor total = combine_losses(parts, weights);

  LossReport report;
  report.total = total.item();
  report.global = parts.global.item();
  report.local = parts.local.item();
  report.has_similarity = parts.similarity.defined();
  if (report.has_similarity) report.similarity = parts.similarity.item();
  if (!std::isfinite(report.total))
    raise<NumericError>("non-finite loss ", report.total, " at step ", b.optimizer.step + 1, " (seed ", cfg.seed,
                        ", content ", detail::join(batch.content_ids), ", style ", detail::join(batch.style_ids),
                        ")");

  backward(total);
  adam_step(params, b.optimizer, {cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps}, names);
  report.step = b.optimizer.step;
  return report;
}

// Checkpoints

inline std::string encoder_checksum(const EncoderWeights& w) {
  char buf[9];
  std::snprintf(buf, sizeof buf, "%08x", detail::crc32_of(serialize_blob(encoder_to_blob(w))));
  return buf;
}

inline BlobFile checkpoint_to_blob(const ModelBundle& b) {
  BlobFile file;
  file.kind = "checkpoint";
  file.set_meta("checkpoint_version", std::to_string(kCheckpointVersion));
  file.set_meta("profile", to_string(b.profile()));
  file.set_meta("encoder_ref", b.encoder_ref);
  file.set_meta("encoder_crc", encoder_checksum(b.encoder));
  file.set_meta("step", std::to_string(b.optimizer.step));
  file.set_meta("config", json(b.config).dump());
  auto named = b.named_parameters();
  for (const auto& [name, t] : named) file.tensors.push_back({name, t.shape(), {t.data().begin(), t.data().end()}});
  for (std::size_t i = 0; i < named.size(); ++i) {
    file.tensors.push_back({"adam.m." + named[i].first, named[i].second.shape(), b.optimizer.first[i]});
    file.tensors.push_back({"adam.v." + named[i].first, named[i].second.shape(), b.optimizer.second[i]});
  }
  return file;
}

inline void save_checkpoint(const ModelBundle& b, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  write_blob_file(path, checkpoint_to_blob(b));
}

/// Rebuilds a bundle; the encoder is re-derived from its reference unless
/// one is supplied, and must match the recorded checksum.
inline ModelBundle checkpoint_from_blob(const BlobFile& file, std::optional<EncoderWeights> encoder = std::nullopt) {
  require<ManifestError>(file.kind == "checkpoint", "file kind is '", file.kind, "', expected 'checkpoint'");
  const std::string& version = file.meta_at("checkpoint_version");
  require<VersionError>(version == std::to_string(kCheckpointVersion), "unsupported checkpoint version ", version,
                        " (expected ", kCheckpointVersion, ")");
  TrainConfig cfg;
  try {
    cfg = json::parse(file.meta_at("config")).get<TrainConfig>();
  } catch (const json::exception& e) {
    raise<IntegrityError>("checkpoint config is unreadable: ", e.what());
  }
  std::string ref = file.meta_at("encoder_ref");
  if (!encoder) {
    TrainConfig enc_cfg = cfg;
    if (ref != "tiny") enc_cfg.encoder_weights = ref;
    encoder = encoder_for(enc_cfg).first;
  }
  require<IntegrityError>(encoder_checksum(*encoder) == file.meta_at("encoder_crc"),
                          "encoder weights do not match the checkpoint (reference '", ref, "')");
  ModelBundle b = make_bundle(cfg, std::move(*encoder), ref);
  std::size_t i = 0;
  b.for_each_parameter([&](const std::string& name, Tensor& t) {
    auto fetch = [&](const std::string& key) {
      const BlobEntry* e = file.find(key);
      require<ManifestError>(e != nullptr, "checkpoint lacks tensor '", key, "'");
      require<ManifestError>(e->shape == t.shape(), "checkpoint tensor '", key, "' has shape ", to_string(e->shape),
                             ", model needs ", to_string(t.shape()));
      return e->values;
    };
    t = Tensor::from(t.shape(), fetch(name), true);
    b.optimizer.first[i] = fetch("adam.m." + name);
    b.optimizer.second[i] = fetch("adam.v." + name);
    ++i;
  });
  b.optimizer.step = std::stoll(file.meta_at("step"));
  return b;
}

inline ModelBundle load_checkpoint(const std::filesystem::path& path,
                                   std::optional<EncoderWeights> encoder = std::nullopt) {
  return checkpoint_from_blob(read_blob_file(path), std::move(encoder));
}

// Training loop

struct TrainingData {
  ImageSet content;
  ImageSet style;
  std::optional<ClipSet> clips;  // video mode: content_dir holds one subdirectory per clip
};

inline TrainingData load_training_data(const TrainConfig& cfg) {
  require<ConfigError>(!cfg.content_dir.empty() && !cfg.style_dir.empty(), "content_dir and style_dir are required");
  TrainingData d;
  d.style = load_image_set(cfg.style_dir, cfg.load_size);
  if (cfg.mode == TrainMode::video)
    d.clips = load_clip_set(cfg.content_dir, cfg.load_size);
  else
    d.content = load_image_set(cfg.content_dir, cfg.load_size);
  return d;
}

inline Batch batch_for_step(const ModelBundle& b, const TrainingData& data, std::int64_t step) {
  Rng rng = batch_rng(b.config.seed, step);
  SamplerConfig sc{b.config.batch_size, b.config.crop_size, b.config.video_window};
  if (b.config.mode == TrainMode::video) {
    require<ConfigError>(data.clips.has_value(), "video training needs clip data");
    return sample_video_batch(*data.clips, data.style, sc, rng);
  }
  return sample_batch(data.content, data.style, sc, rng);
}

/// Runs iterations until the optimizer step count reaches `until`. Batches
/// depend only on (seed, step), so a reloaded checkpoint continues exactly.
inline std::vector<LossReport> train(ModelBundle& b, const TrainingData& data, std::int64_t until,
                                     const std::function<void(const LossReport&)>& on_step = {}) {
  std::vector<LossReport> reports;
  while (b.optimizer.step < until) {
    auto report = train_iteration(b, batch_for_step(b, data, b.optimizer.step));
    if (on_step) on_step(report);
    reports.push_back(report);
  }
  return reports;
}

}  // namespace adaattn
