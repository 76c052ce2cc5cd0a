// Copyright (C) 2026 The adaattn Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "adaattn/trainer.hpp"

namespace adaattn {
namespace {

namespace fs = std::filesystem;

fs::path temp_path(const std::string& name) {
  auto dir = fs::temp_directory_path() / "adaattn_trainer_test";
  fs::create_directories(dir);
  return dir / name;
}

TrainConfig small_config(std::uint64_t seed = 1) {
  TrainConfig cfg;
  cfg.seed = seed;
  cfg.crop_size = 32;
  cfg.load_size = 32;
  cfg.batch_size = 2;
  return cfg;
}

Batch small_batch(std::uint64_t seed, bool video = false) {
  std::vector<Tensor> c, s, n;
  for (std::size_t i = 0; i < 2; ++i) {
    c.push_back(desk_content_image(i, 32, seed));
    s.push_back(desk_style_image(i + 1, 32, seed));
    n.push_back(desk_content_image(i, 32, seed + 100));
  }
  Batch b{stack_images(c), stack_images(s), video ? stack_images(n) : Tensor(), {"c0", "c1"}, {"s0", "s1"}};
  return b;
}

std::vector<float> flat(const std::vector<Tensor>& ts) {
  std::vector<float> out;
  for (const auto& t : ts) out.insert(out.end(), t.data().begin(), t.data().end());
  return out;
}

std::vector<float> encoder_bytes(const ModelBundle& b) {
  std::vector<Tensor> ts;
  for (const auto& l : b.encoder.layers) {
    ts.push_back(l.weight);
    ts.push_back(l.bias);
  }
  return flat(ts);
}

TEST(ModelBundle, TrainableParametersAreAttentionAndDecoder) {
  auto bundle = make_bundle(small_config());
  auto named = bundle.named_parameters();
  // 3 attention modules x 6 tensors + 10 decoder convs x 2 tensors
  EXPECT_EQ(named.size(), 18u + 20u);
  EXPECT_EQ(named.front().first, "attn3.f_weight");
  EXPECT_EQ(bundle.attention[0].qk_dim(), 56u);
  EXPECT_EQ(bundle.attention[2].qk_dim(), 184u);
  EXPECT_EQ(bundle.attention[2].v_dim(), 64u);
  for (const auto& [name, t] : named) EXPECT_TRUE(t.requires_grad()) << name;
  for (const auto& l : bundle.encoder.layers) EXPECT_FALSE(l.weight.requires_grad());
  ASSERT_EQ(bundle.optimizer.first.size(), named.size());
  EXPECT_EQ(bundle.optimizer.first[0].size(), named[0].second.numel());
}

TEST(ModelBundle, SameSeedSameInitialisation) {
  auto a = make_bundle(small_config(4)), b = make_bundle(small_config(4)), c = make_bundle(small_config(5));
  EXPECT_EQ(flat(a.parameters()), flat(b.parameters()));
  EXPECT_NE(flat(a.parameters()), flat(c.parameters()));
}

TEST(Generate, OutputSizeEqualsInputSize) {
  auto bundle = make_bundle(small_config());
  NoGradGuard no_grad;
  for (auto [h, w] : {std::pair<std::size_t, std::size_t>{32, 32}, {64, 48}}) {
    auto out = generate(bundle, Tensor::full({1, 3, h, w}, 0.4f), Tensor::full({1, 3, 32, 64}, 0.6f), {});
    EXPECT_EQ(out.shape(), (Shape{1, 3, h, w}));
  }
}

TEST(TrainIteration, UpdatesOnlyTrainableParameters) {
  auto bundle = make_bundle(small_config());
  auto enc_before = encoder_bytes(bundle);
  auto params_before = flat(bundle.parameters());
  auto report = train_iteration(bundle, small_batch(1));
  EXPECT_TRUE(std::isfinite(report.total));
  EXPECT_EQ(report.step, 1);
  EXPECT_FALSE(report.has_similarity);
  EXPECT_EQ(encoder_bytes(bundle), enc_before);
  for (const auto& l : bundle.encoder.layers) EXPECT_FALSE(l.weight.has_grad());
  auto params_after = flat(bundle.parameters());
  std::size_t changed = 0;
  for (std::size_t i = 0; i < params_after.size(); ++i) changed += params_after[i] != params_before[i];
  EXPECT_GT(changed, params_after.size() / 2);
  EXPECT_NEAR(report.total, 10.0f * report.global + 3.0f * report.local, 1e-3f * report.total);
}

TEST(TrainIteration, VideoModeAddsSimilarityTerm) {
  auto cfg = small_config();
  cfg.mode = TrainMode::video;
  auto bundle = make_bundle(cfg);
  auto report = train_iteration(bundle, small_batch(2, true));
  EXPECT_TRUE(report.has_similarity);
  EXPECT_GT(report.similarity, 0.0f);
  EXPECT_NEAR(report.total, 10.0f * report.global + 3.0f * report.local + 100.0f * report.similarity,
              1e-3f * report.total);
  EXPECT_THROW(train_iteration(bundle, small_batch(2, false)), ContractError);
}

TEST(TrainIteration, SecondStepOnFixedBatchUsuallyLower) {
  int lower = 0;
  const int trials = 20;
  for (int seed = 0; seed < trials; ++seed) {
    auto cfg = small_config(100 + seed);
    auto bundle = make_bundle(cfg);
    auto batch = small_batch(seed);
    float first = train_iteration(bundle, batch).total;
    float second = train_iteration(bundle, batch).total;
    lower += second < first;
  }
  EXPECT_GE(lower, 19) << lower << " of " << trials;
}

TEST(TrainIteration, NanLossAbortsWithDiagnostics) {
  auto bundle = make_bundle(small_config());
  auto batch = small_batch(3);
  std::vector<float> bad(batch.content.data().begin(), batch.content.data().end());
  bad[7] = std::nanf("");
  batch.content = Tensor::from(batch.content.shape(), bad);
  try {
    train_iteration(bundle, batch);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    std::string msg = e.what();
    EXPECT_NE(msg.find("c0"), std::string::npos) << msg;
    EXPECT_NE(msg.find("seed"), std::string::npos) << msg;
  }
  EXPECT_EQ(bundle.optimizer.step, 0);
}

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  auto bundle = make_bundle(small_config());
  train_iteration(bundle, small_batch(1));
  auto p1 = temp_path("a.ckpt"), p2 = temp_path("b.ckpt");
  save_checkpoint(bundle, p1);
  auto loaded = load_checkpoint(p1);
  save_checkpoint(loaded, p2);
  EXPECT_EQ(read_file_bytes(p1), read_file_bytes(p2));
  EXPECT_EQ(loaded.optimizer.step, 1);
  EXPECT_EQ(loaded.config.seed, bundle.config.seed);
}

TEST(Checkpoint, ResumeMatchesUninterruptedTrainingBitwise) {
  auto cfg = small_config(9);
  auto straight = make_bundle(cfg);
  auto resumed = make_bundle(cfg);
  train_iteration(straight, small_batch(1));
  train_iteration(resumed, small_batch(1));
  auto path = temp_path("resume.ckpt");
  save_checkpoint(resumed, path);
  auto reloaded = load_checkpoint(path);
  auto a = train_iteration(straight, small_batch(2));
  auto b = train_iteration(reloaded, small_batch(2));
  EXPECT_EQ(a.total, b.total);
  EXPECT_EQ(flat(straight.parameters()), flat(reloaded.parameters()));
  EXPECT_EQ(straight.optimizer.second, reloaded.optimizer.second);
}

TEST(Checkpoint, VersionMismatchAndCorruption) {
  auto bundle = make_bundle(small_config());
  auto path = temp_path("v.ckpt");
  save_checkpoint(bundle, path);
  auto bytes = read_file_bytes(path);

  auto file = parse_blob(bytes);
  file.set_meta("checkpoint_version", "99");
  auto vpath = temp_path("v99.ckpt");
  write_blob_file(vpath, file);
  EXPECT_THROW(load_checkpoint(vpath), VersionError);

  auto corrupt = bytes;
  corrupt[corrupt.size() - 3] ^= 0x11;
  auto cpath = temp_path("corrupt.ckpt");
  std::ofstream(cpath, std::ios::binary) << corrupt;
  EXPECT_THROW(load_checkpoint(cpath), IntegrityError);

  auto enc = parse_blob(bytes);
  enc.set_meta("encoder_crc", "00000000");
  auto epath = temp_path("enc.ckpt");
  write_blob_file(epath, enc);
  EXPECT_THROW(load_checkpoint(epath), IntegrityError);
}

TEST(TrainLoop, ResumeFromStepCountMatches) {
  auto root = temp_path("corpus");
  fs::remove_all(root);
  write_desk_corpus(root, {.content_count = 4, .style_count = 2, .size = 32, .seed = 5});
  auto cfg = small_config(11);
  cfg.content_dir = (root / "content").string();
  cfg.style_dir = (root / "style").string();
  cfg.iterations = 3;
  auto data = load_training_data(cfg);

  auto straight = make_bundle(cfg);
  auto full = train(straight, data, 3);
  ASSERT_EQ(full.size(), 3u);

  auto partial = make_bundle(cfg);
  train(partial, data, 2);
  auto path = temp_path("loop.ckpt");
  save_checkpoint(partial, path);
  auto resumed = load_checkpoint(path);
  auto rest = train(resumed, data, 3);
  ASSERT_EQ(rest.size(), 1u);
  EXPECT_EQ(rest[0].total, full[2].total);
  EXPECT_EQ(flat(straight.parameters()), flat(resumed.parameters()));
}

TEST(TrainConfigFile, JsonAndKeyValueForms) {
  auto jpath = temp_path("cfg.json");
  std::ofstream(jpath) << R"({"iterations": 7, "mode": "video", "learning_rate": 0.001})";
  TrainConfig a = read_config_file(jpath).get<TrainConfig>();
  EXPECT_EQ(a.iterations, 7);
  EXPECT_EQ(a.mode, TrainMode::video);
  EXPECT_EQ(a.attention_mode(), AttentionMode::cosine);
  auto kpath = temp_path("cfg.toml");
  std::ofstream(kpath) << "# desk run\n[train]\niterations = 9\nprofile = \"tiny\"\nattention = softmax\n";
  TrainConfig b = read_config_file(kpath).get<TrainConfig>();
  EXPECT_EQ(b.iterations, 9);
  EXPECT_EQ(b.attention_mode(), AttentionMode::softmax);
  std::ofstream(kpath) << "iteratons = 9\n";
  EXPECT_THROW(read_config_file(kpath).get<TrainConfig>(), ConfigError);
  TrainConfig bad;
  bad.crop_size = 128;
  EXPECT_THROW(bad.validate(), ConfigError);
}

}  // namespace
}  // namespace adaattn
