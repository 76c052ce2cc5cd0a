// Copyright (C) 2026 The adaattn Authors
// SPDX-License-Identifier: Apache-2.0

// Command-line front end: train, stylize, interpolate, concat-styles, video,
// flow-error, serve and desk-corpus.

#include <algorithm>
#include <cstdio>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "adaattn/app/flow.hpp"
#include "adaattn/app/service.hpp"
#include "adaattn/app/stylize.hpp"
#include "adaattn/trainer.hpp"

namespace {

using namespace adaattn;

/// --config files: a JSON object or `key = value` lines. Keys use the long
/// option names of the chosen subcommand, with '_' or '-'.
class ConfigFileFormat : public CLI::Config {
 public:
  explicit ConfigFileFormat(const CLI::App* root) : root_(root) {}

  std::string to_config(const CLI::App*, bool, bool, std::string) const override { return {}; }

  std::vector<CLI::ConfigItem> from_config(std::istream& in) const override {
    std::stringstream buf;
    buf << in.rdbuf();
    std::string text = buf.str();
    json j;
    auto first = text.find_first_not_of(" \t\r\n");
    if (first != std::string::npos && text[first] == '{') {
      j = json::parse(text, nullptr, false);
      if (j.is_discarded() || !j.is_object()) throw CLI::ConfigError("config file is not a JSON object");
    } else {
      try {
        j = detail::parse_key_values(text, "config");
      } catch (const Error& e) {
        throw CLI::ConfigError(e.what());
      }
    }
    auto chosen = root_->get_subcommands();
    std::vector<CLI::ConfigItem> items;
    for (const auto& [key, value] : j.items()) {
      CLI::ConfigItem item;
      if (!chosen.empty()) item.parents = {chosen.front()->get_name()};
      item.name = key;
      std::replace(item.name.begin(), item.name.end(), '_', '-');
      auto scalar = [](const json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); };
      if (value.is_array())
        for (const auto& v : value) item.inputs.push_back(scalar(v));
      else
        item.inputs.push_back(scalar(value));
      items.push_back(std::move(item));
    }
    return items;
  }

 private:
  const CLI::App* root_;
};

std::vector<PixelPoint> parse_points(const std::vector<std::string>& specs, const char* what) {
  std::vector<PixelPoint> out;
  for (const auto& s : specs) {
    std::size_t x = 0, y = 0;
    char comma = 0;
    std::istringstream in(s);
    if (!(in >> x >> comma >> y) || comma != ',' || !in.eof())
      raise<ConfigError>(what, ": expected x,y but got '", s, "'");
    out.push_back({x, y});
  }
  return out;
}

struct InferenceOptions {
  std::string checkpoint;
  std::string content;
  std::vector<std::string> styles;
  std::vector<float> weights;
  std::string mode = "softmax";
  std::vector<std::string> content_points, style_points;
  std::string content_mask, style_mask;
  float threshold = 0.1f;
  std::string output = "stylized.png";
};

void add_inference_options(CLI::App* cmd, InferenceOptions& o, bool many_styles) {
  cmd->add_option("--checkpoint", o.checkpoint, "trained checkpoint")->required();
  cmd->add_option("--content", o.content, "content PNG")->required();
  cmd->add_option("--style", o.styles, many_styles ? "style PNGs (repeat the flag)" : "style PNG")->required();
  cmd->add_option("--mode", o.mode, "attention: softmax or cosine")->capture_default_str();
  cmd->add_option("--output", o.output, "output PNG")->capture_default_str();
}

StylizeRequest build_request(const InferenceOptions& o) {
  StylizeRequest req;
  req.content = load_image(o.content);
  for (const auto& s : o.styles) req.styles.push_back(load_image(s));
  req.weights = o.weights;
  req.mode = parse_attention_mode(o.mode);
  req.content_points = parse_points(o.content_points, "--content-points");
  req.style_points = parse_points(o.style_points, "--style-points");
  if (!o.content_mask.empty()) req.content_mask = load_mask(o.content_mask);
  if (!o.style_mask.empty()) req.style_mask = load_mask(o.style_mask);
  req.threshold = o.threshold;
  return req;
}

void run_inference(const InferenceOptions& o, bool concat) {
  auto bundle = load_checkpoint(o.checkpoint);
  auto req = build_request(o);
  req.concat = concat;
  auto result = run_stylize(bundle, req);
  save_image(o.output, result.image);
  std::cout << "wrote " << o.output << " (" << result.image.dim(3) << "x" << result.image.dim(2) << ")\n";
  auto stem = fs::path(o.output).replace_extension();
  if (result.content_mask) {
    save_mask(stem.string() + "_content_mask.png", *result.content_mask);
    save_mask(stem.string() + "_style_mask.png", *result.style_mask);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"adaattn: attention-based arbitrary style transfer"};
  app.require_subcommand(1);
  app.fallthrough();
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.set_config("--config", "", "JSON or key = value file of subcommand options; command-line flags win");
  app.config_formatter(std::make_shared<ConfigFileFormat>(&app));

  // train
  TrainConfig cfg;
  std::string mode = "image", checkpoint_out = "adaattn.ckpt", resume;
  int log_every = 10, save_every = 0;
  auto* train_cmd = app.add_subcommand("train", "train attention modules and decoder");
  train_cmd->add_option("--content-dir", cfg.content_dir, "content PNGs (video mode: one subdirectory per clip)");
  train_cmd->add_option("--style-dir", cfg.style_dir, "style PNGs");
  train_cmd->add_option("--mode", mode, "image or video")->capture_default_str();
  train_cmd->add_option("--attention", cfg.attention, "softmax or cosine (default: by mode)");
  train_cmd->add_option("--profile", cfg.profile, "tiny or full")->capture_default_str();
  train_cmd->add_option("--encoder-weights", cfg.encoder_weights, "encoder manifest (full profile)");
  train_cmd->add_option("--iterations", cfg.iterations)->capture_default_str();
  train_cmd->add_option("--batch-size", cfg.batch_size)->capture_default_str();
  train_cmd->add_option("--crop-size", cfg.crop_size)->capture_default_str();
  train_cmd->add_option("--load-size", cfg.load_size)->capture_default_str();
  train_cmd->add_option("--learning-rate", cfg.learning_rate)->capture_default_str();
  train_cmd->add_option("--beta1", cfg.beta1)->capture_default_str();
  train_cmd->add_option("--beta2", cfg.beta2)->capture_default_str();
  train_cmd->add_option("--adam-eps", cfg.adam_eps)->capture_default_str();
  train_cmd->add_option("--lambda-global", cfg.lambda_global)->capture_default_str();
  train_cmd->add_option("--lambda-local", cfg.lambda_local)->capture_default_str();
  train_cmd->add_option("--lambda-similarity", cfg.lambda_similarity)->capture_default_str();
  train_cmd->add_option("--video-window", cfg.video_window)->capture_default_str();
  train_cmd->add_flag("--vanilla-content", cfg.vanilla_content, "plain content loss instead of the local feature loss");
  train_cmd->add_option("--seed", cfg.seed)->capture_default_str();
  train_cmd->add_option("--checkpoint", checkpoint_out, "where to write the checkpoint")->capture_default_str();
  train_cmd->add_option("--resume", resume, "continue from this checkpoint");
  train_cmd->add_option("--log-every", log_every)->capture_default_str();
  train_cmd->add_option("--save-every", save_every, "also checkpoint every N steps (0: only at the end)");

  // stylize / interpolate / concat-styles
  InferenceOptions single, multi, joined;
  auto* stylize_cmd = app.add_subcommand("stylize", "stylize one content image");
  add_inference_options(stylize_cmd, single, false);
  stylize_cmd->add_option("--content-points", single.content_points, "clicked content points x,y (repeat)");
  stylize_cmd->add_option("--style-points", single.style_points, "clicked style points x,y (repeat)");
  stylize_cmd->add_option("--content-mask", single.content_mask, "content region mask PNG");
  stylize_cmd->add_option("--style-mask", single.style_mask, "style region mask PNG");
  stylize_cmd->add_option("--threshold", single.threshold, "region growing colour threshold")->capture_default_str();

  auto* interp_cmd = app.add_subcommand("interpolate", "blend several styles by weight");
  add_inference_options(interp_cmd, multi, true);
  interp_cmd->add_option("--weights", multi.weights, "one nonnegative weight per style (default: equal)");

  auto* concat_cmd = app.add_subcommand("concat-styles", "use several styles joined side by side");
  add_inference_options(concat_cmd, joined, true);

  // video
  std::string video_ckpt, frames_dir, video_style, video_out = "stylized_frames", video_mode = "cosine";
  auto* video_cmd = app.add_subcommand("video", "stylize a directory of PNG frames");
  video_cmd->add_option("--checkpoint", video_ckpt)->required();
  video_cmd->add_option("--frames", frames_dir, "input frame directory")->required();
  video_cmd->add_option("--style", video_style)->required();
  video_cmd->add_option("--output", video_out, "output frame directory")->capture_default_str();
  video_cmd->add_option("--mode", video_mode, "softmax or cosine")->capture_default_str();

  // flow-error
  std::string fe_frames, fe_flows, fe_masks;
  auto* flow_cmd = app.add_subcommand("flow-error", "warp error of a stylized clip, in units of 1e-2");
  flow_cmd->add_option("--frames", fe_frames, "stylized frame directory")->required();
  flow_cmd->add_option("--flows", fe_flows, "directory of .flow files, one per consecutive pair")->required();
  flow_cmd->add_option("--masks", fe_masks, "optional validity masks, one PNG per pair");

  // serve
  std::string serve_ckpt, host = "127.0.0.1";
  int port = 8080;
  auto* serve_cmd = app.add_subcommand("serve", "HTTP service for stylization and region control");
  serve_cmd->add_option("--checkpoint", serve_ckpt)->required();
  serve_cmd->add_option("--host", host)->capture_default_str();
  serve_cmd->add_option("--port", port)->capture_default_str();

  // desk-corpus
  DeskCorpusSpec desk;
  std::string desk_out = "desk";
  std::size_t clip_frames = 0;
  double clip_shift = 2.0;
  auto* desk_cmd = app.add_subcommand("desk-corpus", "write the synthetic desk-scale training corpus");
  desk_cmd->add_option("--output", desk_out)->capture_default_str();
  desk_cmd->add_option("--content-count", desk.content_count)->capture_default_str();
  desk_cmd->add_option("--style-count", desk.style_count)->capture_default_str();
  desk_cmd->add_option("--size", desk.size)->capture_default_str();
  desk_cmd->add_option("--seed", desk.seed)->capture_default_str();
  desk_cmd->add_option("--clip-frames", clip_frames, "also write a translating clip with matching flows");
  desk_cmd->add_option("--clip-shift", clip_shift, "clip motion in pixels per frame")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd) {
      cfg.mode = parse_train_mode(mode);
      ModelBundle bundle;
      if (!resume.empty()) {
        bundle = load_checkpoint(resume);
        auto given = [&](const char* name) { return train_cmd->count(name) > 0; };
        if (given("--iterations")) bundle.config.iterations = cfg.iterations;
        if (given("--content-dir")) bundle.config.content_dir = cfg.content_dir;
        if (given("--style-dir")) bundle.config.style_dir = cfg.style_dir;
        std::cout << "resumed " << resume << " at step " << bundle.optimizer.step << "\n";
      } else {
        bundle = make_bundle(cfg);
      }
      auto data = load_training_data(bundle.config);
      const auto until = bundle.config.iterations;
      train(bundle, data, until, [&](const LossReport& r) {
        if (log_every > 0 && (r.step % log_every == 0 || r.step == 1 || r.step == until)) {
          std::printf("step %lld/%lld total %.4f global %.4f local %.4f", static_cast<long long>(r.step),
                      static_cast<long long>(until), r.total, r.global, r.local);
          if (r.has_similarity) std::printf(" similarity %.5f", r.similarity);
          std::printf("\n");
          std::fflush(stdout);
        }
        if (save_every > 0 && r.step % save_every == 0) save_checkpoint(bundle, checkpoint_out);
      });
      save_checkpoint(bundle, checkpoint_out);
      std::cout << "saved " << checkpoint_out << "\n";
    } else if (*stylize_cmd) {
      run_inference(single, false);
    } else if (*interp_cmd) {
      run_inference(multi, false);
    } else if (*concat_cmd) {
      run_inference(joined, true);
    } else if (*video_cmd) {
      auto bundle = load_checkpoint(video_ckpt);
      AttentionConfig acfg{.mode = parse_attention_mode(video_mode)};
      auto n = stylize_video(bundle, frames_dir, load_image(video_style), video_out, acfg);
      std::cout << "wrote " << n << " frames to " << video_out << "\n";
    } else if (*flow_cmd) {
      std::optional<fs::path> masks;
      if (!fe_masks.empty()) masks = fe_masks;
      std::printf("flow_error %.6f (x1e-2)\n", flow_error_dir(fe_frames, fe_flows, masks));
    } else if (*serve_cmd) {
      auto bundle = load_checkpoint(serve_ckpt);
      httplib::Server server;
      StylizeService service(bundle);
      service.mount(server);
      std::cout << "serving " << to_string(bundle.profile()) << " model on http://" << host << ":" << port << "\n";
      std::cout.flush();
      if (!server.listen(host, port)) raise<IoError>("cannot listen on ", host, ":", port);
    } else if (*desk_cmd) {
      write_desk_corpus(desk_out, desk);
      std::cout << "wrote " << desk.content_count << " content and " << desk.style_count << " style images to "
                << desk_out << "\n";
      if (clip_frames > 0) {
        write_translating_clip(fs::path(desk_out) / "clip", clip_frames, desk.size, clip_shift, 0.0, desk.seed);
        std::cout << "wrote a " << clip_frames << "-frame clip to " << (fs::path(desk_out) / "clip").string() << "\n";
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
