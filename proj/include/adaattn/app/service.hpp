// Copyright (C) 2026 The adaattn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <sodium.h>

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "httplib.h"
#include "json.hpp"

#include "adaattn/app/stylize.hpp"

namespace adaattn {

using json = nlohmann::json;

inline constexpr const char* kServiceVersion = "0.1.0";
inline constexpr std::size_t kDebugMaxSide = 64;

// Base64 (standard alphabet). A "data:...;base64," prefix is accepted on input.

inline std::string base64_encode(const std::string& raw) {
  std::string out(sodium_base64_ENCODED_LEN(raw.size(), sodium_base64_VARIANT_ORIGINAL), '\0');
  sodium_bin2base64(out.data(), out.size(), reinterpret_cast<const unsigned char*>(raw.data()), raw.size(),
                    sodium_base64_VARIANT_ORIGINAL);
  out.resize(out.size() - 1);  // trailing NUL
  return out;
}

inline std::string base64_decode(std::string text, const std::string& what = "payload") {
  if (text.rfind("data:", 0) == 0) {
    auto comma = text.find(',');
    require<ContractError>(comma != std::string::npos, what, ": malformed data URL");
    text.erase(0, comma + 1);
  }
  std::string out(text.size() / 4 * 3 + 3, '\0');
  std::size_t len = 0;
  const char* end = nullptr;
  int rc = sodium_base642bin(reinterpret_cast<unsigned char*>(out.data()), out.size(), text.data(), text.size(),
                             " \n\r", &len, &end, sodium_base64_VARIANT_ORIGINAL);
  require<ContractError>(rc == 0 && end == text.data() + text.size(), what, ": invalid base64");
  out.resize(len);
  return out;
}

struct HttpReply {
  int status = 200;
  json body;
};

namespace detail {

inline HttpReply error_reply(int status, const std::string& message) { return {status, json{{"error", message}}}; }

/// Runs a handler body, mapping failures to 4xx (bad input) or 500.
inline HttpReply guarded(const std::function<HttpReply()>& fn) {
  try {
    return fn();
  } catch (const json::exception& e) {
    return error_reply(400, std::string("malformed request: ") + e.what());
  } catch (const NumericError& e) {
    return error_reply(500, e.what());
  } catch (const IntegrityError& e) {
    return error_reply(500, e.what());
  } catch (const Error& e) {
    return error_reply(400, e.what());
  } catch (const std::exception& e) {
    return error_reply(500, e.what());
  }
}

inline Tensor image_field(const json& j, const char* key) {
  require<ContractError>(j.at(key).is_string(), "'", key, "' must be a base64 PNG string");
  return decode_png(base64_decode(j.at(key).get<std::string>(), key), key);
}

inline std::vector<PixelPoint> points_field(const json& j, const char* key) {
  std::vector<PixelPoint> out;
  if (!j.contains(key)) return out;
  for (const auto& p : j.at(key)) {
    require<ContractError>(p.is_array() && p.size() == 2 && p[0].is_number_integer() && p[1].is_number_integer() &&
                               p[0].get<long long>() >= 0 && p[1].get<long long>() >= 0,
                           "'", key, "' entries must be [x, y] pixel pairs");
    out.push_back({p[0].get<std::size_t>(), p[1].get<std::size_t>()});
  }
  return out;
}

inline StylizeRequest parse_request(const json& j) {
  static const char* const kKeys[] = {"content",        "style",        "styles",       "weights",
                                      "concat",         "mode",         "content_points", "style_points",
                                      "content_mask",   "style_mask",   "threshold"};
  require<ContractError>(j.is_object(), "request body must be a JSON object");
  for (const auto& [key, value] : j.items())
    require<ContractError>(std::find(std::begin(kKeys), std::end(kKeys), key) != std::end(kKeys),
                           "unknown field '", key, "'");
  require<ContractError>(j.contains("content"), "missing 'content'");
  require<ContractError>(j.contains("style") != j.contains("styles"), "give exactly one of 'style' or 'styles'");
  StylizeRequest req;
  req.content = image_field(j, "content");
  if (j.contains("style")) {
    req.styles.push_back(image_field(j, "style"));
  } else {
    require<ContractError>(j.at("styles").is_array() && !j.at("styles").empty(), "'styles' must be a non-empty array");
    for (std::size_t i = 0; i < j.at("styles").size(); ++i) {
      json one = {{"style", j.at("styles")[i]}};
      req.styles.push_back(image_field(one, "style"));
    }
  }
  if (j.contains("weights")) req.weights = j.at("weights").get<std::vector<float>>();
  if (j.contains("concat")) req.concat = j.at("concat").get<bool>();
  if (j.contains("mode")) req.mode = parse_attention_mode(j.at("mode").get<std::string>());
  if (j.contains("threshold")) req.threshold = j.at("threshold").get<float>();
  req.content_points = points_field(j, "content_points");
  req.style_points = points_field(j, "style_points");
  if (j.contains("content_mask"))
    req.content_mask = decode_mask_png(base64_decode(j.at("content_mask").get<std::string>(), "content_mask"));
  if (j.contains("style_mask"))
    req.style_mask = decode_mask_png(base64_decode(j.at("style_mask").get<std::string>(), "style_mask"));
  return req;
}

}  // namespace detail

inline HttpReply handle_health(const ModelBundle& b) {
  json taps = json::array();
  for (int x : kAttentionTaps) taps.push_back(x);
  return {200, json{{"profile", to_string(b.profile())},
                    {"taps", taps},
                    {"version", kServiceVersion},
                    {"encoder", b.encoder_ref},
                    {"step", b.optimizer.step}}};
}

inline HttpReply handle_stylize(const ModelBundle& b, const json& body) {
  return detail::guarded([&] {
    auto result = run_stylize(b, detail::parse_request(body), nullptr);
    json out = {{"image", base64_encode(encode_png(result.image))}};
    if (result.content_mask) out["content_mask"] = base64_encode(encode_mask_png(*result.content_mask));
    if (result.style_mask) out["style_mask"] = base64_encode(encode_mask_png(*result.style_mask));
    return HttpReply{200, out};
  });
}

/// Per tap: how much attention mass constrained content rows put outside the
/// allowed style cells, and how far row sums stray from one. Small inputs only.
inline HttpReply handle_attention_debug(const ModelBundle& b, const json& body) {
  return detail::guarded([&] {
    auto req = detail::parse_request(body);
    require<ContractError>(req.styles.size() == 1, "attention-debug takes a single style");
    for (const Tensor* img : {&req.content, &req.styles.front()})
      if (img->dim(2) > kDebugMaxSide || img->dim(3) > kDebugMaxSide)
        return detail::error_reply(413, "attention-debug accepts images up to " + std::to_string(kDebugMaxSide) +
                                            " pixels per side");
    const Tensor& style = req.styles.front();
    Tensor c = detail::aligned_input(req.content, "content", nullptr);
    Tensor s = detail::aligned_input(style, "style", nullptr);
    AttentionConfig cfg{.mode = req.mode};
    cfg.region = detail::aligned_region(detail::request_region(req, style), req.content, c, style, s);
    NoGradGuard no_grad;
    FeatureStack fc = encode(c, b.encoder), fs = encode(s, b.encoder);
    auto stats = attention_statistics(b, fc, fs, cfg);
    json taps = json::array();
    for (std::size_t m = 0; m < kAttentionTaps.size(); ++m) {
      const int x = kAttentionTaps[m];
      const Tensor& a = stats[m].attention;
      const std::size_t rows = a.dim(a.rank() - 2), cols = a.dim(a.rank() - 1);
      std::optional<RegionMask> mask;
      if (cfg.region)
        mask = downsample_region(cfg.region->content, cfg.region->style, fc.tap(x).dim(2), fc.tap(x).dim(3),
                                 fs.tap(x).dim(2), fs.tap(x).dim(3));
      double worst_outside = 0.0, worst_sum = 0.0;
      std::size_t constrained = 0;
      for (std::size_t i = 0; i < rows; ++i) {
        double sum = 0.0, outside = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
          double v = a.data()[i * cols + j];
          sum += v;
          if (mask && !mask->style_allowed.cells[j]) outside += v;
        }
        worst_sum = std::max(worst_sum, std::fabs(sum - 1.0));
        if (mask && mask->content_region.cells[i]) {
          ++constrained;
          worst_outside = std::max(worst_outside, outside);
        }
      }
      taps.push_back({{"tap", x},
                      {"rows", rows},
                      {"columns", cols},
                      {"constrained_rows", constrained},
                      {"allowed_columns", mask ? mask->style_allowed.count() : cols},
                      {"max_outside_mass", worst_outside},
                      {"max_row_sum_error", worst_sum}});
    }
    return HttpReply{200, json{{"mode", to_string(req.mode)}, {"taps", taps}}};
  });
}

/// Routes for the three endpoints. The bundle is shared read-only by all
/// request threads.
class StylizeService {
 public:
  explicit StylizeService(const ModelBundle& bundle) : bundle_(bundle) {
    require<Error>(sodium_init() >= 0, "libsodium failed to initialise");
  }

  void mount(httplib::Server& server) const {
    server.Get("/health", [this](const httplib::Request&, httplib::Response& res) {
      send(res, handle_health(bundle_));
    });
    server.Post("/stylize", [this](const httplib::Request& req, httplib::Response& res) {
      send(res, with_body(req, [this](const json& j) { return handle_stylize(bundle_, j); }));
    });
    server.Post("/attention-debug", [this](const httplib::Request& req, httplib::Response& res) {
      send(res, with_body(req, [this](const json& j) { return handle_attention_debug(bundle_, j); }));
    });
  }

 private:
  static HttpReply with_body(const httplib::Request& req, const std::function<HttpReply(const json&)>& fn) {
    json j = json::parse(req.body, nullptr, false);
    if (j.is_discarded()) return detail::error_reply(400, "request body is not valid JSON");
    return fn(j);
  }

  static void send(httplib::Response& res, const HttpReply& reply) {
    res.status = reply.status;
    res.set_content(reply.body.dump(), "application/json");
  }

  const ModelBundle& bundle_;
};

}  // namespace adaattn
