#pragma once

// Concrete segmentation and VQA backends: HTTP clients for remote model
// servers and deterministic in-process stand-ins for model-free runs.

#include <chrono>
#include <map>
#include <regex>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "httplib.h"
#include "json.hpp"
#include "lvqa/error.hpp"
#include "lvqa/localization.hpp"
#include "lvqa/probing.hpp"
#include "lvqa/prompt.hpp"
#include "lvqa/raster.hpp"

namespace lvqa {

/// "http://host:port/path" split into the client base and request path.
struct Endpoint {
  std::string base;
  std::string path = "/";

  static Endpoint parse(std::string_view uri) {
    static const std::regex re(R"(^(http://[A-Za-z0-9.\-_]+(:[0-9]+)?)(/[^\s]*)?$)");
    std::cmatch m;
    if (!std::regex_match(uri.data(), uri.data() + uri.size(), m, re))
      throw ConfigError("malformed endpoint URI \"" + std::string(uri) + "\" (expected http://host[:port][/path])");
    Endpoint e;
    e.base = m[1].str();
    if (m[3].matched) e.path = m[3].str();
    return e;
  }
  std::string str() const { return base + path; }
};

struct HttpOptions {
  std::chrono::milliseconds connect_timeout{3000};
  std::chrono::milliseconds read_timeout{60000};
};

namespace detail {

inline nlohmann::json post_json(const Endpoint& ep, const HttpOptions& opt, const nlohmann::json& body) {
  httplib::Client client(ep.base);
  client.set_connection_timeout(opt.connect_timeout);
  client.set_read_timeout(opt.read_timeout);
  auto res = client.Post(ep.path, body.dump(), "application/json");
  if (!res) {
    throw BackendUnavailableError(ep.str() + " unreachable: " + httplib::to_string(res.error()));
  }
  if (res->status == 429 || res->status >= 500) {
    throw BackendUnavailableError(ep.str() + " returned HTTP " + std::to_string(res->status));
  }
  if (res->status != 200) {
    throw ProtocolError(ep.str() + " returned HTTP " + std::to_string(res->status));
  }
  try {
    return nlohmann::json::parse(res->body);
  } catch (const nlohmann::json::parse_error&) {
    throw ProtocolError(ep.str() + " returned a non-JSON body");
  }
}

}  // namespace detail

/// POST {image: base64 PNG, label} -> {candidates: [{mask: RLE, confidence}]}
class HttpSegmentationBackend : public SegmentationBackend {
 public:
  explicit HttpSegmentationBackend(std::string_view uri, std::string model_id = {}, HttpOptions opt = {})
      : endpoint_(Endpoint::parse(uri)), model_id_(model_id.empty() ? endpoint_.str() : std::move(model_id)), opt_(opt) {}

  std::string model_id() const override { return model_id_; }

  std::vector<SegmentationCandidate> candidates(const Image& image, std::string_view label) const override {
    nlohmann::json body{{"image", base64_encode(encode_png(image))}, {"label", std::string(label)}};
    auto reply = detail::post_json(endpoint_, opt_, body);
    if (!reply.is_object() || !reply.contains("candidates") || !reply["candidates"].is_array())
      throw ProtocolError("segmentation reply lacks a \"candidates\" array");
    std::vector<SegmentationCandidate> out;
    for (const auto& c : reply["candidates"]) {
      if (!c.is_object() || !c.contains("mask") || !c.contains("confidence") || !c["confidence"].is_number())
        throw ProtocolError("segmentation candidate needs \"mask\" and numeric \"confidence\"");
      out.push_back({rle_decode(c["mask"]), c["confidence"].get<double>()});
    }
    return out;
  }

 private:
  Endpoint endpoint_;
  std::string model_id_;
  HttpOptions opt_;
};

/// POST {image: base64 PNG, question} -> {p_yes}
class HttpVqaBackend : public VqaBackend {
 public:
  explicit HttpVqaBackend(std::string_view uri, std::string model_id = {}, HttpOptions opt = {})
      : endpoint_(Endpoint::parse(uri)), model_id_(model_id.empty() ? endpoint_.str() : std::move(model_id)), opt_(opt) {}

  std::string model_id() const override { return model_id_; }

  double p_yes(const Image& image, const Question& q, std::string_view) const override {
    nlohmann::json body{{"image", base64_encode(encode_png(image))}, {"question", wrap_for_vqa(q)}};
    auto reply = detail::post_json(endpoint_, opt_, body);
    if (!reply.is_object() || !reply.contains("p_yes") || !reply["p_yes"].is_number())
      throw ProtocolError("VQA reply lacks numeric \"p_yes\"");
    const double p = reply["p_yes"].get<double>();
    if (!(p >= 0.0 && p <= 1.0)) throw ProtocolError("VQA reply p_yes outside [0,1]");
    return p;
  }

 private:
  Endpoint endpoint_;
  std::string model_id_;
  HttpOptions opt_;
};

// ---------------------------------------------------------------------------
// In-process stand-ins

/// Every label segments to the whole frame at confidence 1.
class FullFrameSegmentation : public SegmentationBackend {
 public:
  std::string model_id() const override { return "mock/full-frame"; }
  std::vector<SegmentationCandidate> candidates(const Image& image, std::string_view) const override {
    return {{Bitmap(image.height(), image.width(), true), 1.0}};
  }
};

/// Fixed candidate lists per label; unknown labels get no candidates.
class ScriptedSegmentation : public SegmentationBackend {
 public:
  explicit ScriptedSegmentation(std::map<std::string, std::vector<SegmentationCandidate>, std::less<>> by_label)
      : by_label_(std::move(by_label)) {}
  std::string model_id() const override { return "mock/scripted"; }
  std::vector<SegmentationCandidate> candidates(const Image&, std::string_view label) const override {
    auto it = by_label_.find(label);
    return it == by_label_.end() ? std::vector<SegmentationCandidate>{} : it->second;
  }

 private:
  std::map<std::string, std::vector<SegmentationCandidate>, std::less<>> by_label_;
};

/// Answers from ground-truth structured annotations keyed by source id:
/// p_yes = 1 when the annotated entity of the question's class carries the
/// attribute, else 0. The image is ignored.
class OracleVqaBackend : public VqaBackend {
 public:
  OracleVqaBackend() = default;
  explicit OracleVqaBackend(std::map<std::string, StructuredPrompt, std::less<>> truth) : truth_(std::move(truth)) {}

  void add(StructuredPrompt truth) {
    auto key = truth.source_id;
    truth_.insert_or_assign(std::move(key), std::move(truth));
  }
  size_t size() const { return truth_.size(); }

  std::string model_id() const override { return "mock/oracle"; }

  double p_yes(const Image&, const Question& q, std::string_view source_id) const override {
    auto it = truth_.find(source_id);
    if (it == truth_.end()) throw ProtocolError("oracle has no annotation for \"" + std::string(source_id) + "\"");
    for (const auto& e : it->second.entities) {
      if (e.class_label == q.subject_entity.class_label) return e.has_attribute(q.attribute.name) ? 1.0 : 0.0;
    }
    return 0.0;
  }

 private:
  std::map<std::string, StructuredPrompt, std::less<>> truth_;
};

}  // namespace lvqa
