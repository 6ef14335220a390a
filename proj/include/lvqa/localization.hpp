#pragma once

// Per-entity localized views: segmentation masks, blur outside the mask,
// bounding boxes with margin, crop + aspect-preserving resize with white
// padding, and the six localization strategies built from them.

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "lvqa/error.hpp"
#include "lvqa/raster.hpp"

namespace lvqa {

struct Mask {
  Bitmap bitmap;
  double confidence = 0.0;
  std::string entity_label;
  // False when segmentation produced no qualifying candidate.
  bool found = false;

  int height() const { return bitmap.height(); }
  int width() const { return bitmap.width(); }
  bool empty() const { return !bitmap.any(); }
};

inline Mask full_mask(int height, int width, std::string label = {}) {
  return Mask{Bitmap(height, width, true), 1.0, std::move(label), true};
}

inline Mask empty_mask(int height, int width, std::string label = {}) {
  return Mask{Bitmap(height, width, false), 0.0, std::move(label), false};
}

/// Half-open pixel box: rows [top, bottom), cols [left, right).
struct BBox {
  int top = 0;
  int left = 0;
  int bottom = 0;
  int right = 0;

  int height() const { return bottom - top; }
  int width() const { return right - left; }
  friend bool operator==(const BBox&, const BBox&) = default;
};

inline bool bbox_valid_for(const BBox& b, int height, int width) {
  return 0 <= b.top && b.top < b.bottom && b.bottom <= height && 0 <= b.left && b.left < b.right &&
         b.right <= width;
}

enum class Strategy { kNone, kMask, kBlur, kCrop, kMaskCrop, kBlurCrop };

inline constexpr Strategy kAllStrategies[] = {Strategy::kNone, Strategy::kMask,     Strategy::kBlur,
                                              Strategy::kCrop, Strategy::kMaskCrop, Strategy::kBlurCrop};

inline std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::kNone: return "none";
    case Strategy::kMask: return "mask";
    case Strategy::kBlur: return "blur";
    case Strategy::kCrop: return "crop";
    case Strategy::kMaskCrop: return "mask_crop";
    case Strategy::kBlurCrop: return "blur_crop";
  }
  return "?";
}

inline Strategy parse_strategy(std::string_view s) {
  for (auto st : kAllStrategies)
    if (to_string(st) == s) return st;
  throw ConfigError("unknown localization strategy \"" + std::string(s) + "\"");
}

inline bool involves_crop(Strategy s) {
  return s == Strategy::kCrop || s == Strategy::kMaskCrop || s == Strategy::kBlurCrop;
}

struct LocalizedView {
  Image pixels;
  Strategy strategy = Strategy::kNone;
  Strategy requested = Strategy::kNone;
  std::optional<Mask> source_mask;
  std::optional<BBox> bbox;
  bool fallback_used = false;
};

// ---------------------------------------------------------------------------
// Blur

/// Normalized 1-D Gaussian of half-width `radius`, sigma = radius / 2.
inline std::vector<double> gaussian_kernel(int radius) {
  if (radius < 1) throw GeometryError("blur radius must be >= 1");
  const double sigma = radius / 2.0;
  std::vector<double> k(2 * static_cast<size_t>(radius) + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-(i * i) / (2.0 * sigma * sigma));
    sum += k[i + radius];
  }
  for (auto& w : k) w /= sum;
  return k;
}

/// Separable Gaussian blur with replicated borders.
inline Image gaussian_blur(const Image& src, int radius) {
  const int h = src.height(), w = src.width();
  if (src.empty()) return src;
  const auto k = gaussian_kernel(radius);
  std::vector<double> tmp(static_cast<size_t>(h) * w * 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc[3] = {0, 0, 0};
      for (int d = -radius; d <= radius; ++d) {
        const int xx = std::clamp(x + d, 0, w - 1);
        const auto* p = src.px(y, xx);
        for (int c = 0; c < 3; ++c) acc[c] += k[d + radius] * p[c];
      }
      for (int c = 0; c < 3; ++c) tmp[(static_cast<size_t>(y) * w + x) * 3 + c] = acc[c];
    }
  }
  Image out(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc[3] = {0, 0, 0};
      for (int d = -radius; d <= radius; ++d) {
        const int yy = std::clamp(y + d, 0, h - 1);
        for (int c = 0; c < 3; ++c) acc[c] += k[d + radius] * tmp[(static_cast<size_t>(yy) * w + x) * 3 + c];
      }
      auto* q = out.px(y, x);
      for (int c = 0; c < 3; ++c) q[c] = static_cast<std::uint8_t>(std::clamp(std::lround(acc[c]), 0L, 255L));
    }
  }
  return out;
}

/// 5% of the shorter side, never below `min_radius`.
inline int blur_radius_for(int height, int width, double fraction, int min_radius = 3) {
  const int r = static_cast<int>(std::lround(fraction * std::min(height, width)));
  return std::max(min_radius, r);
}

inline void require_same_geometry(const Image& img, const Mask& mask) {
  if (img.height() != mask.height() || img.width() != mask.width()) {
    throw GeometryError("mask " + std::to_string(mask.height()) + "x" + std::to_string(mask.width()) +
                        " does not match image " + std::to_string(img.height()) + "x" +
                        std::to_string(img.width()));
  }
}

/// M * x + (1 - M) * blur(x). Pixels inside the mask are copied unchanged.
inline Image blur_outside(const Image& img, const Mask& mask, int blur_radius) {
  require_same_geometry(img, mask);
  Image out = gaussian_blur(img, blur_radius);
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      if (mask.bitmap.get(y, x)) out.set(y, x, img.at(y, x));
  return out;
}

/// Non-target pixels set to `fill` (black for the masking strategy).
inline Image mask_outside(const Image& img, const Mask& mask, Rgb fill = kBlack) {
  require_same_geometry(img, mask);
  Image out = img;
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      if (!mask.bitmap.get(y, x)) out.set(y, x, fill);
  return out;
}

// ---------------------------------------------------------------------------
// Geometry

/// Tightest box around the mask, grown by margin_fraction of its own
/// height/width on each side and clamped to the image.
inline BBox bounding_box(const Mask& mask, double margin_fraction) {
  const int h = mask.height(), w = mask.width();
  int top = h, left = w, bottom = 0, right = 0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!mask.bitmap.get(y, x)) continue;
      top = std::min(top, y);
      bottom = std::max(bottom, y + 1);
      left = std::min(left, x);
      right = std::max(right, x + 1);
    }
  }
  if (bottom == 0) throw EmptyMaskError("bounding box of empty mask for \"" + mask.entity_label + "\"");
  const int my = static_cast<int>(std::lround(margin_fraction * (bottom - top)));
  const int mx = static_cast<int>(std::lround(margin_fraction * (right - left)));
  return BBox{std::max(0, top - my), std::max(0, left - mx), std::min(h, bottom + my),
              std::min(w, right + mx)};
}

inline Image crop(const Image& img, const BBox& b) {
  if (!bbox_valid_for(b, img.height(), img.width())) throw GeometryError("bounding box outside image");
  Image out(b.height(), b.width());
  for (int y = 0; y < b.height(); ++y)
    std::memcpy(out.px(y, 0), img.px(b.top + y, b.left), static_cast<size_t>(b.width()) * 3);
  return out;
}

/// Bilinear resample with pixel-centre alignment and clamped edges.
inline Image resize_bilinear(const Image& src, int out_h, int out_w) {
  const int h = src.height(), w = src.width();
  Image out(out_h, out_w);
  const double sy = static_cast<double>(h) / out_h;
  const double sx = static_cast<double>(w) / out_w;
  for (int oy = 0; oy < out_h; ++oy) {
    const double fy = std::clamp((oy + 0.5) * sy - 0.5, 0.0, static_cast<double>(h - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, h - 1);
    const double wy = fy - y0;
    for (int ox = 0; ox < out_w; ++ox) {
      const double fx = std::clamp((ox + 0.5) * sx - 0.5, 0.0, static_cast<double>(w - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, w - 1);
      const double wx = fx - x0;
      const auto *p00 = src.px(y0, x0), *p01 = src.px(y0, x1), *p10 = src.px(y1, x0), *p11 = src.px(y1, x1);
      auto* q = out.px(oy, ox);
      for (int c = 0; c < 3; ++c) {
        const double v = (1 - wy) * ((1 - wx) * p00[c] + wx * p01[c]) + wy * ((1 - wx) * p10[c] + wx * p11[c]);
        q[c] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
    }
  }
  return out;
}

/// Where the scaled crop lands inside the padded target.
struct PlacedContent {
  int height = 0;
  int width = 0;
  int offset_y = 0;
  int offset_x = 0;
};

inline PlacedContent place_content(int crop_h, int crop_w, int target_h, int target_w) {
  const double scale = std::min(static_cast<double>(target_h) / crop_h, static_cast<double>(target_w) / crop_w);
  PlacedContent p;
  p.height = std::clamp(static_cast<int>(std::lround(crop_h * scale)), 1, target_h);
  p.width = std::clamp(static_cast<int>(std::lround(crop_w * scale)), 1, target_w);
  p.offset_y = (target_h - p.height) / 2;
  p.offset_x = (target_w - p.width) / 2;
  return p;
}

/// Crop to the box, scale so the longer side fills its target dimension, and
/// centre on a white canvas of exactly target_h x target_w.
inline Image crop_resize(const Image& img, const BBox& b, int target_h, int target_w) {
  if (target_h <= 0 || target_w <= 0) throw GeometryError("resize target must be positive");
  Image cropped = crop(img, b);
  const auto place = place_content(cropped.height(), cropped.width(), target_h, target_w);
  Image scaled = (place.height == cropped.height() && place.width == cropped.width())
                     ? std::move(cropped)
                     : resize_bilinear(cropped, place.height, place.width);
  Image out(target_h, target_w, kWhite);
  for (int y = 0; y < place.height; ++y)
    std::memcpy(out.px(place.offset_y + y, place.offset_x), scaled.px(y, 0), static_cast<size_t>(place.width) * 3);
  return out;
}

// ---------------------------------------------------------------------------
// Strategies

struct LocalizeParams {
  double margin_fraction = 0.1;
  double blur_radius_fraction = 0.05;
  int min_blur_radius = 3;
  // Zero means "same as the source image".
  int target_h = 0;
  int target_w = 0;
};

inline LocalizedView localize(const Image& img, const Mask& mask, Strategy strategy,
                              const LocalizeParams& params = {}) {
  LocalizedView view;
  view.requested = strategy;
  view.strategy = strategy;
  if (strategy == Strategy::kNone) {
    view.pixels = img;
    return view;
  }
  require_same_geometry(img, mask);
  if (!mask.found || mask.empty()) {
    view.pixels = img;
    view.strategy = Strategy::kNone;
    view.fallback_used = true;
    view.source_mask = mask;
    return view;
  }
  view.source_mask = mask;
  const int th = params.target_h > 0 ? params.target_h : img.height();
  const int tw = params.target_w > 0 ? params.target_w : img.width();
  const int radius = blur_radius_for(img.height(), img.width(), params.blur_radius_fraction, params.min_blur_radius);

  Image composite;
  switch (strategy) {
    case Strategy::kMask:
    case Strategy::kMaskCrop: composite = mask_outside(img, mask); break;
    case Strategy::kBlur:
    case Strategy::kBlurCrop: composite = blur_outside(img, mask, radius); break;
    case Strategy::kCrop: composite = img; break;
    case Strategy::kNone: break;
  }
  if (involves_crop(strategy)) {
    view.bbox = bounding_box(mask, params.margin_fraction);
    view.pixels = crop_resize(composite, *view.bbox, th, tw);
  } else {
    view.pixels = std::move(composite);
  }
  return view;
}

/// Audit sidecar written next to a persisted view.
inline nlohmann::json view_sidecar(const LocalizedView& v) {
  nlohmann::json j;
  j["strategy"] = std::string(to_string(v.strategy));
  j["requested_strategy"] = std::string(to_string(v.requested));
  if (v.bbox) {
    j["bbox"] = {{"top", v.bbox->top}, {"left", v.bbox->left}, {"bottom", v.bbox->bottom}, {"right", v.bbox->right}};
  } else {
    j["bbox"] = nullptr;
  }
  j["fallback_used"] = v.fallback_used;
  j["mask_confidence"] = v.source_mask ? nlohmann::json(v.source_mask->confidence) : nlohmann::json(nullptr);
  return j;
}

// ---------------------------------------------------------------------------
// Run-length masks on the wire: {"size": [h, w], "counts": [...]}, row-major,
// alternating runs starting with a (possibly empty) run of zeros.

inline nlohmann::json rle_encode(const Bitmap& m) {
  nlohmann::json counts = nlohmann::json::array();
  bool current = false;
  long run = 0;
  for (auto cell : m.cells()) {
    if ((cell != 0) != current) {
      counts.push_back(run);
      run = 0;
      current = !current;
    }
    ++run;
  }
  counts.push_back(run);
  return {{"size", {m.height(), m.width()}}, {"counts", counts}};
}

inline Bitmap rle_decode(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("size") || !j.contains("counts"))
    throw ProtocolError("mask must be an object with \"size\" and \"counts\"");
  const auto& size = j.at("size");
  if (!size.is_array() || size.size() != 2 || !size[0].is_number_integer() || !size[1].is_number_integer())
    throw ProtocolError("mask \"size\" must be [height, width]");
  const int h = size[0].get<int>(), w = size[1].get<int>();
  if (h <= 0 || w <= 0) throw ProtocolError("mask size must be positive");
  const auto& counts = j.at("counts");
  if (!counts.is_array()) throw ProtocolError("mask \"counts\" must be an array");
  Bitmap m(h, w);
  const long total = static_cast<long>(h) * w;
  long pos = 0;
  bool value = false;
  for (const auto& c : counts) {
    if (!c.is_number_integer() || c.get<long>() < 0) throw ProtocolError("mask run lengths must be non-negative integers");
    const long n = c.get<long>();
    if (pos + n > total) throw ProtocolError("mask runs exceed mask size");
    if (value)
      for (long k = pos; k < pos + n; ++k) m.set(static_cast<int>(k / w), static_cast<int>(k % w));
    pos += n;
    value = !value;
  }
  if (pos != total) throw ProtocolError("mask runs do not cover mask size");
  return m;
}

// ---------------------------------------------------------------------------
// Segmentation contract

struct SegmentationCandidate {
  Bitmap mask;
  double confidence = 0.0;
};

/// Maps (image, class label) to zero or more scored candidate masks.
/// Implementations must tolerate concurrent calls.
class SegmentationBackend {
 public:
  virtual ~SegmentationBackend() = default;
  virtual std::string model_id() const = 0;
  virtual std::vector<SegmentationCandidate> candidates(const Image& image, std::string_view label) const = 0;
};

/// Union of every candidate at or above the confidence threshold. Returns a
/// not-found empty mask when nothing qualifies.
inline Mask segment(const SegmentationBackend& backend, const Image& image, std::string_view entity_label,
                    double confidence_threshold = 0.5) {
  if (entity_label.empty()) throw ConfigError("segmentation label is empty");
  Mask out = empty_mask(image.height(), image.width(), std::string(entity_label));
  for (auto& cand : backend.candidates(image, entity_label)) {
    if (!(cand.confidence >= 0.0 && cand.confidence <= 1.0))
      throw ProtocolError("segmentation confidence outside [0,1]");
    if (cand.mask.height() != image.height() || cand.mask.width() != image.width())
      throw ProtocolError("segmentation mask does not match image dimensions");
    if (cand.confidence < confidence_threshold) continue;
    out.bitmap.unite(cand.mask);
    out.confidence = std::max(out.confidence, cand.confidence);
  }
  out.found = out.bitmap.any();
  if (!out.found) out.confidence = 0.0;
  return out;
}

}  // namespace lvqa
