#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "lvqa/localization.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

namespace lvqa {
namespace {

using testing::random_image;
using testing::rect_mask;

Mask random_mask(std::mt19937& rng, int h, int w, double density) {
  std::bernoulli_distribution on(density);
  Mask m = empty_mask(h, w, "x");
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (on(rng)) m.bitmap.set(y, x);
  m.found = m.bitmap.any();
  m.confidence = 1.0;
  return m;
}

// Direct 2-D convolution with the outer product of the 1-D Gaussian.
Image blur_oracle(const Image& src, int radius) {
  const double sigma = radius / 2.0;
  std::vector<double> g;
  double sum = 0;
  for (int i = -radius; i <= radius; ++i) {
    g.push_back(std::exp(-(i * i) / (2 * sigma * sigma)));
    sum += g.back();
  }
  const int h = src.height(), w = src.width();
  Image out(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        double acc = 0;
        for (int dy = -radius; dy <= radius; ++dy)
          for (int dx = -radius; dx <= radius; ++dx) {
            const int yy = std::min(std::max(y + dy, 0), h - 1), xx = std::min(std::max(x + dx, 0), w - 1);
            acc += g[dy + radius] * g[dx + radius] / (sum * sum) * src.px(yy, xx)[c];
          }
        out.px(y, x)[c] = static_cast<std::uint8_t>(std::lround(acc));
      }
  return out;
}

TEST(Blur, KernelIsNormalizedAndSymmetric) {
  for (int r = 1; r <= 12; ++r) {
    auto k = gaussian_kernel(r);
    ASSERT_EQ(k.size(), static_cast<size_t>(2 * r + 1));
    double s = 0;
    for (double v : k) s += v;
    EXPECT_NEAR(s, 1.0, 1e-12);
    for (int i = 0; i < r; ++i) EXPECT_DOUBLE_EQ(k[i], k[2 * r - i]);
  }
  EXPECT_THROW(gaussian_kernel(0), GeometryError);
}

TEST(Blur, MatchesDirectConvolution) {
  std::mt19937 rng(3);
  for (int r : {1, 3, 5}) {
    auto img = random_image(rng, 17, 23);
    auto fast = gaussian_blur(img, r);
    auto ref = blur_oracle(img, r);
    for (size_t i = 0; i < fast.bytes().size(); ++i)
      ASSERT_LE(std::abs(int(fast.bytes()[i]) - int(ref.bytes()[i])), 1) << "radius " << r << " byte " << i;
  }
}

TEST(Blur, ConstantImageIsFixedPoint) {
  Image img(20, 30, Rgb{12, 200, 77});
  EXPECT_EQ(gaussian_blur(img, 4), img);
}

TEST(Blur, RadiusDefaultsToFivePercentOfShorterSide) {
  EXPECT_EQ(blur_radius_for(400, 600, 0.05), 20);
  EXPECT_EQ(blur_radius_for(40, 60, 0.05), 3);
  EXPECT_EQ(blur_radius_for(100, 100, 0.05, 1), 5);
}

TEST(BlurOutside, PreservesMaskedPixelsExactly) {
  std::mt19937 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    auto img = random_image(rng, 24, 31);
    auto m = random_mask(rng, 24, 31, 0.3);
    auto out = blur_outside(img, m, 3);
    auto blurred = gaussian_blur(img, 3);
    for (int y = 0; y < 24; ++y)
      for (int x = 0; x < 31; ++x)
        ASSERT_EQ(out.at(y, x), m.bitmap.get(y, x) ? img.at(y, x) : blurred.at(y, x));
  }
}

TEST(BlurOutside, GeometryMismatchThrows) {
  EXPECT_THROW(blur_outside(Image(10, 10), full_mask(10, 11), 3), GeometryError);
  EXPECT_THROW(mask_outside(Image(10, 10), full_mask(9, 10)), GeometryError);
}

TEST(MaskOutside, BlacksOutNonTargetPixels) {
  std::mt19937 rng(9);
  auto img = random_image(rng, 10, 12);
  auto m = rect_mask(10, 12, 2, 3, 6, 9);
  auto out = mask_outside(img, m);
  for (int y = 0; y < 10; ++y)
    for (int x = 0; x < 12; ++x) EXPECT_EQ(out.at(y, x), m.bitmap.get(y, x) ? img.at(y, x) : kBlack);
}

TEST(BoundingBox, SinglePixelWithoutMargin) {
  EXPECT_EQ(bounding_box(rect_mask(32, 32, 10, 10, 11, 11), 0.0), (BBox{10, 10, 11, 11}));
}

TEST(BoundingBox, MarginScalesWithOwnSize) {
  // Rows [10, 20) and cols [10, 30): margins of 1 and 2 pixels.
  EXPECT_EQ(bounding_box(rect_mask(64, 64, 10, 10, 20, 30), 0.1), (BBox{9, 8, 21, 32}));
}

TEST(BoundingBox, ClampsToImage) {
  EXPECT_EQ(bounding_box(rect_mask(20, 20, 0, 0, 20, 20), 0.5), (BBox{0, 0, 20, 20}));
  EXPECT_EQ(bounding_box(rect_mask(20, 20, 15, 1, 20, 5), 0.5), (BBox{12, 0, 20, 7}));
}

TEST(BoundingBox, EmptyMaskThrows) {
  EXPECT_THROW(bounding_box(empty_mask(5, 5, "shirt"), 0.1), EmptyMaskError);
}

TEST(BoundingBox, MatchesProjectionOracleOnRandomMasks) {
  std::mt19937 rng(13);
  std::uniform_real_distribution<double> margin(0.0, 0.6), density(0.001, 0.2);
  std::uniform_int_distribution<int> dim(1, 48);
  int checked = 0;
  while (checked < 1000) {
    const int h = dim(rng), w = dim(rng);
    auto m = random_mask(rng, h, w, density(rng));
    if (m.empty()) continue;
    ++checked;
    const double f = margin(rng);
    const BBox want = oracle::bbox(m.bitmap, f);
    ASSERT_EQ(bounding_box(m, f), want);
    ASSERT_EQ(bounding_box(m, 0.0), oracle::bbox(m.bitmap, 0.0));
    ASSERT_TRUE(bbox_valid_for(want, h, w));
  }
}

void expect_crop_resize_matches_oracle(const Image& img, const BBox& b, int th, int tw) {
  auto out = crop_resize(img, b, th, tw);
  ASSERT_EQ(out.height(), th);
  ASSERT_EQ(out.width(), tw);
  auto want = oracle::crop_resize(img, b, th, tw);
  // Padding and unscaled content must match exactly; interpolated content
  // may differ by one level where the two samplers round a .5 differently.
  const auto placed = place_content(b.height(), b.width(), th, tw);
  const bool scaled = placed.height != b.height() || placed.width != b.width();
  for (int y = 0; y < th; ++y)
    for (int x = 0; x < tw; ++x) {
      if (scaled && oracle::inside(placed, y, x))
        ASSERT_TRUE(oracle::within_one(out.at(y, x), want.at(y, x))) << "pixel " << y << "," << x;
      else
        ASSERT_EQ(out.at(y, x), want.at(y, x)) << "pixel " << y << "," << x;
    }
}

TEST(CropResize, TallCropGetsWhiteSideBands) {
  std::mt19937 rng(17);
  auto img = random_image(rng, 120, 80);
  const BBox b{10, 15, 110, 65};  // 100 x 50
  auto out = crop_resize(img, b, 200, 200);
  for (int y = 0; y < 200; ++y)
    for (int x = 0; x < 50; ++x) {
      ASSERT_EQ(out.at(y, x), kWhite);
      ASSERT_EQ(out.at(y, 199 - x), kWhite);
    }
  EXPECT_EQ(place_content(100, 50, 200, 200).width, 100);
  EXPECT_EQ(place_content(100, 50, 200, 200).height, 200);
  EXPECT_EQ(place_content(100, 50, 200, 200).offset_x, 50);
}

TEST(CropResize, MatchesReferenceSamplerOnSyntheticRasters) {
  std::mt19937 rng(19);
  std::uniform_int_distribution<int> dim(4, 40), tdim(1, 64);
  for (int trial = 0; trial < 40; ++trial) {
    const int h = dim(rng), w = dim(rng);
    auto img = random_image(rng, h, w);
    std::uniform_int_distribution<int> ty(0, h - 1), tx(0, w - 1);
    int t = ty(rng), l = tx(rng);
    int b = std::uniform_int_distribution<int>(t + 1, h)(rng), r = std::uniform_int_distribution<int>(l + 1, w)(rng);
    expect_crop_resize_matches_oracle(img, BBox{t, l, b, r}, tdim(rng), tdim(rng));
  }
  auto img = random_image(rng, 30, 30);
  expect_crop_resize_matches_oracle(img, BBox{5, 5, 15, 25}, 10, 20);  // identity scale
}

TEST(CropResize, RejectsBadInput) {
  Image img(10, 10);
  EXPECT_THROW(crop_resize(img, BBox{0, 0, 11, 5}, 5, 5), GeometryError);
  EXPECT_THROW(crop_resize(img, BBox{0, 0, 5, 5}, 0, 5), GeometryError);
}

TEST(Localize, StrategiesComposeTheirPieces) {
  std::mt19937 rng(23);
  auto img = random_image(rng, 40, 50);
  auto m = rect_mask(40, 50, 10, 12, 25, 30, "shirt");
  LocalizeParams params;
  params.target_h = 32;
  params.target_w = 32;
  const int radius = blur_radius_for(40, 50, params.blur_radius_fraction, params.min_blur_radius);
  const BBox box = bounding_box(m, params.margin_fraction);

  EXPECT_EQ(localize(img, m, Strategy::kNone, params).pixels, img);
  EXPECT_EQ(localize(img, m, Strategy::kMask, params).pixels, mask_outside(img, m));
  EXPECT_EQ(localize(img, m, Strategy::kBlur, params).pixels, blur_outside(img, m, radius));
  EXPECT_EQ(localize(img, m, Strategy::kCrop, params).pixels, crop_resize(img, box, 32, 32));
  EXPECT_EQ(localize(img, m, Strategy::kMaskCrop, params).pixels, crop_resize(mask_outside(img, m), box, 32, 32));
  auto bc = localize(img, m, Strategy::kBlurCrop, params);
  EXPECT_EQ(bc.pixels, crop_resize(blur_outside(img, m, radius), box, 32, 32));
  ASSERT_TRUE(bc.bbox.has_value());
  EXPECT_EQ(*bc.bbox, box);
  EXPECT_FALSE(bc.fallback_used);

  auto side = view_sidecar(bc);
  EXPECT_EQ(side["strategy"], "blur_crop");
  EXPECT_EQ(side["bbox"]["left"], box.left);
}

TEST(Localize, DefaultTargetIsSourceSize) {
  std::mt19937 rng(29);
  auto img = random_image(rng, 21, 34);
  auto v = localize(img, rect_mask(21, 34, 3, 3, 9, 9), Strategy::kCrop);
  EXPECT_EQ(v.pixels.height(), 21);
  EXPECT_EQ(v.pixels.width(), 34);
}

TEST(Localize, MissingMaskFallsBackToFullImage) {
  std::mt19937 rng(31);
  auto img = random_image(rng, 16, 16);
  for (auto s : kAllStrategies) {
    auto v = localize(img, empty_mask(16, 16, "hat"), s);
    EXPECT_EQ(v.pixels, img);
    EXPECT_EQ(v.strategy, Strategy::kNone);
    EXPECT_EQ(v.fallback_used, s != Strategy::kNone);
  }
}

TEST(Strategy, NamesRoundTrip) {
  for (auto s : kAllStrategies) EXPECT_EQ(parse_strategy(to_string(s)), s);
  EXPECT_THROW(parse_strategy("blurry"), ConfigError);
}

TEST(Rle, RoundTripsRandomBitmaps) {
  std::mt19937 rng(37);
  for (int trial = 0; trial < 100; ++trial) {
    auto m = random_mask(rng, 1 + trial % 13, 1 + trial % 17, 0.4);
    EXPECT_EQ(rle_decode(rle_encode(m.bitmap)), m.bitmap);
  }
  Bitmap full(2, 3, true);
  EXPECT_EQ(rle_encode(full)["counts"], nlohmann::json::array({0, 6}));
}

TEST(Rle, RejectsMalformedPayloads) {
  using nlohmann::json;
  EXPECT_THROW(rle_decode(json::parse(R"({"size": [2, 2], "counts": [1, 2]})")), ProtocolError);
  EXPECT_THROW(rle_decode(json::parse(R"({"size": [2, 2], "counts": [3, 3]})")), ProtocolError);
  EXPECT_THROW(rle_decode(json::parse(R"({"size": [2], "counts": [4]})")), ProtocolError);
  EXPECT_THROW(rle_decode(json::parse(R"({"counts": [4]})")), ProtocolError);
  EXPECT_THROW(rle_decode(json::parse(R"({"size": [2, 2], "counts": [-1, 5]})")), ProtocolError);
}

class FixedSegmentation : public SegmentationBackend {
 public:
  explicit FixedSegmentation(std::vector<SegmentationCandidate> c) : c_(std::move(c)) {}
  std::string model_id() const override { return "fixed"; }
  std::vector<SegmentationCandidate> candidates(const Image&, std::string_view) const override { return c_; }

 private:
  std::vector<SegmentationCandidate> c_;
};

TEST(Segment, UnionOfQualifyingCandidates) {
  Image img(10, 10);
  auto a = rect_mask(10, 10, 0, 0, 2, 2).bitmap, b = rect_mask(10, 10, 5, 5, 7, 7).bitmap,
       c = rect_mask(10, 10, 8, 8, 10, 10).bitmap;
  FixedSegmentation seg({{a, 0.9}, {b, 0.5}, {c, 0.2}});
  auto m = segment(seg, img, "shirt", 0.5);
  EXPECT_TRUE(m.found);
  EXPECT_DOUBLE_EQ(m.confidence, 0.9);
  EXPECT_EQ(m.bitmap.count(), 8u);
  EXPECT_FALSE(m.bitmap.get(9, 9));

  auto none = segment(seg, img, "shirt", 0.95);
  EXPECT_FALSE(none.found);
  EXPECT_TRUE(none.empty());
}

TEST(Segment, RejectsInconsistentBackends) {
  Image img(10, 10);
  FixedSegmentation wrong_size({{Bitmap(9, 10, true), 0.9}});
  EXPECT_THROW(segment(wrong_size, img, "shirt"), ProtocolError);
  FixedSegmentation bad_conf({{Bitmap(10, 10, true), 1.5}});
  EXPECT_THROW(segment(bad_conf, img, "shirt"), ProtocolError);
}

TEST(Png, RoundTripsThroughMemoryAndBase64) {
  std::mt19937 rng(41);
  auto img = random_image(rng, 13, 9);
  auto bytes = encode_png(img);
  EXPECT_EQ(decode_png(bytes), img);
  auto text = base64_encode(bytes);
  EXPECT_EQ(base64_decode(text), bytes);
  EXPECT_EQ(base64_encode(std::vector<std::uint8_t>{'a', 'b'}), "YWI=");
  EXPECT_EQ(base64_decode("YWI="), (std::vector<std::uint8_t>{'a', 'b'}));
  std::vector<std::uint8_t> junk{1, 2, 3};
  EXPECT_THROW(decode_png(junk), IoError);
}

}  // namespace
}  // namespace lvqa
