#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "nmae/augment.hpp"
#include "nmae/geo.hpp"

using namespace nmae;

namespace {

// Pixel-center geolocation oracle: rasterize the source footprint at the
// image resolution and read the crop-corner coordinates back off the grid.
GeoBBox crop_bbox_rasterized(const GeoBBox& src, const CropParams& crop, int H, int W) {
  auto lat_of_row_edge = [&](int r) { return src.phi_max - (src.phi_max - src.phi_min) * double(r) / H; };
  auto lon_of_col_edge = [&](int c) { return src.lambda_min + (src.lambda_max - src.lambda_min) * double(c) / W; };
  return {lat_of_row_edge(crop.i + crop.h), lat_of_row_edge(crop.i), lon_of_col_edge(crop.j),
          lon_of_col_edge(crop.j + crop.w)};
}

Image noise_image(int h, int w, Rng& rng) {
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  Image img(h, w, 3);
  for (auto& v : img.data) v = dist(rng);
  return img;
}

}  // namespace

TEST_CASE("crop_bbox identity and derived examples") {
  const GeoBBox src{0, 1, 0, 1};
  const GeoBBox full = crop_bbox(src, {0, 0, 100, 100}, 100, 100);
  CHECK(full.phi_min == src.phi_min);
  CHECK(full.phi_max == src.phi_max);
  CHECK(full.lambda_min == src.lambda_min);
  CHECK(full.lambda_max == src.lambda_max);

  const GeoBBox top_half = crop_bbox(src, {0, 0, 50, 100}, 100, 100);
  CHECK(top_half.phi_min == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(top_half.phi_max == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(top_half.lambda_min == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(top_half.lambda_max == doctest::Approx(1.0).epsilon(1e-12));

  const GeoBBox src2{10, 20, 30, 40};
  const GeoBBox sub = crop_bbox(src2, {25, 50, 50, 25}, 100, 100);
  CHECK(sub.phi_min == doctest::Approx(12.5).epsilon(1e-12));
  CHECK(sub.phi_max == doctest::Approx(17.5).epsilon(1e-12));
  CHECK(sub.lambda_min == doctest::Approx(35.0).epsilon(1e-12));
  CHECK(sub.lambda_max == doctest::Approx(37.5).epsilon(1e-12));

  const GeoBBox oracle = crop_bbox_rasterized(src2, {25, 50, 50, 25}, 100, 100);
  CHECK(sub.phi_min == doctest::Approx(oracle.phi_min).epsilon(1e-12));
  CHECK(sub.phi_max == doctest::Approx(oracle.phi_max).epsilon(1e-12));
  CHECK(sub.lambda_min == doctest::Approx(oracle.lambda_min).epsilon(1e-12));
  CHECK(sub.lambda_max == doctest::Approx(oracle.lambda_max).epsilon(1e-12));
}

TEST_CASE("crop_bbox errors on out-of-bounds windows") {
  const GeoBBox src{0, 1, 0, 1};
  CHECK_THROWS_AS(crop_bbox(src, {0, 0, 101, 100}, 100, 100), std::invalid_argument);
  CHECK_THROWS_AS(crop_bbox(src, {-1, 0, 10, 10}, 100, 100), std::invalid_argument);
  CHECK_THROWS_AS(crop_bbox(src, {0, 95, 10, 10}, 100, 100), std::invalid_argument);
}

TEST_CASE("crop_bbox composition and containment properties") {
  Rng rng(21);
  std::uniform_int_distribution<int> dim(50, 200);
  std::uniform_real_distribution<double> geo(-50.0, 50.0);
  for (int trial = 0; trial < 100; ++trial) {
    const int H = dim(rng), W = dim(rng);
    double p0 = geo(rng), l0 = geo(rng);
    const GeoBBox src{p0, p0 + 1 + std::abs(geo(rng)), l0, l0 + 1 + std::abs(geo(rng))};
    std::uniform_int_distribution<int> ri(0, H / 2), rj(0, W / 2);
    const CropParams outer{ri(rng), rj(rng), H / 2, W / 2};
    const GeoBBox mid = crop_bbox(src, outer, H, W);
    CHECK(src.contains(mid));
    // degrees-per-pixel preserved
    CHECK((mid.phi_max - mid.phi_min) / outer.h ==
          doctest::Approx((src.phi_max - src.phi_min) / H).epsilon(1e-12));

    const CropParams inner{outer.h / 4, outer.w / 4, outer.h / 2, outer.w / 2};
    const GeoBBox twice = crop_bbox(mid, inner, outer.h, outer.w);
    const CropParams composed{outer.i + inner.i, outer.j + inner.j, inner.h, inner.w};
    const GeoBBox once = crop_bbox(src, composed, H, W);
    CHECK(twice.phi_min == doctest::Approx(once.phi_min).epsilon(1e-12));
    CHECK(twice.phi_max == doctest::Approx(once.phi_max).epsilon(1e-12));
    CHECK(twice.lambda_min == doctest::Approx(once.lambda_min).epsilon(1e-12));
    CHECK(twice.lambda_max == doctest::Approx(once.lambda_max).epsilon(1e-12));
  }
}

TEST_CASE("random_resized_crop degenerate scale keeps the full footprint") {
  Rng rng(3);
  ImageRecord rec{"a", "", {5, 6, 7, 8}, 64, 64, {}};
  const Image pixels = noise_image(64, 64, rng);
  AugConfig cfg;
  cfg.input_size = 32;
  cfg.crop_scale_lo = cfg.crop_scale_hi = 1.0;
  cfg.aspect_lo = cfg.aspect_hi = 1.0;
  const auto out = random_resized_crop(rec, pixels, rng, cfg);
  CHECK(out.bbox.phi_min == rec.bbox.phi_min);
  CHECK(out.bbox.phi_max == rec.bbox.phi_max);
  CHECK(out.bbox.lambda_min == rec.bbox.lambda_min);
  CHECK(out.bbox.lambda_max == rec.bbox.lambda_max);
  CHECK(out.pixels.height == 32);
  CHECK(out.pixels.width == 32);
}

TEST_CASE("random_resized_crop deterministic under seed") {
  Rng rng(3);
  ImageRecord rec{"a", "", {5, 6, 7, 8}, 48, 48, {}};
  const Image pixels = noise_image(48, 48, rng);
  AugConfig cfg;
  cfg.input_size = 32;
  Rng r1(77), r2(77);
  const auto a = random_resized_crop(rec, pixels, r1, cfg);
  const auto b = random_resized_crop(rec, pixels, r2, cfg);
  CHECK(a.bbox.phi_min == b.bbox.phi_min);
  CHECK(a.bbox.lambda_max == b.bbox.lambda_max);
  CHECK(a.pixels.data == b.pixels.data);
}

TEST_CASE("random_resized_crop area fraction is uniform on the scale range") {
  // Aspect pinned to 1:1 so no window is ever rejected; the realized area
  // fraction then follows the sampled law directly.
  Rng rng(5);
  ImageRecord rec{"a", "", {0, 1, 0, 1}, 200, 200, {}};
  const Image pixels = noise_image(200, 200, rng);
  AugConfig cfg;
  cfg.input_size = 8;
  cfg.aspect_lo = cfg.aspect_hi = 1.0;
  const int n = 10000;
  std::vector<int> bins(8, 0);
  for (int k = 0; k < n; ++k) {
    const auto out = random_resized_crop(rec, pixels, rng, cfg);
    const double frac = out.bbox.area() / rec.bbox.area();
    CHECK(frac >= 0.18);
    CHECK(frac <= 1.02);
    const int bin = std::clamp(int((frac - 0.2) / 0.8 * 8.0), 0, 7);
    ++bins[bin];
  }
  for (int b = 0; b < 8; ++b)
    CHECK(double(bins[b]) / n == doctest::Approx(1.0 / 8.0).epsilon(0.16));
}

TEST_CASE("augment_pair containment, IoU propagation, self-pair independence") {
  Rng rng(31);
  ImageRecord ra{"a", "", {0, 1, 0, 1}, 64, 64, {}};
  ImageRecord rb{"b", "", {0, 1, 0.6, 1.6}, 64, 64, {}};
  const Image pa = noise_image(64, 64, rng);
  const Image pb = noise_image(64, 64, rng);
  auto loader = [&](const ImageRecord& r) { return r.id == "a" ? pa : pb; };
  AugConfig cfg;
  cfg.input_size = 32;

  for (int trial = 0; trial < 20; ++trial) {
    auto [ai, aj] = augment_pair(ra, rb, loader, rng, cfg);
    CHECK(ra.bbox.contains(ai.bbox));
    CHECK(rb.bbox.contains(aj.bbox));
  }

  // identity crops keep the source IoU
  AugConfig idc = cfg;
  idc.crop_scale_lo = idc.crop_scale_hi = 1.0;
  idc.aspect_lo = idc.aspect_hi = 1.0;
  auto [ai, aj] = augment_pair(ra, rb, loader, rng, idc);
  CHECK(iou(ai.bbox, aj.bbox) == doctest::Approx(iou(ra.bbox, rb.bbox)).epsilon(1e-12));

  // self-pair: two independent draws give distinct footprints
  auto [s1, s2] = augment_pair(ra, ra, loader, rng, cfg);
  const bool distinct = s1.bbox.phi_min != s2.bbox.phi_min ||
                        s1.bbox.lambda_min != s2.bbox.lambda_min ||
                        s1.bbox.phi_max != s2.bbox.phi_max;
  CHECK(distinct);
}
