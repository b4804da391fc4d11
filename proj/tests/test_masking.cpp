#include <doctest.h>

#include <numeric>

#include "nmae/masking.hpp"

using namespace nmae;

TEST_CASE("dynamic_mask_ratio endpoints and affinity") {
  MaskConfig cfg;  // 0.75 .. 0.85
  CHECK(dynamic_mask_ratio(0.0, cfg) == 0.75);
  CHECK(dynamic_mask_ratio(1.0, cfg) == 0.85);
  CHECK(dynamic_mask_ratio(0.5, cfg) == doctest::Approx(0.80).epsilon(1e-12));

  // affine in iou, monotone when m2 >= m1
  Rng rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double prev = -1.0;
  for (int k = 0; k <= 100; ++k) {
    const double iou = k / 100.0;
    const double r = dynamic_mask_ratio(iou, cfg);
    CHECK(r == doctest::Approx(0.75 + 0.1 * iou).epsilon(1e-12));
    CHECK(r >= prev);
    prev = r;
  }

  // constant schedule collapses to a fixed ratio
  MaskConfig flat{0.75, 0.75};
  for (int k = 0; k < 10; ++k) CHECK(dynamic_mask_ratio(u(rng), flat) == 0.75);
}

TEST_CASE("sample_mask counts") {
  Rng rng(5);
  // 14x14 grid at ratio 0.75: 147 masked, 49 kept
  const auto m = sample_mask(14, 14, 0.75, rng);
  CHECK(m.rows == 14);
  CHECK(m.cols == 14);
  CHECK(std::count(m.mask.begin(), m.mask.end(), true) == 147);
  CHECK(m.keep_count == 49);
  CHECK(int(m.visible_indices().size()) == 49);
  CHECK(int(m.masked_indices().size()) == 147);
}

TEST_CASE("sample_mask rounding and edge ratios") {
  Rng rng(5);
  auto count = [&](int r, int c, double ratio) {
    const auto m = sample_mask(r, c, ratio, rng);
    return int(std::count(m.mask.begin(), m.mask.end(), true));
  };
  CHECK(count(4, 4, 0.78) == 12);  // 12.48 rounds down
  CHECK(count(4, 4, 0.72) == 12);  // 11.52 rounds up
  CHECK(count(4, 4, 0.0) == 0);
  CHECK(count(2, 2, 0.1) == 1);   // at least one masked when ratio > 0
  const auto near_full = sample_mask(2, 2, 0.99, rng);
  CHECK(near_full.keep_count >= 1);  // never mask everything
}

TEST_CASE("sample_mask is uniform over patches") {
  Rng rng(7);
  const int rows = 4, cols = 4, n = 40000;
  std::vector<int> hits(rows * cols, 0);
  for (int k = 0; k < n; ++k) {
    const auto m = sample_mask(rows, cols, 0.75, rng);
    for (int p = 0; p < rows * cols; ++p) hits[p] += m.mask[p];
  }
  for (int p = 0; p < rows * cols; ++p)
    CHECK(double(hits[p]) / n == doctest::Approx(0.75).epsilon(0.01));
}

TEST_CASE("mask_pair shares the ratio but draws independent masks") {
  MaskConfig cfg;
  GeoBBox bi{0, 1, 0, 1}, bj{0, 1, 0.5, 1.5};  // IoU 1/3
  Rng ri(11), rj(12);
  auto [mi, mj, ratio] = mask_pair(bi, bj, 8, 8, cfg, ri, rj);
  CHECK(ratio == doctest::Approx(0.75 + 0.1 / 3.0).epsilon(1e-12));
  const int want = int(std::floor(64 * ratio + 0.5));
  CHECK(std::count(mi.mask.begin(), mi.mask.end(), true) == want);
  CHECK(std::count(mj.mask.begin(), mj.mask.end(), true) == want);
  CHECK(mi.mask != mj.mask);

  // deterministic given rng states
  Rng ri2(11), rj2(12);
  auto [ni, nj, r2] = mask_pair(bi, bj, 8, 8, cfg, ri2, rj2);
  CHECK(ni.mask == mi.mask);
  CHECK(nj.mask == mj.mask);
  CHECK(r2 == ratio);
}
