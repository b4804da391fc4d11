#pragma once

#include <tuple>
#include <vector>

#include "nmae/geo.hpp"
#include "nmae/random.hpp"

namespace nmae {

struct MaskConfig {
  double m1 = 0.75;
  double m2 = 0.85;
};

// Boolean patch grid, true = masked.
struct PatchMask {
  int rows = 0;
  int cols = 0;
  std::vector<bool> mask;  // row-major
  int keep_count = 0;

  bool masked(int r, int c) const { return mask[std::size_t(r) * cols + c]; }
  int size() const { return rows * cols; }
  std::vector<int> visible_indices() const;
  std::vector<int> masked_indices() const;
};

// Pair difficulty schedule: m1 + iou * (m2 - m1).
double dynamic_mask_ratio(double iou, const MaskConfig& cfg);

// Masks round(rows*cols*ratio) patches uniformly without replacement,
// half-up rounding. Always keeps at least one patch, and masks at least one
// when 0 < ratio < 1.
PatchMask sample_mask(int rows, int cols, double ratio, Rng& rng);

// One ratio per pair, from the IoU of the post-augmentation footprints; the
// two masks are independent draws at that shared ratio.
std::tuple<PatchMask, PatchMask, double> mask_pair(const GeoBBox& bbox_i, const GeoBBox& bbox_j,
                                                   int rows, int cols, const MaskConfig& cfg,
                                                   Rng& rng_i, Rng& rng_j);

}  // namespace nmae
