#include "nmae/masking.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace nmae {

std::vector<int> PatchMask::visible_indices() const {
  std::vector<int> out;
  for (int i = 0; i < size(); ++i)
    if (!mask[i]) out.push_back(i);
  return out;
}

std::vector<int> PatchMask::masked_indices() const {
  std::vector<int> out;
  for (int i = 0; i < size(); ++i)
    if (mask[i]) out.push_back(i);
  return out;
}

double dynamic_mask_ratio(double iou, const MaskConfig& cfg) {
  if (!(iou >= 0.0 && iou <= 1.0)) throw std::invalid_argument("dynamic_mask_ratio: iou not in [0,1]");
  if (!(cfg.m1 >= 0.0 && cfg.m1 <= cfg.m2 && cfg.m2 <= 1.0))
    throw std::invalid_argument("dynamic_mask_ratio: need 0 <= m1 <= m2 <= 1");
  return cfg.m1 + iou * (cfg.m2 - cfg.m1);
}

PatchMask sample_mask(int rows, int cols, double ratio, Rng& rng) {
  if (rows < 1 || cols < 1) throw std::invalid_argument("sample_mask: empty grid");
  if (!(ratio >= 0.0 && ratio < 1.0)) throw std::invalid_argument("sample_mask: ratio not in [0,1)");
  const int n = rows * cols;
  int n_masked = int(std::floor(n * ratio + 0.5));
  if (ratio > 0.0 && n_masked == 0 && n > 1) n_masked = 1;
  if (n_masked >= n) n_masked = n - 1;  // keep at least one patch visible

  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);

  PatchMask pm;
  pm.rows = rows;
  pm.cols = cols;
  pm.mask.assign(n, false);
  for (int k = 0; k < n_masked; ++k) pm.mask[perm[k]] = true;
  pm.keep_count = n - n_masked;
  return pm;
}

std::tuple<PatchMask, PatchMask, double> mask_pair(const GeoBBox& bbox_i, const GeoBBox& bbox_j,
                                                   int rows, int cols, const MaskConfig& cfg,
                                                   Rng& rng_i, Rng& rng_j) {
  const double ratio = dynamic_mask_ratio(iou(bbox_i, bbox_j), cfg);
  PatchMask mi = sample_mask(rows, cols, ratio, rng_i);
  PatchMask mj = sample_mask(rows, cols, ratio, rng_j);
  return {std::move(mi), std::move(mj), ratio};
}

}  // namespace nmae
