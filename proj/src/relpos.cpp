#include "nmae/relpos.hpp"

#include <cmath>
#include <stdexcept>

namespace nmae {

std::pair<NormalizedBBox, NormalizedBBox> normalize_pair(const GeoBBox& bbox_i,
                                                         const GeoBBox& bbox_j) {
  if (!bbox_i.valid() || !bbox_j.valid())
    throw std::invalid_argument("normalize_pair: invalid bbox");
  const double phi_lo = std::min(bbox_i.phi_min, bbox_j.phi_min);
  const double phi_hi = std::max(bbox_i.phi_max, bbox_j.phi_max);
  const double lam_lo = std::min(bbox_i.lambda_min, bbox_j.lambda_min);
  const double lam_hi = std::max(bbox_i.lambda_max, bbox_j.lambda_max);
  const double dphi = phi_hi - phi_lo;
  const double dlam = lam_hi - lam_lo;
  if (dphi <= 0.0 || dlam <= 0.0)
    throw std::invalid_argument("normalize_pair: zero-extent union");

  auto norm = [&](const GeoBBox& b) {
    NormalizedBBox n;
    n.top = (b.phi_max - phi_lo) / dphi;
    n.bottom = (b.phi_min - phi_lo) / dphi;
    n.left = (b.lambda_min - lam_lo) / dlam;
    n.right = (b.lambda_max - lam_lo) / dlam;
    return n;
  };
  return {norm(bbox_i), norm(bbox_j)};
}

std::vector<NormalizedBBox> patch_bboxes(const NormalizedBBox& nb, int rows, int cols) {
  if (rows < 1 || cols < 1) throw std::invalid_argument("patch_bboxes: grid dims must be >= 1");
  std::vector<NormalizedBBox> out;
  out.reserve(std::size_t(rows) * cols);
  const double cell_h = (nb.top - nb.bottom) / rows;
  const double cell_w = (nb.right - nb.left) / cols;
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      NormalizedBBox p;
      p.top = nb.top - r * cell_h;
      p.bottom = nb.top - (r + 1) * cell_h;
      p.left = nb.left + c * cell_w;
      p.right = nb.left + (c + 1) * cell_w;
      out.push_back(p);
    }
  return out;
}

Eigen::MatrixXd sinusoidal_embed(const std::vector<NormalizedBBox>& boxes, int d,
                                 double coord_scale) {
  if (d % 4 != 0) throw std::invalid_argument("sinusoidal_embed: d must be divisible by 4");
  const int block = d / 4;
  Eigen::MatrixXd out(boxes.size(), d);
  for (std::size_t n = 0; n < boxes.size(); ++n) {
    const double coords[4] = {boxes[n].top, boxes[n].bottom, boxes[n].left, boxes[n].right};
    for (int b = 0; b < 4; ++b) {
      const double x = coords[b] * coord_scale;
      for (int k = 0; k < block; ++k) {
        const double freq = std::pow(10000.0, -double(k - k % 2) / block);
        out(Eigen::Index(n), b * block + k) =
            (k % 2 == 0) ? std::sin(x * freq) : std::cos(x * freq);
      }
    }
  }
  return out;
}

}  // namespace nmae
