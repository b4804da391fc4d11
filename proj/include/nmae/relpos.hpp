#pragma once

#include <utility>
#include <vector>

#include <Eigen/Core>

#include "nmae/geo.hpp"

namespace nmae {

// Footprint normalized into the pair's shared [0,1]^2 frame. top > bottom
// because top corresponds to the larger latitude.
struct NormalizedBBox {
  double top = 1.0;
  double bottom = 0.0;
  double left = 0.0;
  double right = 1.0;
};

// Min/max normalization over the union of the two footprints. Invariant under
// joint translation and joint positive uniform scaling.
std::pair<NormalizedBBox, NormalizedBBox> normalize_pair(const GeoBBox& bbox_i,
                                                         const GeoBBox& bbox_j);

// Even partition of nb into rows×cols cells, row-major with row 0 at the top
// (largest-latitude strip).
std::vector<NormalizedBBox> patch_bboxes(const NormalizedBBox& nb, int rows, int cols);

// Sinusoidal encoding of the 4 coordinates: one d/4 block per coordinate in
// order (top, bottom, left, right), interleaved sin/cos at geometric
// frequencies, coordinates pre-scaled by coord_scale.
Eigen::MatrixXd sinusoidal_embed(const std::vector<NormalizedBBox>& boxes, int d,
                                 double coord_scale = 100.0);

}  // namespace nmae
