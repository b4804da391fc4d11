#pragma once

#include <string>
#include <vector>

#include "nmae/model.hpp"

namespace nmae {

struct GradCheckResult {
  bool pass = true;
  double max_rel_err = 0.0;
  std::string worst_param;
  long coords_checked = 0;
};

// Central finite differences against the analytic gradients, with the loss
// weights frozen at their base-point values (the detached-weight loss the
// training gradient is defined for). When freeze_weights is false the probe
// differentiates the naive loss whose weights track the reconstruction; on
// CROSS pixels with weight strictly inside (0,1) the two disagree.
// Coordinates with both gradients below 1e-6 in magnitude are skipped (central differences on a unit-scale loss carry ~1e-11 absolute noise);
// max_coords_per_param == 0 checks every coordinate.
GradCheckResult check_model_gradients(Model& model, const std::vector<ImageInput>& inputs,
                                      const ForwardOptions& opts, double step = 1e-5,
                                      double tol = 1e-4, int max_coords_per_param = 0,
                                      bool freeze_weights = true, std::uint64_t seed = 0);

}  // namespace nmae
