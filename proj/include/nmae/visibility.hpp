#pragma once

#include <optional>
#include <vector>

#include <Eigen/Core>

#include "nmae/image.hpp"
#include "nmae/masking.hpp"
#include "nmae/relpos.hpp"

namespace nmae {

// Affine maps between an image's pixel-position space and the pair's shared
// [0,1]^2 frame. Pixel positions are continuous: pixel (r,c) occupies
// [c,c+1)×[r,r+1) and its center sits at (c+0.5, r+0.5).
struct FrameTransform {
  Eigen::Matrix3d to_shared;    // image pixels -> shared frame
  Eigen::Matrix3d from_shared;  // shared frame -> image pixels
};

FrameTransform frame_transform(const NormalizedBBox& nb, int height, int width);

// Continuous pixel position in image j corresponding to position (x, y) of
// image i; nullopt when it falls outside [0,W)×[0,H) of image j.
std::optional<std::pair<double, double>> correspond(double x, double y, const FrameTransform& t_i,
                                                    const FrameTransform& t_j, int height,
                                                    int width);

enum class PixelCategory : unsigned char { kSelf, kCross, kNot };

struct VisibilityMap {
  int height = 0;
  int width = 0;
  std::vector<PixelCategory> category;                  // row-major
  std::vector<std::pair<double, double>> corresp;       // valid where kCross

  PixelCategory at(int r, int c) const { return category[std::size_t(r) * width + c]; }
};

// Per-pixel three-way classification of image i: SELF where the pixel's own
// patch is unmasked, else CROSS when the pixel-center correspondence lands in
// an unmasked patch of image j, else NOT. Patch membership of a fractional
// point is its containing cell (floor).
VisibilityMap classify_pixels(const PatchMask& mask_i, const PatchMask& mask_j,
                              const FrameTransform& t_i, const FrameTransform& t_j,
                              int patch_size);

enum class WeightPolicy { kOurs, kFullCross, kNoCross, kFullAll };

WeightPolicy parse_weight_policy(const std::string& name);
std::string weight_policy_name(WeightPolicy policy);

// Per-pixel loss weights for image i (Eigen row-major flattened H*W vector):
// 0 on SELF, 1 on NOT, the clamped neighbor-copy/reconstruction error ratio
// on CROSS. Values are constants for gradient purposes. All image arguments
// live in the same space as the reconstruction loss (normalized targets when
// norm_pix is on). Neighbor values are sampled nearest-neighbor at the
// fractional correspondence.
Eigen::VectorXd loss_weights(const VisibilityMap& vis, const Image& img_i, const Image& img_j,
                             const Image& recon_i, WeightPolicy policy = WeightPolicy::kOurs);

// Plain-arithmetic weighted reconstruction MSE over both images:
// sum_p w(p) * ||recon(p)-target(p)||^2 / C, divided by sum_p w(p).
// Defined as 0 when the total weight is 0. The differentiable counterpart
// used in training lives in the model module; this version doubles as its
// oracle.
double weighted_recon_loss(const Image& recon_i, const Image& recon_j, const Image& img_i,
                           const Image& img_j, const Eigen::VectorXd& weights_i,
                           const Eigen::VectorXd& weights_j);

}  // namespace nmae
