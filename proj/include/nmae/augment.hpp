#pragma once

#include <functional>
#include <utility>

#include "nmae/geo.hpp"
#include "nmae/image.hpp"
#include "nmae/random.hpp"

namespace nmae {

// Random-Resized-Crop window in source pixels: (i, j) top-left corner, (h, w) size.
struct CropParams {
  int i = 0;
  int j = 0;
  int h = 0;
  int w = 0;
};

struct AugConfig {
  int input_size = 32;
  double crop_scale_lo = 0.2;
  double crop_scale_hi = 1.0;
  double aspect_lo = 3.0 / 4.0;
  double aspect_hi = 4.0 / 3.0;
  bool flip_enabled = false;
};

struct AugmentedImage {
  Image pixels;          // input_size × input_size, values in [0,1]
  GeoBBox bbox;          // post-crop footprint
  std::string source_id;
};

// Propagate the footprint through a pixel crop. Row offsets are measured from
// the image top, where latitude is phi_max.
GeoBBox crop_bbox(const GeoBBox& src, const CropParams& crop, int H, int W);

// Samples area fraction uniformly in [scale_lo, scale_hi] and log-uniform
// aspect in [aspect_lo, aspect_hi], then crops, propagates the bbox, and
// resizes to input_size. Deterministic under a fixed rng state.
AugmentedImage random_resized_crop(const ImageRecord& record, const Image& pixels, Rng& rng,
                                   const AugConfig& cfg);

using ImageLoader = std::function<Image(const ImageRecord&)>;

// Independent crops of the two records. Horizontal flip, when enabled, is
// applied to pixel content only and mirrors nothing in the bbox; it is off by
// default because flipped pixels desynchronize from the footprint geometry.
std::pair<AugmentedImage, AugmentedImage> augment_pair(const ImageRecord& rec_i,
                                                       const ImageRecord& rec_j,
                                                       const ImageLoader& load, Rng& rng,
                                                       const AugConfig& cfg);

Image load_record_image(const ImageRecord& record);

}  // namespace nmae
