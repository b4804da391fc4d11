#include "nmae/augment.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace nmae {

GeoBBox crop_bbox(const GeoBBox& src, const CropParams& crop, int H, int W) {
  if (crop.i < 0 || crop.j < 0 || crop.h < 1 || crop.w < 1 || crop.i + crop.h > H ||
      crop.j + crop.w > W)
    throw std::invalid_argument("crop_bbox: crop outside image bounds");
  const double dphi = src.phi_max - src.phi_min;
  const double dlam = src.lambda_max - src.lambda_min;
  GeoBBox out;
  out.phi_max = src.phi_max - dphi * double(crop.i) / H;
  out.phi_min = src.phi_max - dphi * double(crop.i + crop.h) / H;
  out.lambda_min = src.lambda_min + dlam * double(crop.j) / W;
  out.lambda_max = src.lambda_min + dlam * double(crop.j + crop.w) / W;
  return out;
}

namespace {

// Standard RandomResizedCrop window sampling: up to 10 attempts at the target
// area/aspect, then a centered fallback crop.
CropParams sample_crop_window(int H, int W, Rng& rng, const AugConfig& cfg) {
  std::uniform_real_distribution<double> area_dist(cfg.crop_scale_lo, cfg.crop_scale_hi);
  std::uniform_real_distribution<double> log_aspect(std::log(cfg.aspect_lo),
                                                    std::log(cfg.aspect_hi));
  const double full_area = double(H) * W;
  for (int attempt = 0; attempt < 10; ++attempt) {
    const double target_area = area_dist(rng) * full_area;
    const double aspect = std::exp(log_aspect(rng));
    int w = int(std::lround(std::sqrt(target_area * aspect)));
    int h = int(std::lround(std::sqrt(target_area / aspect)));
    if (w < 1 || h < 1 || w > W || h > H) continue;
    std::uniform_int_distribution<int> top_dist(0, H - h);
    std::uniform_int_distribution<int> left_dist(0, W - w);
    return {top_dist(rng), left_dist(rng), h, w};
  }
  const int side = std::min(H, W);
  return {(H - side) / 2, (W - side) / 2, side, side};
}

void hflip_inplace(Image& img) {
  for (int r = 0; r < img.height; ++r)
    for (int c = 0; c < img.width / 2; ++c)
      for (int ch = 0; ch < img.channels; ++ch)
        std::swap(img.at(r, c, ch), img.at(r, img.width - 1 - c, ch));
}

}  // namespace

AugmentedImage random_resized_crop(const ImageRecord& record, const Image& pixels, Rng& rng,
                                   const AugConfig& cfg) {
  if (pixels.height != record.height_px || pixels.width != record.width_px)
    throw std::invalid_argument("random_resized_crop: pixel dimensions do not match record " +
                                record.id);
  if (!(cfg.crop_scale_lo > 0.0 && cfg.crop_scale_lo <= cfg.crop_scale_hi &&
        cfg.crop_scale_hi <= 1.0))
    throw std::invalid_argument("random_resized_crop: bad crop scale range");

  const CropParams window = sample_crop_window(pixels.height, pixels.width, rng, cfg);
  AugmentedImage out;
  out.bbox = crop_bbox(record.bbox, window, pixels.height, pixels.width);
  out.pixels = resize_bilinear(crop(pixels, window.i, window.j, window.h, window.w),
                               cfg.input_size, cfg.input_size);
  out.source_id = record.id;
  return out;
}

std::pair<AugmentedImage, AugmentedImage> augment_pair(const ImageRecord& rec_i,
                                                       const ImageRecord& rec_j,
                                                       const ImageLoader& load, Rng& rng,
                                                       const AugConfig& cfg) {
  AugmentedImage a = random_resized_crop(rec_i, load(rec_i), rng, cfg);
  AugmentedImage b = random_resized_crop(rec_j, load(rec_j), rng, cfg);
  if (cfg.flip_enabled) {
    std::bernoulli_distribution coin(0.5);
    if (coin(rng)) hflip_inplace(a.pixels);
    if (coin(rng)) hflip_inplace(b.pixels);
  }
  return {std::move(a), std::move(b)};
}

Image load_record_image(const ImageRecord& record) {
  Image img = read_png(record.path);
  if (img.height != record.height_px || img.width != record.width_px)
    throw std::runtime_error("image dimensions do not match metadata: " + record.path);
  return img;
}

}  // namespace nmae
