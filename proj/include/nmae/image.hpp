#pragma once

#include <string>
#include <vector>

namespace nmae {

// Dense H×W×C raster of reals in [0,1], row-major, channel-interleaved.
struct Image {
  int height = 0;
  int width = 0;
  int channels = 3;
  std::vector<double> data;

  Image() = default;
  Image(int h, int w, int c = 3) : height(h), width(w), channels(c), data(std::size_t(h) * w * c, 0.0) {}

  double& at(int r, int c, int ch) { return data[(std::size_t(r) * width + c) * channels + ch]; }
  double at(int r, int c, int ch) const { return data[(std::size_t(r) * width + c) * channels + ch]; }
};

Image read_png(const std::string& path);
void write_png(const Image& img, const std::string& path);

// Bilinear resize with box-filter antialiasing on downscale.
Image resize_bilinear(const Image& src, int out_h, int out_w);

Image crop(const Image& src, int top, int left, int h, int w);

}  // namespace nmae
