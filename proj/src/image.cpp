#include "nmae/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <stdexcept>

#include <png.h>

namespace nmae {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

Image read_png(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw std::runtime_error("cannot open image file: " + path);

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw std::runtime_error("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("failed to decode PNG: " + path);
  }

  png_init_io(png, fp.get());
  png_read_info(png, info);

  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);

  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));

  std::vector<png_byte> row(std::size_t(w) * 3);
  Image img(h, w, 3);
  for (int r = 0; r < h; ++r) {
    png_read_row(png, row.data(), nullptr);
    for (int c = 0; c < w; ++c)
      for (int ch = 0; ch < 3; ++ch) img.at(r, c, ch) = row[std::size_t(c) * 3 + ch] / 255.0;
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

void write_png(const Image& img, const std::string& path) {
  if (img.channels != 1 && img.channels != 3)
    throw std::runtime_error("write_png: only 1- or 3-channel images supported");
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw std::runtime_error("cannot write image file: " + path);

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw std::runtime_error("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("failed to encode PNG: " + path);
  }

  png_init_io(png, fp.get());
  const int color = img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY;
  png_set_IHDR(png, info, img.width, img.height, 8, color, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);

  std::vector<png_byte> row(std::size_t(img.width) * img.channels);
  for (int r = 0; r < img.height; ++r) {
    for (int c = 0; c < img.width; ++c)
      for (int ch = 0; ch < img.channels; ++ch) {
        const double v = std::clamp(img.at(r, c, ch), 0.0, 1.0);
        row[std::size_t(c) * img.channels + ch] = static_cast<png_byte>(std::lround(v * 255.0));
      }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

namespace {

// Separable triangle-filter resampling; the filter support is widened by the
// scale factor on downscale, which is the usual antialiased bilinear.
void resample_axis(const std::vector<double>& src, std::vector<double>& dst, int n_src, int n_dst,
                   int stride, int count, int chan) {
  const double scale = double(n_src) / n_dst;
  const double support = std::max(1.0, scale);
  for (int o = 0; o < n_dst; ++o) {
    const double center = (o + 0.5) * scale;
    const int lo = std::max(0, int(std::floor(center - support)));
    const int hi = std::min(n_src - 1, int(std::ceil(center + support)));
    double wsum = 0.0;
    std::vector<std::pair<int, double>> taps;
    for (int s = lo; s <= hi; ++s) {
      const double d = std::abs((s + 0.5) - center) / support;
      if (d >= 1.0) continue;
      const double w = 1.0 - d;
      taps.emplace_back(s, w);
      wsum += w;
    }
    for (int k = 0; k < count; ++k)
      for (int ch = 0; ch < chan; ++ch) {
        double acc = 0.0;
        for (auto [s, w] : taps) acc += w * src[(std::size_t(k) * n_src + s) * chan + ch];
        dst[(std::size_t(k) * n_dst + o) * chan + ch] = acc / wsum;
      }
  }
}

}  // namespace

Image resize_bilinear(const Image& src, int out_h, int out_w) {
  if (out_h < 1 || out_w < 1) throw std::invalid_argument("resize: nonpositive output size");
  // Horizontal pass: rows stay, columns resampled.
  std::vector<double> mid(std::size_t(src.height) * out_w * src.channels);
  resample_axis(src.data, mid, src.width, out_w, 1, src.height, src.channels);
  // Vertical pass: transpose access by reshuffling into column-major runs.
  std::vector<double> mid_t(mid.size());
  for (int r = 0; r < src.height; ++r)
    for (int c = 0; c < out_w; ++c)
      for (int ch = 0; ch < src.channels; ++ch)
        mid_t[(std::size_t(c) * src.height + r) * src.channels + ch] =
            mid[(std::size_t(r) * out_w + c) * src.channels + ch];
  std::vector<double> out_t(std::size_t(out_w) * out_h * src.channels);
  resample_axis(mid_t, out_t, src.height, out_h, 1, out_w, src.channels);
  Image out(out_h, out_w, src.channels);
  for (int c = 0; c < out_w; ++c)
    for (int r = 0; r < out_h; ++r)
      for (int ch = 0; ch < src.channels; ++ch)
        out.at(r, c, ch) = out_t[(std::size_t(c) * out_h + r) * src.channels + ch];
  return out;
}

Image crop(const Image& src, int top, int left, int h, int w) {
  if (top < 0 || left < 0 || h < 1 || w < 1 || top + h > src.height || left + w > src.width)
    throw std::invalid_argument("crop outside image bounds");
  Image out(h, w, src.channels);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c)
      for (int ch = 0; ch < src.channels; ++ch) out.at(r, c, ch) = src.at(top + r, left + c, ch);
  return out;
}

}  // namespace nmae
