#include "nmae/visibility.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace nmae {

FrameTransform frame_transform(const NormalizedBBox& nb, int height, int width) {
  if (height < 1 || width < 1) throw std::invalid_argument("frame_transform: empty image");
  if (!(nb.right > nb.left) || !(nb.top > nb.bottom))
    throw std::invalid_argument("frame_transform: degenerate normalized bbox");
  FrameTransform t;
  t.to_shared << (nb.right - nb.left) / width, 0, nb.left,
                 0, (nb.bottom - nb.top) / height, nb.top,
                 0, 0, 1;
  t.from_shared << width / (nb.right - nb.left), 0, width * nb.left / (nb.left - nb.right),
                   0, height / (nb.bottom - nb.top), height * nb.top / (nb.top - nb.bottom),
                   0, 0, 1;
  return t;
}

std::optional<std::pair<double, double>> correspond(double x, double y, const FrameTransform& t_i,
                                                    const FrameTransform& t_j, int height,
                                                    int width) {
  const Eigen::Vector3d p = t_j.from_shared * (t_i.to_shared * Eigen::Vector3d(x, y, 1.0));
  if (p.x() < 0.0 || p.x() >= width || p.y() < 0.0 || p.y() >= height) return std::nullopt;
  return std::make_pair(p.x(), p.y());
}

VisibilityMap classify_pixels(const PatchMask& mask_i, const PatchMask& mask_j,
                              const FrameTransform& t_i, const FrameTransform& t_j,
                              int patch_size) {
  const int h = mask_i.rows * patch_size;
  const int w = mask_i.cols * patch_size;
  const int hj = mask_j.rows * patch_size;
  const int wj = mask_j.cols * patch_size;
  VisibilityMap vis;
  vis.height = h;
  vis.width = w;
  vis.category.assign(std::size_t(h) * w, PixelCategory::kNot);
  vis.corresp.assign(std::size_t(h) * w, {0.0, 0.0});

  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      const std::size_t idx = std::size_t(r) * w + c;
      if (!mask_i.masked(r / patch_size, c / patch_size)) {
        vis.category[idx] = PixelCategory::kSelf;
        continue;
      }
      const auto pj = correspond(c + 0.5, r + 0.5, t_i, t_j, hj, wj);
      if (pj) {
        const int pr = int(std::floor(pj->second)) / patch_size;
        const int pc = int(std::floor(pj->first)) / patch_size;
        if (!mask_j.masked(pr, pc)) {
          vis.category[idx] = PixelCategory::kCross;
          vis.corresp[idx] = *pj;
        }
      }
    }
  return vis;
}

WeightPolicy parse_weight_policy(const std::string& name) {
  if (name == "ours") return WeightPolicy::kOurs;
  if (name == "full_cross") return WeightPolicy::kFullCross;
  if (name == "no_cross") return WeightPolicy::kNoCross;
  if (name == "full_all") return WeightPolicy::kFullAll;
  throw std::invalid_argument("unknown weight policy: " + name);
}

std::string weight_policy_name(WeightPolicy policy) {
  switch (policy) {
    case WeightPolicy::kOurs: return "ours";
    case WeightPolicy::kFullCross: return "full_cross";
    case WeightPolicy::kNoCross: return "no_cross";
    case WeightPolicy::kFullAll: return "full_all";
  }
  return "?";
}

namespace {
constexpr double kDenomFloor = 1e-8;
}

Eigen::VectorXd loss_weights(const VisibilityMap& vis, const Image& img_i, const Image& img_j,
                             const Image& recon_i, WeightPolicy policy) {
  const int h = vis.height;
  const int w = vis.width;
  if (img_i.height != h || img_i.width != w || recon_i.height != h || recon_i.width != w)
    throw std::invalid_argument("loss_weights: shape mismatch");
  const int ch = img_i.channels;

  Eigen::VectorXd weights(std::size_t(h) * w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      const std::size_t idx = std::size_t(r) * w + c;
      double wt = 0.0;
      switch (vis.category[idx]) {
        case PixelCategory::kSelf:
          wt = policy == WeightPolicy::kFullAll ? 1.0 : 0.0;
          break;
        case PixelCategory::kNot:
          wt = 1.0;
          break;
        case PixelCategory::kCross: {
          if (policy == WeightPolicy::kFullCross || policy == WeightPolicy::kFullAll) {
            wt = 1.0;
            break;
          }
          if (policy == WeightPolicy::kNoCross) {
            wt = 0.0;
            break;
          }
          const int nc = std::clamp(int(std::floor(vis.corresp[idx].first)), 0, img_j.width - 1);
          const int nr = std::clamp(int(std::floor(vis.corresp[idx].second)), 0, img_j.height - 1);
          double num = 0.0, den = 0.0;
          for (int k = 0; k < ch; ++k) {
            const double t = img_i.at(r, c, k);
            num += (img_j.at(nr, nc, k) - t) * (img_j.at(nr, nc, k) - t);
            den += (recon_i.at(r, c, k) - t) * (recon_i.at(r, c, k) - t);
          }
          num /= ch;
          den /= ch;
          wt = num == 0.0 ? 0.0 : std::min(num / std::max(den, kDenomFloor), 1.0);
          break;
        }
      }
      weights[Eigen::Index(idx)] = wt;
    }
  return weights;
}

double weighted_recon_loss(const Image& recon_i, const Image& recon_j, const Image& img_i,
                           const Image& img_j, const Eigen::VectorXd& weights_i,
                           const Eigen::VectorXd& weights_j) {
  auto accum = [](const Image& recon, const Image& target, const Eigen::VectorXd& wts,
                  double& num, double& wsum) {
    const int ch = target.channels;
    for (int r = 0; r < target.height; ++r)
      for (int c = 0; c < target.width; ++c) {
        const double wt = wts[Eigen::Index(std::size_t(r) * target.width + c)];
        double sq = 0.0;
        for (int k = 0; k < ch; ++k) {
          const double d = recon.at(r, c, k) - target.at(r, c, k);
          sq += d * d;
        }
        num += wt * sq / ch;
        wsum += wt;
      }
  };
  double num = 0.0, wsum = 0.0;
  accum(recon_i, img_i, weights_i, num, wsum);
  accum(recon_j, img_j, weights_j, num, wsum);
  return wsum == 0.0 ? 0.0 : num / wsum;
}

}  // namespace nmae
