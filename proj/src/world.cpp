#include "nmae/world.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <sstream>
#include <stdexcept>

#include "nmae/augment.hpp"
#include "nmae/random.hpp"
#include "nmae/relpos.hpp"
#include "nmae/visibility.hpp"

namespace nmae {

namespace fs = std::filesystem;

OverlapMode parse_overlap_mode(const std::string& name) {
  if (name == "grid_adjacent") return OverlapMode::kGridAdjacent;
  if (name == "random_jitter") return OverlapMode::kRandomJitter;
  if (name == "revisit") return OverlapMode::kRevisit;
  throw std::invalid_argument("unknown overlap mode: " + name);
}

namespace {

double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

// One octave of value noise: random lattice, smooth bilinear interpolation.
struct NoiseOctave {
  int cells;
  std::vector<double> lattice;  // (cells+1)^2

  NoiseOctave(int cells_, Rng& rng) : cells(cells_), lattice((cells_ + 1) * std::size_t(cells_ + 1)) {
    std::uniform_real_distribution<double> dist(0.0, 1.0);
    for (auto& v : lattice) v = dist(rng);
  }

  double sample(double x, double y) const {  // x, y in [0,1]
    const double fx = x * cells, fy = y * cells;
    const int ix = std::min(int(fx), cells - 1);
    const int iy = std::min(int(fy), cells - 1);
    const double tx = smoothstep(fx - ix), ty = smoothstep(fy - iy);
    auto at = [&](int gx, int gy) { return lattice[std::size_t(gy) * (cells + 1) + gx]; };
    const double a = at(ix, iy) * (1 - tx) + at(ix + 1, iy) * tx;
    const double b = at(ix, iy + 1) * (1 - tx) + at(ix + 1, iy + 1) * tx;
    return a * (1 - ty) + b * ty;
  }
};

}  // namespace

Image render_world(const WorldSpec& spec) {
  if (spec.world_px < 1 || spec.noise_octaves < 1)
    throw std::invalid_argument("render_world: bad spec");
  Image world(spec.world_px, spec.world_px, 3);
  for (int ch = 0; ch < 3; ++ch) {
    Rng rng = sub_rng(spec.seed, 0x776f726cULL + ch);
    std::vector<NoiseOctave> octaves;
    double amp = 1.0, amp_sum = 0.0;
    for (int o = 0; o < spec.noise_octaves; ++o) {
      octaves.emplace_back(4 << o, rng);
      amp_sum += amp;
      amp *= 0.5;
    }
    for (int r = 0; r < spec.world_px; ++r)
      for (int c = 0; c < spec.world_px; ++c) {
        const double x = (c + 0.5) / spec.world_px;
        const double y = (r + 0.5) / spec.world_px;
        double v = 0.0;
        amp = 1.0;
        for (const auto& oct : octaves) {
          v += amp * oct.sample(x, y);
          amp *= 0.5;
        }
        world.at(r, c, ch) = v / amp_sum;
      }
  }
  return world;
}

namespace {

GeoBBox tile_bbox(const WorldSpec& spec, int x0, int y0) {
  const double wd = spec.world_degrees;
  const double px = spec.world_px;
  return {wd * (1.0 - double(y0 + spec.tile_px) / px), wd * (1.0 - double(y0) / px),
          wd * double(x0) / px, wd * double(x0 + spec.tile_px) / px};
}

}  // namespace

GeneratedDataset generate(const WorldSpec& spec, const std::string& out_dir) {
  if (spec.tile_px > spec.world_px || spec.n_tiles < 2)
    throw std::invalid_argument("generate: need tile_px <= world_px and n_tiles >= 2");
  const Image world = render_world(spec);
  const fs::path img_dir = fs::path(out_dir) / "images";
  fs::create_directories(img_dir);

  Rng rng = sub_rng(spec.seed, 0x74696c65ULL);
  std::normal_distribution<double> noise(0.0, 1.0);

  struct TilePlan {
    int x0, y0;
    bool perturb;
  };
  std::vector<TilePlan> plans;
  const int stride = spec.grid_stride > 0 ? spec.grid_stride : spec.tile_px / 2;
  const int max_off = spec.world_px - spec.tile_px;
  switch (spec.overlap_mode) {
    case OverlapMode::kGridAdjacent: {
      for (int y = 0; y <= max_off && int(plans.size()) < spec.n_tiles; y += stride)
        for (int x = 0; x <= max_off && int(plans.size()) < spec.n_tiles; x += stride)
          plans.push_back({x, y, false});
      break;
    }
    case OverlapMode::kRandomJitter: {
      std::uniform_int_distribution<int> off(0, max_off);
      for (int k = 0; k < spec.n_tiles; ++k) plans.push_back({off(rng), off(rng), false});
      break;
    }
    case OverlapMode::kRevisit: {
      for (int y = 0; y <= max_off && int(plans.size()) + 1 < spec.n_tiles; y += stride)
        for (int x = 0; x <= max_off && int(plans.size()) + 1 < spec.n_tiles; x += stride) {
          plans.push_back({x, y, false});
          plans.push_back({x, y, true});
        }
      break;
    }
  }
  if (int(plans.size()) < 2) throw std::invalid_argument("generate: spec yields fewer than 2 tiles");

  GeneratedDataset ds;
  for (std::size_t k = 0; k < plans.size(); ++k) {
    const auto& plan = plans[k];
    Image tile = crop(world, plan.y0, plan.x0, spec.tile_px, spec.tile_px);
    if (plan.perturb && spec.revisit_noise > 0.0)
      for (auto& v : tile.data) v = std::clamp(v + spec.revisit_noise * noise(rng), 0.0, 1.0);

    std::ostringstream id;
    id << "tile_" << k;
    if (plan.perturb) id << "_r";
    ImageRecord rec;
    rec.id = id.str();
    rec.path = (img_dir / (rec.id + ".png")).string();
    rec.bbox = tile_bbox(spec, plan.x0, plan.y0);
    rec.width_px = spec.tile_px;
    rec.height_px = spec.tile_px;
    if (plan.perturb) rec.timestamp = "2026-01-02T00:00:00Z";
    write_png(tile, rec.path);
    ds.records.push_back(std::move(rec));
  }
  ds.metadata_path = (fs::path(out_dir) / "metadata.jsonl").string();
  write_metadata(ds.records, ds.metadata_path);
  return ds;
}

ConsistencyReport verify_consistency(const std::vector<ImageRecord>& records, std::uint64_t seed,
                                     int max_pairs, double tolerance) {
  ConsistencyReport report;
  NeighborIndex index = build_index(records, 0.0);
  std::map<std::string, const ImageRecord*> by_id;
  for (const auto& r : records) by_id[r.id] = &r;

  std::vector<std::pair<std::string, std::string>> pairs;
  for (const auto& [id, list] : index.table)
    for (const auto& n : list)
      if (id < n) pairs.emplace_back(id, n);
  Rng rng = sub_rng(seed, 0x76657269ULL);
  std::shuffle(pairs.begin(), pairs.end(), rng);
  if (int(pairs.size()) > max_pairs) pairs.resize(max_pairs);

  for (const auto& [ida, idb] : pairs) {
    const ImageRecord& ra = *by_id.at(ida);
    const ImageRecord& rb = *by_id.at(idb);
    const Image ia = load_record_image(ra);
    const Image ib = load_record_image(rb);
    auto [na, nb] = normalize_pair(ra.bbox, rb.bbox);
    const FrameTransform ta = frame_transform(na, ia.height, ia.width);
    const FrameTransform tb = frame_transform(nb, ib.height, ib.width);

    double mad = 0.0;
    long count = 0;
    for (int r = 0; r < ia.height; ++r)
      for (int c = 0; c < ia.width; ++c) {
        const auto pb = correspond(c + 0.5, r + 0.5, ta, tb, ib.height, ib.width);
        if (!pb) continue;
        const int nc = std::clamp(int(std::floor(pb->first)), 0, ib.width - 1);
        const int nr = std::clamp(int(std::floor(pb->second)), 0, ib.height - 1);
        for (int ch = 0; ch < 3; ++ch) mad += std::abs(ia.at(r, c, ch) - ib.at(nr, nc, ch));
        count += 3;
      }
    ++report.pairs_checked;
    if (count == 0) continue;  // disjoint after all; vacuously consistent
    mad /= double(count);
    if (mad > tolerance) {
      ++report.pairs_failed;
      std::ostringstream msg;
      msg << ida << "," << idb << ": mad=" << mad;
      report.failures.push_back(msg.str());
    }
  }
  return report;
}

}  // namespace nmae
