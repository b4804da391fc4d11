#pragma once

#include <string>
#include <vector>

#include "nmae/geo.hpp"
#include "nmae/image.hpp"

namespace nmae {

enum class OverlapMode { kGridAdjacent, kRandomJitter, kRevisit };

OverlapMode parse_overlap_mode(const std::string& name);

struct WorldSpec {
  int world_px = 1024;
  int noise_octaves = 5;
  std::uint64_t seed = 0;
  int tile_px = 64;
  int n_tiles = 400;
  OverlapMode overlap_mode = OverlapMode::kGridAdjacent;
  int grid_stride = 0;          // 0 means tile_px / 2
  double revisit_noise = 0.0;   // std of per-pixel brightness/color perturbation
  double world_degrees = 1.0;   // geographic span of the raster in both axes
};

// Multi-octave value-noise RGB raster; continuous, so overlapping tiles share
// content and neighboring tiles are statistically dependent.
Image render_world(const WorldSpec& spec);

struct GeneratedDataset {
  std::vector<ImageRecord> records;
  std::string metadata_path;
};

// Cuts tiles from the world, writes them as PNGs plus the metadata file
// consumed by the indexer. Deterministic under spec.seed.
GeneratedDataset generate(const WorldSpec& spec, const std::string& out_dir);

struct ConsistencyReport {
  int pairs_checked = 0;
  int pairs_failed = 0;
  std::vector<std::string> failures;  // "id_a,id_b: mad=..."
  bool ok() const { return pairs_failed == 0; }
};

// Resamples each tile's overlap region into the shared frame and checks the
// two tiles agree there; an end-to-end probe of the crop/normalize/transform
// geometry against generation-time ground truth.
ConsistencyReport verify_consistency(const std::vector<ImageRecord>& records,
                                     std::uint64_t seed, int max_pairs = 50,
                                     double tolerance = 2.0 / 255.0);

}  // namespace nmae
