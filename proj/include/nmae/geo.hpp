#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "nmae/random.hpp"

namespace nmae {

// Georeferenced rectangle in planar lat/lon degrees. Latitude grows upward:
// phi_max is the top edge of the image footprint.
struct GeoBBox {
  double phi_min = 0.0;
  double phi_max = 0.0;
  double lambda_min = 0.0;
  double lambda_max = 0.0;

  bool valid() const;
  double width() const { return lambda_max - lambda_min; }
  double height() const { return phi_max - phi_min; }
  double area() const { return width() * height(); }
  bool contains(const GeoBBox& other, double tol = 1e-9) const;
};

// Rectangle IoU in planar degree space. Touching edges count as disjoint
// (zero-area intersection).
double iou(const GeoBBox& a, const GeoBBox& b);

struct ImageRecord {
  std::string id;
  std::string path;
  GeoBBox bbox;
  int width_px = 0;
  int height_px = 0;
  std::optional<std::string> timestamp;  // metadata only, never sampled on
};

// Precomputed neighbor lookup table: j is a neighbor of i iff
// iou(bbox_i, bbox_j) > alpha, strictly. Immutable after construction.
struct NeighborIndex {
  double alpha = 0.0;
  std::map<std::string, std::vector<std::string>> table;

  const std::vector<std::string>& neighbors(const std::string& id) const;
  bool has(const std::string& id) const { return table.count(id) > 0; }
};

// Sweep-line construction over lambda-sorted records; result is identical to
// the all-pairs brute force. Throws on duplicate ids or invalid bboxes,
// naming the offending record.
NeighborIndex build_index(const std::vector<ImageRecord>& records, double alpha);

// Uniform draw from the anchor's neighbor set; nullopt when the set is empty
// (caller decides the fallback, typically a self-pair).
std::optional<std::string> sample_neighbor(const NeighborIndex& index,
                                           const std::string& anchor_id, Rng& rng);

// Line-delimited JSON metadata, one record per line.
std::vector<ImageRecord> read_metadata(const std::string& path);
void write_metadata(const std::vector<ImageRecord>& records, const std::string& path);

// "NMIX" versioned binary persistence, plus a JSON export for debugging.
void save_index(const NeighborIndex& index, const std::string& path);
NeighborIndex load_index(const std::string& path);
void save_index_json(const NeighborIndex& index, const std::string& path);

}  // namespace nmae
