#include "nmae/geo.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace nmae {

using json = nlohmann::json;

bool GeoBBox::valid() const {
  return std::isfinite(phi_min) && std::isfinite(phi_max) && std::isfinite(lambda_min) &&
         std::isfinite(lambda_max) && phi_min < phi_max && lambda_min < lambda_max;
}

bool GeoBBox::contains(const GeoBBox& other, double tol) const {
  return other.phi_min >= phi_min - tol && other.phi_max <= phi_max + tol &&
         other.lambda_min >= lambda_min - tol && other.lambda_max <= lambda_max + tol;
}

double iou(const GeoBBox& a, const GeoBBox& b) {
  const double iw = std::min(a.lambda_max, b.lambda_max) - std::max(a.lambda_min, b.lambda_min);
  const double ih = std::min(a.phi_max, b.phi_max) - std::max(a.phi_min, b.phi_min);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  return inter / (a.area() + b.area() - inter);
}

const std::vector<std::string>& NeighborIndex::neighbors(const std::string& id) const {
  auto it = table.find(id);
  if (it == table.end()) throw std::out_of_range("unknown image id: " + id);
  return it->second;
}

NeighborIndex build_index(const std::vector<ImageRecord>& records, double alpha) {
  if (records.empty()) throw std::invalid_argument("build_index: empty record list");
  if (!(alpha >= 0.0 && alpha <= 1.0))
    throw std::invalid_argument("build_index: alpha must be in [0,1]");

  std::set<std::string> seen;
  for (const auto& r : records) {
    if (!seen.insert(r.id).second)
      throw std::invalid_argument("build_index: duplicate id " + r.id);
    if (!r.bbox.valid())
      throw std::invalid_argument("build_index: invalid bbox for record " + r.id);
  }

  NeighborIndex idx;
  idx.alpha = alpha;
  for (const auto& r : records) idx.table[r.id];

  // Sweep over records sorted by lambda_min; a pair can only overlap while
  // the candidate's left edge is inside the anchor's lambda extent.
  std::vector<const ImageRecord*> order;
  order.reserve(records.size());
  for (const auto& r : records) order.push_back(&r);
  std::sort(order.begin(), order.end(), [](const ImageRecord* a, const ImageRecord* b) {
    return a->bbox.lambda_min < b->bbox.lambda_min;
  });

  for (std::size_t i = 0; i < order.size(); ++i) {
    for (std::size_t j = i + 1; j < order.size(); ++j) {
      if (order[j]->bbox.lambda_min >= order[i]->bbox.lambda_max) break;
      if (iou(order[i]->bbox, order[j]->bbox) > alpha) {
        idx.table[order[i]->id].push_back(order[j]->id);
        idx.table[order[j]->id].push_back(order[i]->id);
      }
    }
  }
  for (auto& [id, list] : idx.table) std::sort(list.begin(), list.end());
  return idx;
}

std::optional<std::string> sample_neighbor(const NeighborIndex& index,
                                           const std::string& anchor_id, Rng& rng) {
  const auto& cands = index.neighbors(anchor_id);
  if (cands.empty()) return std::nullopt;
  std::uniform_int_distribution<std::size_t> dist(0, cands.size() - 1);
  return cands[dist(rng)];
}

std::vector<ImageRecord> read_metadata(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open metadata file: " + path);
  std::vector<ImageRecord> records;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
    ImageRecord r;
    r.id = j.at("id").get<std::string>();
    r.path = j.at("path").get<std::string>();
    r.bbox = {j.at("phi_min").get<double>(), j.at("phi_max").get<double>(),
              j.at("lambda_min").get<double>(), j.at("lambda_max").get<double>()};
    r.width_px = j.at("width_px").get<int>();
    r.height_px = j.at("height_px").get<int>();
    if (j.contains("timestamp")) r.timestamp = j.at("timestamp").get<std::string>();
    if (r.width_px < 1 || r.height_px < 1)
      throw std::runtime_error(path + ": nonpositive dimensions for record " + r.id);
    records.push_back(std::move(r));
  }
  return records;
}

void write_metadata(const std::vector<ImageRecord>& records, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write metadata file: " + path);
  for (const auto& r : records) {
    json j{{"id", r.id},
           {"path", r.path},
           {"phi_min", r.bbox.phi_min},
           {"phi_max", r.bbox.phi_max},
           {"lambda_min", r.bbox.lambda_min},
           {"lambda_max", r.bbox.lambda_max},
           {"width_px", r.width_px},
           {"height_px", r.height_px}};
    if (r.timestamp) j["timestamp"] = *r.timestamp;
    out << j.dump() << "\n";
  }
}

namespace {

constexpr char kIndexMagic[4] = {'N', 'M', 'I', 'X'};
constexpr std::uint32_t kIndexVersion = 1;

template <typename T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

template <typename T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!in) throw std::runtime_error("truncated index file");
  return v;
}

void write_str(std::ostream& out, const std::string& s) {
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_str(std::istream& in) {
  auto n = read_pod<std::uint32_t>(in);
  std::string s(n, '\0');
  in.read(s.data(), n);
  if (!in) throw std::runtime_error("truncated index file");
  return s;
}

}  // namespace

void save_index(const NeighborIndex& index, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write index file: " + path);
  out.write(kIndexMagic, 4);
  write_pod(out, kIndexVersion);
  write_pod(out, index.alpha);
  write_pod<std::uint64_t>(out, index.table.size());
  for (const auto& [id, list] : index.table) {
    write_str(out, id);
    write_pod<std::uint64_t>(out, list.size());
    for (const auto& n : list) write_str(out, n);
  }
}

NeighborIndex load_index(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open index file: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kIndexMagic, 4) != 0)
    throw std::runtime_error("not an NMIX index file: " + path);
  auto version = read_pod<std::uint32_t>(in);
  if (version != kIndexVersion)
    throw std::runtime_error("unsupported index version " + std::to_string(version));
  NeighborIndex idx;
  idx.alpha = read_pod<double>(in);
  auto count = read_pod<std::uint64_t>(in);
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string id = read_str(in);
    auto n = read_pod<std::uint64_t>(in);
    auto& list = idx.table[id];
    list.reserve(n);
    for (std::uint64_t k = 0; k < n; ++k) list.push_back(read_str(in));
  }
  return idx;
}

void save_index_json(const NeighborIndex& index, const std::string& path) {
  json j;
  j["alpha"] = index.alpha;
  j["table"] = json::object();
  for (const auto& [id, list] : index.table) j["table"][id] = list;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write index file: " + path);
  out << j.dump(2) << "\n";
}

}  // namespace nmae
