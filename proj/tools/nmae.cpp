#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "nmae/gradcheck.hpp"
#include "nmae/trainer.hpp"
#include "nmae/world.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace nmae;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitPropertyFailure = 1;
constexpr int kExitUsage = 2;

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  AugConfig aug;
  MaskConfig mask;
};

RunConfig load_run_config(const std::string& path) {
  RunConfig cfg;
  if (path.empty()) return cfg;
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  json j = json::parse(in);
  if (j.contains("model")) cfg.model = ModelConfig::from_json(j["model"].dump());
  if (j.contains("train")) {
    const auto& t = j["train"];
    cfg.train.base_lr = t.value("base_lr", cfg.train.base_lr);
    cfg.train.batch_images = t.value("batch_images", cfg.train.batch_images);
    cfg.train.epochs = t.value("epochs", cfg.train.epochs);
    cfg.train.warmup_epochs = t.value("warmup_epochs", cfg.train.warmup_epochs);
    cfg.train.weight_decay = t.value("weight_decay", cfg.train.weight_decay);
    cfg.train.beta1 = t.value("beta1", cfg.train.beta1);
    cfg.train.beta2 = t.value("beta2", cfg.train.beta2);
    cfg.train.seed = t.value("seed", cfg.train.seed);
    if (t.contains("policy")) cfg.train.policy = parse_weight_policy(t["policy"]);
  }
  if (j.contains("aug")) {
    const auto& a = j["aug"];
    cfg.aug.input_size = a.value("input_size", cfg.aug.input_size);
    cfg.aug.crop_scale_lo = a.value("crop_scale_lo", cfg.aug.crop_scale_lo);
    cfg.aug.crop_scale_hi = a.value("crop_scale_hi", cfg.aug.crop_scale_hi);
    cfg.aug.aspect_lo = a.value("aspect_lo", cfg.aug.aspect_lo);
    cfg.aug.aspect_hi = a.value("aspect_hi", cfg.aug.aspect_hi);
    cfg.aug.flip_enabled = a.value("flip_enabled", cfg.aug.flip_enabled);
  }
  if (j.contains("mask")) {
    cfg.mask.m1 = j["mask"].value("m1", cfg.mask.m1);
    cfg.mask.m2 = j["mask"].value("m2", cfg.mask.m2);
  }
  return cfg;
}

void apply_ablations(RunConfig& cfg, const std::vector<std::string>& ablations) {
  for (const auto& ab : ablations) {
    const auto eq = ab.find('=');
    if (eq == std::string::npos) throw std::runtime_error("bad --ablation value: " + ab);
    const std::string key = ab.substr(0, eq);
    const std::string val = ab.substr(eq + 1);
    if (key == "mask") {
      const auto comma = val.find(',');
      if (comma == std::string::npos) throw std::runtime_error("--ablation mask wants m1,m2");
      cfg.mask.m1 = std::stod(val.substr(0, comma));
      cfg.mask.m2 = std::stod(val.substr(comma + 1));
    } else if (key == "weights") {
      cfg.train.policy = parse_weight_policy(val);
    } else {
      throw std::runtime_error("unknown ablation key: " + key);
    }
  }
}

int cmd_index(const std::string& meta_path, double alpha, const std::string& out_path,
              const std::string& format) {
  auto records = read_metadata(meta_path);
  NeighborIndex index = build_index(records, alpha);
  if (format == "json")
    save_index_json(index, out_path);
  else
    save_index(index, out_path);

  std::map<std::size_t, int> histogram;
  for (const auto& [id, list] : index.table) ++histogram[list.size()];
  std::cout << "indexed " << records.size() << " records at alpha=" << alpha << "\n";
  std::cout << "neighbor-count histogram:\n";
  for (const auto& [count, freq] : histogram)
    std::cout << "  " << count << " neighbors: " << freq << " images\n";
  return kExitOk;
}

int cmd_genworld(const WorldSpec& spec, const std::string& out_dir) {
  auto ds = generate(spec, out_dir);
  std::cout << "generated " << ds.records.size() << " tiles -> " << ds.metadata_path << "\n";
  return kExitOk;
}

int cmd_pretrain(const std::string& meta_path, const std::string& index_path, RunConfig cfg,
                 const std::string& out_dir) {
  auto records = read_metadata(meta_path);
  NeighborIndex index =
      index_path.empty() ? build_index(records, 0.0) : load_index(index_path);
  cfg.aug.input_size = cfg.model.input_size;

  Model model(cfg.model, cfg.train.seed);
  std::cout << "pretraining on " << records.size() << " images, policy "
            << weight_policy_name(cfg.train.policy) << ", mask (" << cfg.mask.m1 << ","
            << cfg.mask.m2 << ")\n";
  auto result = pretrain(records, index, model, cfg.train, cfg.aug, cfg.mask, out_dir);
  if (!result.steps.empty())
    std::cout << "final loss " << result.steps.back().loss << " after " << result.steps.size()
              << " steps\n";
  std::cout << "checkpoint: " << result.checkpoint_path << "\n";
  std::cout << "metrics:    " << result.metrics_path << "\n";
  return kExitOk;
}

Image gray_panel(const Eigen::VectorXd& values, int h, int w) {
  Image out(h, w, 3);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c)
      for (int ch = 0; ch < 3; ++ch)
        out.at(r, c, ch) = values[Eigen::Index(std::size_t(r) * w + c)];
  return out;
}

int cmd_visualize(const std::string& ckpt_path, const std::string& meta_path,
                  const std::string& pair_arg, const std::string& out_path, std::uint64_t seed) {
  const auto comma = pair_arg.find(',');
  if (comma == std::string::npos) throw std::runtime_error("--pair wants id_i,id_j");
  const std::string id_i = pair_arg.substr(0, comma);
  const std::string id_j = pair_arg.substr(comma + 1);

  auto records = read_metadata(meta_path);
  const ImageRecord* rec_i = nullptr;
  const ImageRecord* rec_j = nullptr;
  for (const auto& r : records) {
    if (r.id == id_i) rec_i = &r;
    if (r.id == id_j) rec_j = &r;
  }
  if (!rec_i || !rec_j)
    throw std::runtime_error("unknown image id: " + (rec_i ? id_j : id_i));

  Model model = Model::load_checkpoint(ckpt_path);
  AugConfig acfg;
  acfg.input_size = model.config().input_size;
  Rng rng = sub_rng(seed, 0x766973ULL);
  PreparedPair pp = prepare_pair(*rec_i, *rec_j, load_record_image(*rec_i),
                                 load_record_image(*rec_j), rng, acfg, MaskConfig{},
                                 model.config().grid());

  std::vector<ImageInput> inputs{{&pp.img_i, pp.nb_i, &pp.mask_i, 0},
                                 {&pp.img_j, pp.nb_j, &pp.mask_j, 1}};
  ad::Graph g;
  ForwardResult res;
  model.forward(g, inputs, ForwardOptions{}, &res);

  // Per image, one row of five panels: input, masked input, prediction,
  // cross-visible pixels, loss weight.
  const int hw = model.config().input_size;
  const int ps = model.config().patch_size;
  Image canvas(2 * hw, 5 * hw, 3);
  const Image* originals[2] = {&pp.img_i, &pp.img_j};
  const PatchMask* masks[2] = {&pp.mask_i, &pp.mask_j};
  for (int v = 0; v < 2; ++v) {
    Image masked = *originals[v];
    for (int r = 0; r < hw; ++r)
      for (int c = 0; c < hw; ++c)
        if (masks[v]->masked(r / ps, c / ps))
          for (int ch = 0; ch < 3; ++ch) masked.at(r, c, ch) = 0.5;
    Image pred = model.denormalize(res.recon[v], *originals[v]);
    Eigen::VectorXd cross(std::size_t(hw) * hw);
    for (std::size_t k = 0; k < res.vis[v].category.size(); ++k)
      cross[Eigen::Index(k)] = res.vis[v].category[k] == PixelCategory::kCross ? 1.0 : 0.0;
    const Image* panels[5] = {originals[v], &masked, &pred, nullptr, nullptr};
    Image cross_img = gray_panel(cross, hw, hw);
    Image weight_img = gray_panel(res.weights[v], hw, hw);
    panels[3] = &cross_img;
    panels[4] = &weight_img;
    for (int p = 0; p < 5; ++p)
      for (int r = 0; r < hw; ++r)
        for (int c = 0; c < hw; ++c)
          for (int ch = 0; ch < 3; ++ch)
            canvas.at(v * hw + r, p * hw + c, ch) = panels[p]->at(r, c, ch);
  }
  write_png(canvas, out_path);
  std::cout << "wrote " << out_path << "\n";
  return kExitOk;
}

// Builds a small deterministic pair with partial overlap for the self checks.
std::pair<PreparedPair, Model> selftest_fixture() {
  ModelConfig mc;
  mc.input_size = 16;
  mc.patch_size = 4;
  mc.enc_dim = 32;
  mc.dec_dim = 16;
  mc.enc_depth = 1;
  mc.dec_depth = 1;
  mc.heads = 2;
  Model model(mc, 7);

  Rng rng = sub_rng(11, 0);
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  PreparedPair pp;
  pp.img_i = Image(16, 16, 3);
  pp.img_j = Image(16, 16, 3);
  for (auto& v : pp.img_i.data) v = dist(rng);
  // Half-overlapping footprints; the overlap of j copies i's content with a
  // mild change so CROSS weights land strictly inside (0,1).
  for (int r = 0; r < 16; ++r)
    for (int c = 0; c < 16; ++c)
      for (int ch = 0; ch < 3; ++ch)
        pp.img_j.at(r, c, ch) =
            c < 8 ? std::clamp(pp.img_i.at(r, c + 8, ch) + 0.05 * dist(rng), 0.0, 1.0)
                  : dist(rng);
  GeoBBox bi{0.0, 1.0, 0.0, 1.0};
  GeoBBox bj{0.0, 1.0, 0.5, 1.5};
  auto [ni, nj] = normalize_pair(bi, bj);
  pp.nb_i = ni;
  pp.nb_j = nj;
  Rng mrng_i = sub_rng(11, 1);
  Rng mrng_j = sub_rng(11, 2);
  auto [mi, mj, ratio] = mask_pair(bi, bj, 4, 4, MaskConfig{}, mrng_i, mrng_j);
  pp.mask_i = std::move(mi);
  pp.mask_j = std::move(mj);
  pp.mask_ratio = ratio;
  return {std::move(pp), std::move(model)};
}

int cmd_selftest(const std::string& inject) {
  auto fail = [](const std::string& name) {
    std::cout << "selftest FAILED: " << name << "\n";
    return kExitPropertyFailure;
  };

  // geometry-roundtrip
  {
    Rng rng = sub_rng(3, 0);
    std::uniform_real_distribution<double> dist(0.05, 0.95);
    for (int trial = 0; trial < 200; ++trial) {
      NormalizedBBox nb;
      nb.left = dist(rng) * 0.5;
      nb.right = nb.left + 0.05 + dist(rng) * 0.4;
      nb.bottom = dist(rng) * 0.5;
      nb.top = nb.bottom + 0.05 + dist(rng) * 0.4;
      const FrameTransform t = frame_transform(nb, 32, 32);
      const Eigen::Matrix3d round_trip = t.from_shared * t.to_shared;
      if (!round_trip.isApprox(Eigen::Matrix3d::Identity(), 1e-10))
        return fail("geometry-roundtrip");
    }
    std::cout << "geometry-roundtrip: ok\n";
  }

  // visibility-partition
  {
    auto [pp, model] = selftest_fixture();
    const FrameTransform ti = frame_transform(pp.nb_i, 16, 16);
    const FrameTransform tj = frame_transform(pp.nb_j, 16, 16);
    int self = 0, cross = 0, nots = 0;
    for (int dir = 0; dir < 2; ++dir) {
      const PatchMask& own = dir == 0 ? pp.mask_i : pp.mask_j;
      const PatchMask& other = dir == 0 ? pp.mask_j : pp.mask_i;
      VisibilityMap vis = classify_pixels(own, other, dir == 0 ? ti : tj, dir == 0 ? tj : ti, 4);
      for (int r = 0; r < 16; ++r)
        for (int c = 0; c < 16; ++c) {
          switch (vis.at(r, c)) {
            case PixelCategory::kSelf: ++self; break;
            case PixelCategory::kCross: ++cross; break;
            case PixelCategory::kNot: ++nots; break;
          }
          if (!own.masked(r / 4, c / 4) != (vis.at(r, c) == PixelCategory::kSelf))
            return fail("visibility-partition");
        }
    }
    if (self + cross + nots != 2 * 16 * 16 || cross == 0) return fail("visibility-partition");
    std::cout << "visibility-partition: ok (self=" << self << " cross=" << cross
              << " not=" << nots << ")\n";
  }

  // weight-detachment and gradient-check
  {
    auto [pp, model] = selftest_fixture();
    std::vector<ImageInput> inputs{{&pp.img_i, pp.nb_i, &pp.mask_i, 0},
                                   {&pp.img_j, pp.nb_j, &pp.mask_j, 1}};
    const bool freeze = inject != "weight-detachment";
    auto detach = check_model_gradients(model, inputs, ForwardOptions{}, 1e-5, 1e-4,
                                        /*max_coords_per_param=*/8, freeze, 5);
    if (!detach.pass) return fail("weight-detachment");
    std::cout << "weight-detachment: ok (max rel err " << detach.max_rel_err << ")\n";

    auto full = check_model_gradients(model, inputs, ForwardOptions{}, 1e-5, 1e-4,
                                      /*max_coords_per_param=*/16, true, 6);
    if (!full.pass) return fail("gradient-check");
    std::cout << "gradient-check: ok (max rel err " << full.max_rel_err << ", "
              << full.coords_checked << " coords)\n";
  }

  std::cout << "selftest: all properties hold\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"NeighborMAE-style joint masked reconstruction of geospatial image pairs"};
  app.require_subcommand(1);

  std::string meta_path, index_path, out_path, config_path, format = "bin", pair_arg, inject;
  std::string out_dir = "out";
  double alpha = 0.1;
  std::uint64_t seed = 0;
  bool seed_set = false;
  double epochs_override = -1.0;
  int batch_override = 0;
  std::vector<std::string> ablations;
  WorldSpec wspec;
  std::string overlap_mode = "grid_adjacent";

  auto* index_cmd = app.add_subcommand("index", "build the neighbor lookup table");
  index_cmd->add_option("--meta", meta_path, "metadata JSONL file")->required();
  index_cmd->add_option("--alpha", alpha, "IoU threshold");
  index_cmd->add_option("--out", out_path, "output index file")->required();
  index_cmd->add_option("--format", format, "bin|json");

  auto* gen_cmd = app.add_subcommand("genworld", "generate a synthetic tile dataset");
  gen_cmd->add_option("--out-dir", out_dir, "output directory")->required();
  gen_cmd->add_option("--world-px", wspec.world_px, "world raster side length");
  gen_cmd->add_option("--tile-px", wspec.tile_px, "tile side length");
  gen_cmd->add_option("--n-tiles", wspec.n_tiles, "number of tiles");
  gen_cmd->add_option("--octaves", wspec.noise_octaves, "noise octaves");
  gen_cmd->add_option("--mode", overlap_mode, "grid_adjacent|random_jitter|revisit");
  gen_cmd->add_option("--stride", wspec.grid_stride, "grid stride (default tile/2)");
  gen_cmd->add_option("--revisit-noise", wspec.revisit_noise, "revisit perturbation std");
  gen_cmd->add_option("--seed", wspec.seed, "generation seed");

  auto* pre_cmd = app.add_subcommand("pretrain", "run the pretraining loop");
  pre_cmd->add_option("--meta", meta_path, "metadata JSONL file")->required();
  pre_cmd->add_option("--index", index_path, "NMIX index file (default: build at alpha 0)");
  pre_cmd->add_option("--config", config_path, "JSON config file");
  pre_cmd->add_option("--out-dir", out_dir, "output directory")->required();
  pre_cmd->add_option("--seed", seed, "training seed")->each([&](const std::string&) {
    seed_set = true;
  });
  pre_cmd->add_option("--epochs", epochs_override, "epoch count override");
  pre_cmd->add_option("--batch", batch_override, "batch size in images");
  pre_cmd->add_option("--ablation", ablations, "mask=<m1>,<m2> or weights=<policy>");

  auto* vis_cmd = app.add_subcommand("visualize", "render a 5-panel reconstruction row per image");
  vis_cmd->add_option("--checkpoint", config_path, "NMCK checkpoint")->required();
  vis_cmd->add_option("--meta", meta_path, "metadata JSONL file")->required();
  vis_cmd->add_option("--pair", pair_arg, "id_i,id_j")->required();
  vis_cmd->add_option("--out", out_path, "output PNG");
  vis_cmd->add_option("--seed", seed, "augmentation seed");

  auto* self_cmd = app.add_subcommand("selftest", "run gradient and geometry self checks");
  self_cmd->add_option("--inject", inject, "fault-injection fixture (test use only)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (index_cmd->parsed()) return cmd_index(meta_path, alpha, out_path, format);
    if (gen_cmd->parsed()) {
      wspec.overlap_mode = parse_overlap_mode(overlap_mode);
      return cmd_genworld(wspec, out_dir);
    }
    if (pre_cmd->parsed()) {
      RunConfig cfg = load_run_config(config_path);
      apply_ablations(cfg, ablations);
      if (seed_set) cfg.train.seed = seed;
      if (epochs_override >= 0.0) cfg.train.epochs = epochs_override;
      if (batch_override > 0) cfg.train.batch_images = batch_override;
      return cmd_pretrain(meta_path, index_path, cfg, out_dir);
    }
    if (vis_cmd->parsed()) {
      if (out_path.empty()) out_path = "panels.png";
      return cmd_visualize(config_path, meta_path, pair_arg, out_path, seed);
    }
    if (self_cmd->parsed()) return cmd_selftest(inject);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
