#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>

#include "nmae/trainer.hpp"
#include "nmae/world.hpp"

using namespace nmae;

namespace {

Image noise_image(int h, int w, Rng& rng, int channels = 3) {
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  Image img(h, w, channels);
  for (auto& v : img.data) v = dist(rng);
  return img;
}

ModelConfig tiny_cfg() {
  ModelConfig cfg;
  cfg.input_size = 16;
  cfg.patch_size = 4;
  cfg.enc_dim = 32;
  cfg.dec_dim = 16;
  cfg.enc_depth = 1;
  cfg.dec_depth = 1;
  cfg.heads = 2;
  return cfg;
}

std::vector<PreparedPair> tiny_batch(int n_pairs, std::uint64_t seed) {
  std::vector<PreparedPair> batch;
  for (int k = 0; k < n_pairs; ++k) {
    Rng rng = sub_rng(seed, k);
    PreparedPair p;
    p.img_i = noise_image(16, 16, rng);
    p.img_j = noise_image(16, 16, rng);
    auto [ni, nj] = normalize_pair({0, 1, 0, 1}, {0, 1, 0.4, 1.4});
    p.nb_i = ni;
    p.nb_j = nj;
    p.mask_i = sample_mask(4, 4, 0.75, rng);
    p.mask_j = sample_mask(4, 4, 0.75, rng);
    p.mask_ratio = 0.75;
    p.id_i = "a" + std::to_string(k);
    p.id_j = "b" + std::to_string(k);
    batch.push_back(std::move(p));
  }
  return batch;
}

double param_checksum(const Model& model) {
  double s = 0.0;
  for (const auto& name : model.params().names()) s += model.params().at(name).array().sum();
  return s;
}

}  // namespace

TEST_CASE("lr schedule: warmup, peak, cosine tail") {
  TrainConfig cfg;
  cfg.base_lr = 2.56e-1;
  cfg.batch_images = 32;  // actual 3.2e-2
  cfg.epochs = 10;
  cfg.warmup_epochs = 2;
  const long spe = 100;
  const double peak = cfg.actual_lr();
  CHECK(peak == doctest::Approx(3.2e-2).epsilon(1e-12));

  CHECK(lr_at(0, cfg, spe) == 0.0);
  CHECK(lr_at(100, cfg, spe) == doctest::Approx(peak / 2).epsilon(1e-12));
  CHECK(lr_at(200, cfg, spe) == doctest::Approx(peak).epsilon(1e-12));
  // halfway through decay: cos(pi/2) midpoint
  CHECK(lr_at(600, cfg, spe) == doctest::Approx(peak * 0.5).epsilon(1e-12));
  CHECK(lr_at(1000, cfg, spe) == doctest::Approx(0.0).epsilon(1e-12));
  // monotone up then down
  for (long s = 1; s <= 200; ++s) CHECK(lr_at(s, cfg, spe) >= lr_at(s - 1, cfg, spe));
  for (long s = 201; s <= 1000; ++s) CHECK(lr_at(s, cfg, spe) <= lr_at(s - 1, cfg, spe));
}

TEST_CASE("train_step at zero lr leaves parameters unchanged") {
  Model model(tiny_cfg(), 1);
  TrainConfig cfg;
  cfg.base_lr = 0.0;
  cfg.weight_decay = 0.0;
  Trainer trainer(model, cfg, 10);
  const double before = param_checksum(model);
  const auto stats = trainer.train_step(tiny_batch(2, 3));
  CHECK(std::isfinite(stats.loss));
  CHECK(param_checksum(model) == before);
  CHECK(trainer.state().step == 1);
  CHECK(trainer.state().images_seen == cfg.batch_images);
}

TEST_CASE("train_step reduces the loss on a repeated batch") {
  Model model(tiny_cfg(), 1);
  TrainConfig cfg;
  cfg.base_lr = 8e-2;
  cfg.batch_images = 4;
  cfg.epochs = 100;
  cfg.warmup_epochs = 1;
  Trainer trainer(model, cfg, 10);
  const auto batch = tiny_batch(2, 7);
  const double first = trainer.train_step(batch).loss;
  double last = first;
  for (int s = 0; s < 60; ++s) last = trainer.train_step(batch).loss;
  CHECK(last < first);
}

TEST_CASE("training is deterministic") {
  auto run = [](int threads) {
    if (threads > 0) setenv("NMAE_THREADS", std::to_string(threads).c_str(), 1);
    Model model(tiny_cfg(), 9);
    TrainConfig cfg;
    cfg.base_lr = 4e-2;
    cfg.batch_images = 8;
    Trainer trainer(model, cfg, 10);
    const auto batch = tiny_batch(4, 11);
    double loss = 0.0;
    for (int s = 0; s < 5; ++s) loss = trainer.train_step(batch).loss;
    unsetenv("NMAE_THREADS");
    return std::make_pair(loss, param_checksum(model));
  };
  const auto a = run(1);
  const auto b = run(1);
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
}

TEST_CASE("trainer checkpoint restores optimizer state") {
  Model model(tiny_cfg(), 4);
  TrainConfig cfg;
  cfg.base_lr = 4e-2;
  Trainer trainer(model, cfg, 10);
  const auto batch = tiny_batch(2, 5);
  for (int s = 0; s < 3; ++s) trainer.train_step(batch);

  const auto dir = std::filesystem::temp_directory_path() / "nmae_test_trainer";
  std::filesystem::create_directories(dir);
  const auto path = (dir / "trainer.nmck").string();
  trainer.save_checkpoint(path, "rng-state-blob");

  Model resumed = Model::load_checkpoint(path);
  Trainer t2(resumed, cfg, 10);
  CHECK(t2.load_checkpoint(path) == "rng-state-blob");
  CHECK(t2.state().step == trainer.state().step);
  CHECK(t2.state().images_seen == trainer.state().images_seen);

  // both continue identically
  const double la = trainer.train_step(batch).loss;
  const double lb = t2.train_step(batch).loss;
  CHECK(la == lb);
  CHECK(param_checksum(model) == param_checksum(resumed));
}

TEST_CASE("prepare_pair wires augmentation, normalization, and masking together") {
  Rng imgrng(2);
  ImageRecord ra{"a", "", {0, 1, 0, 1}, 48, 48, {}};
  ImageRecord rb{"b", "", {0, 1, 0.5, 1.5}, 48, 48, {}};
  const Image pa = noise_image(48, 48, imgrng);
  const Image pb = noise_image(48, 48, imgrng);
  AugConfig acfg;
  acfg.input_size = 16;
  MaskConfig mcfg;
  Rng rng(21);
  const auto p = prepare_pair(ra, rb, pa, pb, rng, acfg, mcfg, 4);
  CHECK(p.img_i.height == 16);
  CHECK(p.img_j.width == 16);
  CHECK(p.mask_i.rows == 4);
  CHECK(p.mask_ratio >= mcfg.m1);
  CHECK(p.mask_ratio <= mcfg.m2);
  CHECK(p.id_i == "a");
  CHECK(p.id_j == "b");
  // joint frame spans [0,1] on each axis
  CHECK(std::max(p.nb_i.top, p.nb_j.top) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(std::min(p.nb_i.left, p.nb_j.left) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("pretrain runs epochs, writes metrics, and resumes deterministically") {
  const auto dir = std::filesystem::temp_directory_path() / "nmae_test_pretrain";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);

  WorldSpec ws;
  ws.world_px = 128;
  ws.tile_px = 32;
  ws.n_tiles = 24;
  ws.seed = 3;
  ws.overlap_mode = OverlapMode::kGridAdjacent;
  const auto data = generate(ws, (dir / "data").string());
  const auto index = build_index(data.records, 0.0);

  ModelConfig mc = tiny_cfg();
  TrainConfig tc;
  tc.base_lr = 1e-2;
  tc.batch_images = 8;
  tc.epochs = 2;
  tc.warmup_epochs = 0.5;
  tc.seed = 5;
  AugConfig ac;
  ac.input_size = 16;
  MaskConfig mk;

  Model m1(mc, 5);
  const auto r1 = pretrain(data.records, index, m1, tc, ac, mk, (dir / "run1").string());
  // 24 records, batch 8 -> 3 steps per epoch, 2 epochs
  CHECK(int(r1.steps.size()) == 6);
  CHECK(std::filesystem::exists(r1.checkpoint_path));
  CHECK(std::filesystem::exists(r1.metrics_path));
  for (const auto& s : r1.steps) {
    CHECK(std::isfinite(s.loss));
    CHECK(s.mean_mask_ratio >= mk.m1 - 1e-9);
    CHECK(s.mean_mask_ratio <= mk.m2 + 1e-9);
  }

  Model m2(mc, 5);
  const auto r2 = pretrain(data.records, index, m2, tc, ac, mk, (dir / "run2").string());
  REQUIRE(r2.steps.size() == r1.steps.size());
  for (std::size_t k = 0; k < r1.steps.size(); ++k) CHECK(r1.steps[k].loss == r2.steps[k].loss);
  CHECK(param_checksum(m1) == param_checksum(m2));
}
