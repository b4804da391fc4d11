#include "nmae/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <json.hpp>

#include "nmae/relpos.hpp"

namespace nmae {

using json = nlohmann::json;

double lr_at(long step, const TrainConfig& cfg, long steps_per_epoch) {
  if (step < 0) throw std::invalid_argument("lr_at: negative step");
  const double warmup_steps = cfg.warmup_epochs * double(steps_per_epoch);
  const double total_steps = cfg.epochs * double(steps_per_epoch);
  const double peak = cfg.actual_lr();
  if (warmup_steps > 0.0 && double(step) < warmup_steps) return peak * double(step) / warmup_steps;
  if (total_steps <= warmup_steps) return peak;
  const double t = (double(step) - warmup_steps) / (total_steps - warmup_steps);
  return peak * 0.5 * (1.0 + std::cos(M_PI * std::min(t, 1.0)));
}

PreparedPair prepare_pair(const ImageRecord& rec_i, const ImageRecord& rec_j,
                          const Image& pixels_i, const Image& pixels_j, Rng& rng,
                          const AugConfig& acfg, const MaskConfig& mcfg, int grid) {
  auto loader = [&](const ImageRecord& r) -> Image {
    return r.id == rec_i.id ? pixels_i : pixels_j;
  };
  // Self-pairs reuse the same pixels under two independent crop draws.
  auto [ai, aj] = augment_pair(rec_i, rec_j, loader, rng, acfg);

  PreparedPair pp;
  pp.id_i = rec_i.id;
  pp.id_j = rec_j.id;
  auto [ni, nj] = normalize_pair(ai.bbox, aj.bbox);
  pp.nb_i = ni;
  pp.nb_j = nj;
  Rng rng_mi = sub_rng(rng(), 1);
  Rng rng_mj = sub_rng(rng(), 2);
  auto [mi, mj, ratio] = mask_pair(ai.bbox, aj.bbox, grid, grid, mcfg, rng_mi, rng_mj);
  pp.mask_i = std::move(mi);
  pp.mask_j = std::move(mj);
  pp.mask_ratio = ratio;
  pp.img_i = std::move(ai.pixels);
  pp.img_j = std::move(aj.pixels);
  return pp;
}

int worker_count() {
  if (const char* env = std::getenv("NMAE_THREADS")) {
    const int n = std::atoi(env);
    if (n >= 1) return n;
  }
  return int(std::max(1u, std::thread::hardware_concurrency()));
}

Trainer::Trainer(Model& model, const TrainConfig& cfg, long steps_per_epoch)
    : model_(model), cfg_(cfg), steps_per_epoch_(steps_per_epoch) {
  for (const auto& name : model_.params().names()) {
    const auto& p = model_.params().at(name);
    state_.m[name] = Eigen::MatrixXd::Zero(p.rows(), p.cols());
    state_.v[name] = Eigen::MatrixXd::Zero(p.rows(), p.cols());
  }
}

StepStats Trainer::train_step(const std::vector<PreparedPair>& batch) {
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
  const ForwardOptions opts{cfg_.policy, nullptr};

  struct Partial {
    std::map<std::string, Eigen::MatrixXd> grads;
    double loss = 0.0;
    double ratio = 0.0;
    double cross = 0.0;
  };
  const int n_workers = std::min<int>(worker_count(), int(batch.size()));
  std::vector<Partial> partials(n_workers);
  std::vector<std::string> bad_pairs(batch.size());

  auto run_range = [&](int wid) {
    for (std::size_t k = wid; k < batch.size(); k += n_workers) {
      const auto& pp = batch[k];
      std::vector<ImageInput> inputs{{&pp.img_i, pp.nb_i, &pp.mask_i, 0},
                                     {&pp.img_j, pp.nb_j, &pp.mask_j, 1}};
      ForwardResult res;
      const double loss = model_.forward_backward(inputs, opts, partials[wid].grads, &res);
      if (!std::isfinite(loss)) bad_pairs[k] = pp.id_i + "," + pp.id_j;
      partials[wid].loss += loss;
      partials[wid].ratio += pp.mask_ratio;
      partials[wid].cross += res.cross_fraction;
    }
  };
  if (n_workers == 1) {
    run_range(0);
  } else {
    std::vector<std::thread> threads;
    for (int w = 0; w < n_workers; ++w) threads.emplace_back(run_range, w);
    for (auto& t : threads) t.join();
  }

  for (const auto& s : bad_pairs)
    if (!s.empty()) throw std::runtime_error("non-finite loss for pair ids (" + s + ")");

  StepStats stats;
  const double inv_n = 1.0 / double(batch.size());
  std::map<std::string, Eigen::MatrixXd> grads;
  for (int w = 0; w < n_workers; ++w) {  // fixed reduction order
    stats.loss += partials[w].loss;
    stats.mean_mask_ratio += partials[w].ratio;
    stats.mean_cross_fraction += partials[w].cross;
    for (auto& [name, gmat] : partials[w].grads) {
      auto it = grads.find(name);
      if (it == grads.end())
        grads[name] = gmat;
      else
        it->second += gmat;
    }
  }
  stats.loss *= inv_n;
  stats.mean_mask_ratio *= inv_n;
  stats.mean_cross_fraction *= inv_n;

  const double lr = lr_at(state_.step, cfg_, steps_per_epoch_);
  stats.lr = lr;
  const long t = state_.step + 1;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, double(t));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, double(t));
  for (const auto& name : model_.params().names()) {
    Eigen::MatrixXd& p = model_.params().at(name);
    Eigen::MatrixXd g = grads.count(name)
                            ? Eigen::MatrixXd(grads.at(name) * inv_n)
                            : Eigen::MatrixXd::Zero(p.rows(), p.cols());
    Eigen::MatrixXd& m = state_.m.at(name);
    Eigen::MatrixXd& v = state_.v.at(name);
    m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g;
    v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
    if (model_.params().decays(name)) p -= lr * cfg_.weight_decay * p;
    p.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + cfg_.adam_eps);
  }
  state_.step += 1;
  state_.images_seen += cfg_.batch_images;
  return stats;
}

void Trainer::save_checkpoint(const std::string& path, const std::string& rng_state) const {
  Checkpoint ck;
  ck.config_json = model_.config().to_json();
  json meta{{"step", state_.step}, {"images_seen", state_.images_seen}, {"rng", rng_state}};
  ck.meta_json = meta.dump();
  for (const auto& name : model_.params().names()) {
    ck.arrays[name] = model_.params().at(name);
    ck.arrays["opt.m." + name] = state_.m.at(name);
    ck.arrays["opt.v." + name] = state_.v.at(name);
  }
  save_nmck(path, ck);
}

std::string Trainer::load_checkpoint(const std::string& path) {
  Checkpoint ck = load_nmck(path);
  json meta = json::parse(ck.meta_json);
  state_.step = meta.value("step", 0L);
  state_.images_seen = meta.value("images_seen", 0L);
  for (const auto& name : model_.params().names()) {
    model_.params().at(name) = ck.arrays.at(name);
    state_.m.at(name) = ck.arrays.at("opt.m." + name);
    state_.v.at(name) = ck.arrays.at("opt.v." + name);
  }
  return meta.value("rng", std::string());
}

PretrainResult pretrain(const std::vector<ImageRecord>& records, const NeighborIndex& index,
                        Model& model, const TrainConfig& tcfg, const AugConfig& acfg,
                        const MaskConfig& mcfg, const std::string& out_dir) {
  if (tcfg.batch_images < 2 || tcfg.batch_images % 2 != 0)
    throw std::invalid_argument("pretrain: batch_images must be an even count >= 2");
  std::filesystem::create_directories(out_dir);

  // The whole dataset stays resident; desk-scale tile sets are small.
  std::map<std::string, Image> cache;
  std::map<std::string, const ImageRecord*> by_id;
  for (const auto& r : records) by_id[r.id] = &r;
  auto image_of = [&](const ImageRecord& r) -> const Image& {
    auto it = cache.find(r.id);
    if (it == cache.end()) it = cache.emplace(r.id, load_record_image(r)).first;
    return it->second;
  };

  const long D = long(records.size());
  const long steps_per_epoch = D / tcfg.batch_images;
  if (steps_per_epoch < 1)
    throw std::invalid_argument("pretrain: dataset smaller than one batch");
  const long total_steps = std::lround(tcfg.epochs * double(steps_per_epoch));
  const int anchors_per_batch = tcfg.batch_images / 2;

  Trainer trainer(model, tcfg, steps_per_epoch);
  Rng rng = sub_rng(tcfg.seed, 0x7261696eULL);

  PretrainResult result;
  result.metrics_path = (std::filesystem::path(out_dir) / "metrics.jsonl").string();
  result.checkpoint_path = (std::filesystem::path(out_dir) / "checkpoint.nmck").string();
  std::ofstream metrics(result.metrics_path);
  if (!metrics) throw std::runtime_error("cannot write metrics file: " + result.metrics_path);

  std::vector<std::size_t> perm(records.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::size_t cursor = perm.size();  // forces a reshuffle on first use

  long step = 0;
  while (step < total_steps) {
    std::vector<PreparedPair> batch;
    batch.reserve(anchors_per_batch);
    for (int a = 0; a < anchors_per_batch; ++a) {
      if (cursor + 0 >= perm.size()) {
        std::shuffle(perm.begin(), perm.end(), rng);
        cursor = 0;
      }
      const ImageRecord& anchor = records[perm[cursor++]];
      auto neighbor_id = sample_neighbor(index, anchor.id, rng);
      const ImageRecord& neighbor = neighbor_id ? *by_id.at(*neighbor_id) : anchor;
      Rng pair_rng = sub_rng(tcfg.seed, splitmix64(std::uint64_t(step) * 8191 + a));
      batch.push_back(prepare_pair(anchor, neighbor, image_of(anchor), image_of(neighbor),
                                   pair_rng, acfg, mcfg, model.config().grid()));
    }
    StepStats stats = trainer.train_step(batch);
    const long epoch = trainer.state().images_seen / std::max<long>(D, 1);
    json line{{"step", trainer.state().step}, {"epoch", epoch},
              {"loss", stats.loss},           {"lr", stats.lr},
              {"mean_mask_ratio", stats.mean_mask_ratio},
              {"mean_cross_fraction", stats.mean_cross_fraction},
              {"policy", weight_policy_name(tcfg.policy)}};
    metrics << line.dump() << "\n";
    result.steps.push_back(stats);
    ++step;
  }

  std::ostringstream rng_state;
  rng_state << rng;
  trainer.save_checkpoint(result.checkpoint_path, rng_state.str());
  return result;
}

}  // namespace nmae
