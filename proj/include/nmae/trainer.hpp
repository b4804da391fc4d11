#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "nmae/augment.hpp"
#include "nmae/geo.hpp"
#include "nmae/masking.hpp"
#include "nmae/model.hpp"

namespace nmae {

struct TrainConfig {
  double base_lr = 1.6e-2;  // per-256 batch; scaled by batch_images / 256
  int batch_images = 32;    // counts images, not pairs
  double epochs = 25.0;
  double warmup_epochs = 1.0;
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  WeightPolicy policy = WeightPolicy::kOurs;

  double actual_lr() const { return base_lr * batch_images / 256.0; }
};

// Linear warmup to actual_lr over warmup_epochs, then cosine decay to 0.
double lr_at(long step, const TrainConfig& cfg, long steps_per_epoch);

// A pair fully prepared for the model: augmented, normalized, masked.
struct PreparedPair {
  Image img_i, img_j;
  NormalizedBBox nb_i, nb_j;
  PatchMask mask_i, mask_j;
  double mask_ratio = 0.0;
  std::string id_i, id_j;
};

PreparedPair prepare_pair(const ImageRecord& rec_i, const ImageRecord& rec_j,
                          const Image& pixels_i, const Image& pixels_j, Rng& rng,
                          const AugConfig& acfg, const MaskConfig& mcfg, int grid);

struct TrainState {
  long step = 0;
  long images_seen = 0;
  std::map<std::string, Eigen::MatrixXd> m;  // first moments
  std::map<std::string, Eigen::MatrixXd> v;  // second moments
};

struct StepStats {
  double loss = 0.0;
  double lr = 0.0;
  double mean_mask_ratio = 0.0;
  double mean_cross_fraction = 0.0;
};

// AdamW with decoupled weight decay; gradients averaged over the batch's
// pairs. Pair forward/backward passes run in parallel across up to
// NMAE_THREADS workers with a fixed reduction order.
class Trainer {
 public:
  Trainer(Model& model, const TrainConfig& cfg, long steps_per_epoch);

  StepStats train_step(const std::vector<PreparedPair>& batch);

  TrainState& state() { return state_; }
  const TrainConfig& config() const { return cfg_; }

  void save_checkpoint(const std::string& path, const std::string& rng_state) const;
  // Restores optimizer state from a trainer checkpoint; model parameters are
  // loaded separately via Model::load_checkpoint. Returns the stored rng state.
  std::string load_checkpoint(const std::string& path);

 private:
  Model& model_;
  TrainConfig cfg_;
  long steps_per_epoch_;
  TrainState state_;
};

int worker_count();

struct PretrainResult {
  std::vector<StepStats> steps;
  std::string checkpoint_path;
  std::string metrics_path;
};

// Full pretraining loop: epoch permutation over anchors, neighbor sampling
// with self-pair fallback, line-delimited JSON metrics, final checkpoint.
PretrainResult pretrain(const std::vector<ImageRecord>& records, const NeighborIndex& index,
                        Model& model, const TrainConfig& tcfg, const AugConfig& acfg,
                        const MaskConfig& mcfg, const std::string& out_dir);

}  // namespace nmae
