#pragma once

#include <map>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "nmae/autodiff.hpp"
#include "nmae/image.hpp"
#include "nmae/masking.hpp"
#include "nmae/relpos.hpp"
#include "nmae/visibility.hpp"

namespace nmae {

struct ModelConfig {
  int input_size = 32;
  int patch_size = 8;
  int enc_dim = 64;
  int dec_dim = 32;
  int enc_depth = 2;
  int dec_depth = 1;
  int heads = 4;
  int channels = 3;
  bool norm_pix = true;
  double coord_scale = 100.0;

  int grid() const { return input_size / patch_size; }
  int n_patches() const { return grid() * grid(); }
  int patch_dim() const { return patch_size * patch_size * channels; }
  void validate() const;

  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
};

// Named learnable arrays. Shapes are fixed after construction; iteration
// order (and thus every reduction touching all parameters) is the sorted
// name order.
class ParameterStore {
 public:
  void add(const std::string& name, Eigen::MatrixXd value, bool decay = true);
  Eigen::MatrixXd& at(const std::string& name);
  const Eigen::MatrixXd& at(const std::string& name) const;
  bool decays(const std::string& name) const;
  std::vector<std::string> names() const;
  std::size_t count() const { return values_.size(); }

 private:
  std::map<std::string, Eigen::MatrixXd> values_;
  std::map<std::string, bool> decay_;
};

// One image's share of a forward pass.
struct ImageInput {
  const Image* pixels = nullptr;
  NormalizedBBox nb;
  const PatchMask* mask = nullptr;
  int slot = 0;
};

struct ForwardResult {
  double loss = 0.0;
  std::vector<Image> recon;        // target space (per-patch normalized when norm_pix)
  std::vector<Image> targets;      // same space as recon
  std::vector<Eigen::VectorXd> weights;
  std::vector<VisibilityMap> vis;
  double cross_fraction = 0.0;     // CROSS pixels / all pixels over all images
};

struct ForwardOptions {
  WeightPolicy policy = WeightPolicy::kOurs;
  // When set (size matching inputs), the per-pixel weights are taken as given
  // instead of being recomputed from the current reconstruction. Used by the
  // finite-difference harness to probe the detached-weight loss.
  const std::vector<Eigen::VectorXd>* frozen_weights = nullptr;
};

// "NMCK" versioned binary checkpoint: config JSON, free-form metadata JSON,
// then named float64 arrays.
struct Checkpoint {
  std::string config_json;
  std::string meta_json;
  std::map<std::string, Eigen::MatrixXd> arrays;
};
void save_nmck(const std::string& path, const Checkpoint& ck);
Checkpoint load_nmck(const std::string& path);

Eigen::MatrixXd patchify(const Image& img, int patch_size);
Image unpatchify(const Eigen::MatrixXd& patches, int patch_size, int height, int width,
                 int channels);

// Toy masked autoencoder: shared encoder over the concatenated visible tokens
// of all input images, decoder with mask tokens over the full sequence,
// linear per-patch pixel prediction.
class Model {
 public:
  explicit Model(const ModelConfig& cfg, std::uint64_t seed = 0);

  const ModelConfig& config() const { return cfg_; }
  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }

  // Builds the full graph; `out` may be null when only the loss matters.
  ad::Var forward(ad::Graph& g, const std::vector<ImageInput>& inputs,
                  const ForwardOptions& opts, ForwardResult* out,
                  std::map<std::string, ad::Var>* param_vars = nullptr) const;

  // Convenience: forward + backward, returning loss and parameter gradients.
  double forward_backward(const std::vector<ImageInput>& inputs, const ForwardOptions& opts,
                          std::map<std::string, Eigen::MatrixXd>& grads,
                          ForwardResult* out = nullptr) const;

  double loss_only(const std::vector<ImageInput>& inputs, const ForwardOptions& opts) const;

  // Undo the per-patch target normalization of a reconstruction using the
  // matching target image's patch statistics (for visualization).
  Image denormalize(const Image& recon_norm, const Image& target_raw) const;

  void save_checkpoint(const std::string& path) const;
  static Model load_checkpoint(const std::string& path);

 private:
  ModelConfig cfg_;
  ParameterStore params_;
};

}  // namespace nmae
