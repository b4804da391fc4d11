#include "nmae/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "nmae/random.hpp"

namespace nmae {

GradCheckResult check_model_gradients(Model& model, const std::vector<ImageInput>& inputs,
                                      const ForwardOptions& opts, double step, double tol,
                                      int max_coords_per_param, bool freeze_weights,
                                      std::uint64_t seed) {
  // Analytic gradients and the base-point weights in one pass.
  std::map<std::string, Eigen::MatrixXd> grads;
  ForwardResult base;
  model.forward_backward(inputs, opts, grads, &base);

  ForwardOptions probe = opts;
  if (freeze_weights) probe.frozen_weights = &base.weights;

  // The probe mutates parameter values in place and restores them; the model
  // is unchanged on return.
  Model& m = model;
  GradCheckResult result;
  Rng rng = sub_rng(seed, 0x67726164ULL);

  for (const auto& name : m.params().names()) {
    Eigen::MatrixXd& p = m.params().at(name);
    const Eigen::MatrixXd& g = grads.at(name);
    std::vector<Eigen::Index> coords(std::size_t(p.size()));
    std::iota(coords.begin(), coords.end(), 0);
    if (max_coords_per_param > 0 && Eigen::Index(coords.size()) > max_coords_per_param) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(max_coords_per_param);
    }
    for (const Eigen::Index k : coords) {
      const double orig = p.data()[k];
      p.data()[k] = orig + step;
      const double lp = m.loss_only(inputs, probe);
      p.data()[k] = orig - step;
      const double lm = m.loss_only(inputs, probe);
      p.data()[k] = orig;
      const double fd = (lp - lm) / (2.0 * step);
      const double an = g.data()[k];
      ++result.coords_checked;
      if (std::max(std::abs(fd), std::abs(an)) < 1e-6) continue;
      const double rel = std::abs(fd - an) / std::max(std::abs(fd), std::abs(an));
      if (rel > result.max_rel_err) {
        result.max_rel_err = rel;
        result.worst_param = name;
      }
    }
  }
  result.pass = result.max_rel_err < tol;
  return result;
}

}  // namespace nmae
