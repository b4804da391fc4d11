#pragma once

#include <functional>
#include <memory>
#include <vector>

#include <Eigen/Core>

namespace nmae::ad {

// Minimal reverse-mode autodiff over dense double matrices. Every operation
// appends a node to the owning Graph's tape; backward() walks the tape in
// reverse creation order. Scalars are 1×1 matrices.
struct Node {
  Eigen::MatrixXd val;
  Eigen::MatrixXd grad;
  std::function<void()> backward;  // pushes this->grad into parents
  bool requires_grad = false;

  void ensure_grad() {
    if (grad.size() == 0) grad = Eigen::MatrixXd::Zero(val.rows(), val.cols());
  }
};

using Var = std::shared_ptr<Node>;

class Graph {
 public:
  // Backward closures capture their own node, so the tape is cyclic; the
  // destructor drops the closures to break ownership.
  ~Graph();

  Var constant(Eigen::MatrixXd v);
  Var param(Eigen::MatrixXd v);  // leaf with gradient

  Var matmul(const Var& a, const Var& b);
  Var matmul_bt(const Var& a, const Var& b);  // a * b^T
  Var add(const Var& a, const Var& b);
  Var sub(const Var& a, const Var& b);
  Var add_rowvec(const Var& a, const Var& row);  // row is 1×d, broadcast over rows
  Var scale(const Var& a, double s);
  Var gelu(const Var& a);
  Var softmax_rows(const Var& a);
  Var layernorm_rows(const Var& a, const Var& gamma, const Var& beta, double eps = 1e-6);
  Var gather_rows(const Var& a, std::vector<int> idx);
  Var slice_cols(const Var& a, int start, int len);
  Var concat_rows(const std::vector<Var>& parts);
  Var concat_cols(const std::vector<Var>& parts);
  // Row r of the result is src.row(pos[r]) where pos[r] >= 0, else the
  // (broadcast) fill row. Used to interleave encoder tokens and mask tokens.
  Var compose_rows(const Var& src, const Var& fill_row, const std::vector<int>& pos);
  // sum over elements of w .* (a - target)^2; w and target are constants.
  Var weighted_sqerr_sum(const Var& a, const Eigen::MatrixXd& target, const Eigen::MatrixXd& w);

  void backward(const Var& root);

  std::size_t size() const { return tape_.size(); }

 private:
  Var make(Eigen::MatrixXd v, bool req);
  std::vector<Var> tape_;
};

}  // namespace nmae::ad
