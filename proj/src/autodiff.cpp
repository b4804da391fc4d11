#include "nmae/autodiff.hpp"

#include <cmath>
#include <stdexcept>

namespace nmae::ad {

namespace {
constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;
}  // namespace

Graph::~Graph() {
  for (auto& n : tape_) n->backward = nullptr;
}

Var Graph::make(Eigen::MatrixXd v, bool req) {
  auto n = std::make_shared<Node>();
  n->val = std::move(v);
  n->requires_grad = req;
  tape_.push_back(n);
  return n;
}

Var Graph::constant(Eigen::MatrixXd v) { return make(std::move(v), false); }
Var Graph::param(Eigen::MatrixXd v) { return make(std::move(v), true); }

Var Graph::matmul(const Var& a, const Var& b) {
  Var out = make(a->val * b->val, a->requires_grad || b->requires_grad);
  if (out->requires_grad)
    out->backward = [a, b, out] {
      if (a->requires_grad) {
        a->ensure_grad();
        a->grad.noalias() += out->grad * b->val.transpose();
      }
      if (b->requires_grad) {
        b->ensure_grad();
        b->grad.noalias() += a->val.transpose() * out->grad;
      }
    };
  return out;
}

Var Graph::matmul_bt(const Var& a, const Var& b) {
  Var out = make(a->val * b->val.transpose(), a->requires_grad || b->requires_grad);
  if (out->requires_grad)
    out->backward = [a, b, out] {
      if (a->requires_grad) {
        a->ensure_grad();
        a->grad.noalias() += out->grad * b->val;
      }
      if (b->requires_grad) {
        b->ensure_grad();
        b->grad.noalias() += out->grad.transpose() * a->val;
      }
    };
  return out;
}

Var Graph::add(const Var& a, const Var& b) {
  Var out = make(a->val + b->val, a->requires_grad || b->requires_grad);
  if (out->requires_grad)
    out->backward = [a, b, out] {
      if (a->requires_grad) {
        a->ensure_grad();
        a->grad += out->grad;
      }
      if (b->requires_grad) {
        b->ensure_grad();
        b->grad += out->grad;
      }
    };
  return out;
}

Var Graph::sub(const Var& a, const Var& b) {
  Var out = make(a->val - b->val, a->requires_grad || b->requires_grad);
  if (out->requires_grad)
    out->backward = [a, b, out] {
      if (a->requires_grad) {
        a->ensure_grad();
        a->grad += out->grad;
      }
      if (b->requires_grad) {
        b->ensure_grad();
        b->grad -= out->grad;
      }
    };
  return out;
}

Var Graph::add_rowvec(const Var& a, const Var& row) {
  if (row->val.rows() != 1 || row->val.cols() != a->val.cols())
    throw std::invalid_argument("add_rowvec: shape mismatch");
  Var out = make(a->val.rowwise() + row->val.row(0), a->requires_grad || row->requires_grad);
  if (out->requires_grad)
    out->backward = [a, row, out] {
      if (a->requires_grad) {
        a->ensure_grad();
        a->grad += out->grad;
      }
      if (row->requires_grad) {
        row->ensure_grad();
        row->grad.row(0) += out->grad.colwise().sum();
      }
    };
  return out;
}

Var Graph::scale(const Var& a, double s) {
  Var out = make(a->val * s, a->requires_grad);
  if (out->requires_grad)
    out->backward = [a, out, s] {
      a->ensure_grad();
      a->grad += out->grad * s;
    };
  return out;
}

Var Graph::gelu(const Var& a) {
  // Exact GELU: x * Phi(x).
  Eigen::MatrixXd v = a->val.unaryExpr(
      [](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); });
  Var out = make(std::move(v), a->requires_grad);
  if (out->requires_grad)
    out->backward = [a, out] {
      a->ensure_grad();
      a->grad += out->grad.cwiseProduct(a->val.unaryExpr([](double x) {
        const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
        return cdf + x * pdf;
      }));
    };
  return out;
}

Var Graph::softmax_rows(const Var& a) {
  Eigen::MatrixXd v = a->val;
  for (Eigen::Index r = 0; r < v.rows(); ++r) {
    const double m = v.row(r).maxCoeff();
    v.row(r) = (v.row(r).array() - m).exp();
    v.row(r) /= v.row(r).sum();
  }
  Var out = make(std::move(v), a->requires_grad);
  if (out->requires_grad)
    out->backward = [a, out] {
      a->ensure_grad();
      for (Eigen::Index r = 0; r < out->val.rows(); ++r) {
        const double dot = out->grad.row(r).dot(out->val.row(r));
        a->grad.row(r) +=
            (out->grad.row(r).array() - dot).matrix().cwiseProduct(out->val.row(r));
      }
    };
  return out;
}

Var Graph::layernorm_rows(const Var& a, const Var& gamma, const Var& beta, double eps) {
  const Eigen::Index n = a->val.rows(), d = a->val.cols();
  Eigen::VectorXd mean(n), inv_std(n);
  Eigen::MatrixXd xhat(n, d);
  for (Eigen::Index r = 0; r < n; ++r) {
    mean[r] = a->val.row(r).mean();
    const double var = (a->val.row(r).array() - mean[r]).square().mean();
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (a->val.row(r).array() - mean[r]) * inv_std[r];
  }
  Eigen::MatrixXd v =
      (xhat.array().rowwise() * gamma->val.row(0).array()).rowwise() + beta->val.row(0).array();
  Var out = make(std::move(v),
                 a->requires_grad || gamma->requires_grad || beta->requires_grad);
  if (out->requires_grad)
    out->backward = [a, gamma, beta, out, xhat, inv_std] {
      const Eigen::Index n = a->val.rows(), d = a->val.cols();
      if (gamma->requires_grad) {
        gamma->ensure_grad();
        gamma->grad.row(0) += out->grad.cwiseProduct(xhat).colwise().sum();
      }
      if (beta->requires_grad) {
        beta->ensure_grad();
        beta->grad.row(0) += out->grad.colwise().sum();
      }
      if (a->requires_grad) {
        a->ensure_grad();
        for (Eigen::Index r = 0; r < n; ++r) {
          const Eigen::RowVectorXd gy =
              out->grad.row(r).cwiseProduct(gamma->val.row(0));
          const double s1 = gy.sum();
          const double s2 = gy.dot(xhat.row(r));
          a->grad.row(r) +=
              inv_std[r] *
              (gy.array() - s1 / d - xhat.row(r).array() * (s2 / d)).matrix();
        }
      }
    };
  return out;
}

Var Graph::gather_rows(const Var& a, std::vector<int> idx) {
  Eigen::MatrixXd v(Eigen::Index(idx.size()), a->val.cols());
  for (std::size_t k = 0; k < idx.size(); ++k) v.row(Eigen::Index(k)) = a->val.row(idx[k]);
  Var out = make(std::move(v), a->requires_grad);
  if (out->requires_grad)
    out->backward = [a, out, idx = std::move(idx)] {
      a->ensure_grad();
      for (std::size_t k = 0; k < idx.size(); ++k)
        a->grad.row(idx[k]) += out->grad.row(Eigen::Index(k));
    };
  return out;
}

Var Graph::slice_cols(const Var& a, int start, int len) {
  Var out = make(a->val.middleCols(start, len), a->requires_grad);
  if (out->requires_grad)
    out->backward = [a, out, start, len] {
      a->ensure_grad();
      a->grad.middleCols(start, len) += out->grad;
    };
  return out;
}

Var Graph::concat_rows(const std::vector<Var>& parts) {
  Eigen::Index rows = 0;
  bool req = false;
  for (const auto& p : parts) {
    rows += p->val.rows();
    req = req || p->requires_grad;
  }
  Eigen::MatrixXd v(rows, parts.front()->val.cols());
  Eigen::Index off = 0;
  for (const auto& p : parts) {
    v.middleRows(off, p->val.rows()) = p->val;
    off += p->val.rows();
  }
  Var out = make(std::move(v), req);
  if (out->requires_grad)
    out->backward = [parts, out] {
      Eigen::Index off = 0;
      for (const auto& p : parts) {
        if (p->requires_grad) {
          p->ensure_grad();
          p->grad += out->grad.middleRows(off, p->val.rows());
        }
        off += p->val.rows();
      }
    };
  return out;
}

Var Graph::concat_cols(const std::vector<Var>& parts) {
  Eigen::Index cols = 0;
  bool req = false;
  for (const auto& p : parts) {
    cols += p->val.cols();
    req = req || p->requires_grad;
  }
  Eigen::MatrixXd v(parts.front()->val.rows(), cols);
  Eigen::Index off = 0;
  for (const auto& p : parts) {
    v.middleCols(off, p->val.cols()) = p->val;
    off += p->val.cols();
  }
  Var out = make(std::move(v), req);
  if (out->requires_grad)
    out->backward = [parts, out] {
      Eigen::Index off = 0;
      for (const auto& p : parts) {
        if (p->requires_grad) {
          p->ensure_grad();
          p->grad += out->grad.middleCols(off, p->val.cols());
        }
        off += p->val.cols();
      }
    };
  return out;
}

Var Graph::compose_rows(const Var& src, const Var& fill_row, const std::vector<int>& pos) {
  Eigen::MatrixXd v(Eigen::Index(pos.size()), src->val.cols());
  for (std::size_t r = 0; r < pos.size(); ++r)
    v.row(Eigen::Index(r)) = pos[r] >= 0 ? src->val.row(pos[r]) : fill_row->val.row(0);
  Var out = make(std::move(v), src->requires_grad || fill_row->requires_grad);
  if (out->requires_grad)
    out->backward = [src, fill_row, out, pos] {
      for (std::size_t r = 0; r < pos.size(); ++r) {
        if (pos[r] >= 0) {
          if (src->requires_grad) {
            src->ensure_grad();
            src->grad.row(pos[r]) += out->grad.row(Eigen::Index(r));
          }
        } else if (fill_row->requires_grad) {
          fill_row->ensure_grad();
          fill_row->grad.row(0) += out->grad.row(Eigen::Index(r));
        }
      }
    };
  return out;
}

Var Graph::weighted_sqerr_sum(const Var& a, const Eigen::MatrixXd& target,
                              const Eigen::MatrixXd& w) {
  if (a->val.rows() != target.rows() || a->val.cols() != target.cols() ||
      w.rows() != a->val.rows() || w.cols() != a->val.cols())
    throw std::invalid_argument("weighted_sqerr_sum: shape mismatch");
  const Eigen::MatrixXd diff = a->val - target;
  const double s = w.cwiseProduct(diff.cwiseProduct(diff)).sum();
  Var out = make(Eigen::MatrixXd::Constant(1, 1, s), a->requires_grad);
  if (out->requires_grad)
    out->backward = [a, out, diff, w] {
      a->ensure_grad();
      a->grad += (2.0 * out->grad(0, 0)) * w.cwiseProduct(diff);
    };
  return out;
}

void Graph::backward(const Var& root) {
  root->ensure_grad();
  root->grad.setConstant(1.0);
  for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) {
    auto& n = *it;
    if (n->requires_grad && n->backward && n->grad.size() != 0) n->backward();
  }
}

}  // namespace nmae::ad
