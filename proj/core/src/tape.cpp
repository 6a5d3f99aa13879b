// SPDX-License-Identifier: Apache-2.0
#include "cogtipro/tape.hpp"

#include <cmath>
#include <numbers>

#include <fmt/format.h>

#include "cogtipro/error.hpp"

namespace cogtipro::ts {

double softplus(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Tape::Id Tape::push(Matrix value, bool needs_grad, std::function<void()> back) {
  if (!value.allFinite()) {
    throw NumericError(fmt::format("non-finite value in layer '{}'",
                                   scope_.empty() ? "input" : scope_));
  }
  nodes_.push_back(Node{std::move(value), Matrix(), needs_grad, std::move(back)});
  return static_cast<Id>(nodes_.size() - 1);
}

Matrix& Tape::accum(Id id) {
  auto& n = nodes_[id];
  if (n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

Tape::Id Tape::leaf(Matrix value, bool trainable) {
  return push(std::move(value), trainable, nullptr);
}

Tape::Id Tape::matmul(Id a, Id b) {
  if (value(a).cols() != value(b).rows()) {
    throw ContractError(fmt::format("matmul shape mismatch in '{}': {}x{} * {}x{}", scope_,
                                    value(a).rows(), value(a).cols(), value(b).rows(),
                                    value(b).cols()));
  }
  Matrix out = value(a) * value(b);
  const Id id = static_cast<Id>(nodes_.size());
  return push(std::move(out), needs(a) || needs(b), [this, a, b, id] {
    const Matrix& g = nodes_[id].grad;
    if (needs(a)) accum(a).noalias() += g * value(b).transpose();
    if (needs(b)) accum(b).noalias() += value(a).transpose() * g;
  });
}

Tape::Id Tape::add(Id a, Id b) {
  Matrix out = value(a) + value(b);
  const Id id = static_cast<Id>(nodes_.size());
  return push(std::move(out), needs(a) || needs(b), [this, a, b, id] {
    const Matrix& g = nodes_[id].grad;
    if (needs(a)) accum(a) += g;
    if (needs(b)) accum(b) += g;
  });
}

Tape::Id Tape::add_row(Id a, Id row) {
  Matrix out = value(a).rowwise() + value(row).row(0);
  const Id id = static_cast<Id>(nodes_.size());
  return push(std::move(out), needs(a) || needs(row), [this, a, row, id] {
    const Matrix& g = nodes_[id].grad;
    if (needs(a)) accum(a) += g;
    if (needs(row)) accum(row) += g.colwise().sum();
  });
}

Tape::Id Tape::add_tiled(Id a, Id pattern) {
  const Eigen::Index p = value(pattern).rows();
  if (p == 0 || value(a).rows() % p != 0) {
    throw ContractError(fmt::format("add_tiled rows {} not a multiple of {}",
                                    value(a).rows(), p));
  }
  Matrix out = value(a);
  const Eigen::Index groups = out.rows() / p;
  for (Eigen::Index g = 0; g < groups; ++g) out.middleRows(g * p, p) += value(pattern);
  const Id id = static_cast<Id>(nodes_.size());
  return push(std::move(out), needs(a) || needs(pattern), [this, a, pattern, p, groups, id] {
    const Matrix& g = nodes_[id].grad;
    if (needs(a)) accum(a) += g;
    if (needs(pattern)) {
      Matrix& gp = accum(pattern);
      for (Eigen::Index k = 0; k < groups; ++k) gp += g.middleRows(k * p, p);
    }
  });
}

Tape::Id Tape::layernorm(Id x, Id gain, Id bias, double eps) {
  const Matrix& xv = value(x);
  const Eigen::Index n = xv.rows(), m = xv.cols();
  Matrix xhat(n, m);
  Eigen::VectorXd inv_sigma(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const double mu = xv.row(r).mean();
    const double var = (xv.row(r).array() - mu).square().mean();
    inv_sigma(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (xv.row(r).array() - mu) * inv_sigma(r);
  }
  Matrix out = (xhat.array().rowwise() * value(gain).row(0).array()).matrix();
  out.rowwise() += value(bias).row(0);
  const Id id = static_cast<Id>(nodes_.size());
  return push(std::move(out), needs(x) || needs(gain) || needs(bias),
              [this, x, gain, bias, id, xhat = std::move(xhat),
               inv_sigma = std::move(inv_sigma)] {
                const Matrix& g = nodes_[id].grad;
                if (needs(gain)) accum(gain) += (g.array() * xhat.array()).colwise().sum().matrix();
                if (needs(bias)) accum(bias) += g.colwise().sum();
                if (needs(x)) {
                  Matrix dxhat = (g.array().rowwise() * value(gain).row(0).array()).matrix();
                  Matrix& gx = accum(x);
                  const double m = static_cast<double>(dxhat.cols());
                  for (Eigen::Index r = 0; r < dxhat.rows(); ++r) {
                    const double mean_d = dxhat.row(r).sum() / m;
                    const double mean_dx = dxhat.row(r).dot(xhat.row(r)) / m;
                    gx.row(r).array() += inv_sigma(r) * (dxhat.row(r).array() - mean_d -
                                                         xhat.row(r).array() * mean_dx);
                  }
                }
              });
}

Tape::Id Tape::gelu(Id x) {
  const Matrix& xv = value(x);
  Matrix out = xv.unaryExpr([](double t) {
    return 0.5 * t * (1.0 + std::erf(t / std::numbers::sqrt2));
  });
  const Id id = static_cast<Id>(nodes_.size());
  return push(std::move(out), needs(x), [this, x, id] {
    const Matrix& g = nodes_[id].grad;
    const double c = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    Matrix dt = value(x).unaryExpr([c](double t) {
      return 0.5 * (1.0 + std::erf(t / std::numbers::sqrt2)) + t * c * std::exp(-0.5 * t * t);
    });
    accum(x).array() += g.array() * dt.array();
  });
}

Tape::Id Tape::mul_const(Id x, const Matrix& c) {
  Matrix out = value(x).cwiseProduct(c);
  const Id id = static_cast<Id>(nodes_.size());
  return push(std::move(out), needs(x), [this, x, id, c] {
    accum(x).array() += nodes_[id].grad.array() * c.array();
  });
}

Tape::Id Tape::attention(Id q, Id k, Id v, int group_size, int n_heads) {
  const Matrix& Q = value(q);
  const Matrix& K = value(k);
  const Matrix& V = value(v);
  const Eigen::Index n = Q.rows(), dm = Q.cols();
  if (group_size < 1 || n % group_size != 0 || dm % n_heads != 0 ||
      K.rows() != n || V.rows() != n || K.cols() != dm || V.cols() != dm) {
    throw ContractError(fmt::format("attention shape mismatch in '{}'", scope_));
  }
  const Eigen::Index dh = dm / n_heads;
  const Eigen::Index groups = n / group_size;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Matrix> probs(static_cast<std::size_t>(groups * n_heads));
  Matrix out(n, dm);
  for (Eigen::Index g = 0; g < groups; ++g) {
    for (Eigen::Index h = 0; h < n_heads; ++h) {
      auto qg = Q.block(g * group_size, h * dh, group_size, dh);
      auto kg = K.block(g * group_size, h * dh, group_size, dh);
      auto vg = V.block(g * group_size, h * dh, group_size, dh);
      Matrix s = (qg * kg.transpose()) * scale;
      for (Eigen::Index r = 0; r < s.rows(); ++r) {
        const double mx = s.row(r).maxCoeff();
        s.row(r) = (s.row(r).array() - mx).exp();
        s.row(r) /= s.row(r).sum();
      }
      out.block(g * group_size, h * dh, group_size, dh).noalias() = s * vg;
      probs[static_cast<std::size_t>(g * n_heads + h)] = std::move(s);
    }
  }
  const Id id = static_cast<Id>(nodes_.size());
  return push(std::move(out), needs(q) || needs(k) || needs(v),
              [this, q, k, v, id, group_size, n_heads, dh, groups, scale,
               probs = std::move(probs)] {
                const Matrix& G = nodes_[id].grad;
                Matrix* gq = needs(q) ? &accum(q) : nullptr;
                Matrix* gk = needs(k) ? &accum(k) : nullptr;
                Matrix* gv = needs(v) ? &accum(v) : nullptr;
                const Matrix& Q = value(q);
                const Matrix& K = value(k);
                const Matrix& V = value(v);
                for (Eigen::Index g = 0; g < groups; ++g) {
                  for (Eigen::Index h = 0; h < n_heads; ++h) {
                    const Matrix& a = probs[static_cast<std::size_t>(g * n_heads + h)];
                    const Eigen::Index r0 = g * group_size, c0 = h * dh;
                    auto go = G.block(r0, c0, group_size, dh);
                    if (gv) gv->block(r0, c0, group_size, dh).noalias() += a.transpose() * go;
                    Matrix da = go * V.block(r0, c0, group_size, dh).transpose();
                    Matrix ds = a.cwiseProduct(da);
                    Eigen::VectorXd rows = ds.rowwise().sum();
                    ds -= a.cwiseProduct(rows.replicate(1, a.cols()));
                    ds *= scale;
                    if (gq) gq->block(r0, c0, group_size, dh).noalias() +=
                        ds * K.block(r0, c0, group_size, dh);
                    if (gk) gk->block(r0, c0, group_size, dh).noalias() +=
                        ds.transpose() * Q.block(r0, c0, group_size, dh);
                  }
                }
              });
}

Tape::Id Tape::segment_mean(Id x, int group_size) {
  const Matrix& xv = value(x);
  if (group_size < 1 || xv.rows() % group_size != 0) {
    throw ContractError(fmt::format("segment_mean rows {} not a multiple of {}", xv.rows(),
                                    group_size));
  }
  const Eigen::Index groups = xv.rows() / group_size;
  Matrix out(groups, xv.cols());
  for (Eigen::Index g = 0; g < groups; ++g) {
    out.row(g) = xv.middleRows(g * group_size, group_size).colwise().mean();
  }
  const Id id = static_cast<Id>(nodes_.size());
  return push(std::move(out), needs(x), [this, x, id, group_size, groups] {
    const Matrix& g = nodes_[id].grad;
    Matrix& gx = accum(x);
    const double inv = 1.0 / group_size;
    for (Eigen::Index r = 0; r < groups; ++r) {
      gx.middleRows(r * group_size, group_size).rowwise() += g.row(r) * inv;
    }
  });
}

Tape::Id Tape::bce_mean(Id logits, const Eigen::VectorXd& targets) {
  const Matrix& z = value(logits);
  if (z.cols() != 1 || z.rows() != targets.size() || z.rows() == 0) {
    throw ContractError("bce_mean expects an n x 1 logit column matching the targets");
  }
  const double n = static_cast<double>(z.rows());
  double total = 0.0;
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    total += softplus(z(i, 0)) - targets(i) * z(i, 0);
  }
  Matrix out(1, 1);
  out(0, 0) = total / n;
  const Id id = static_cast<Id>(nodes_.size());
  return push(std::move(out), needs(logits), [this, logits, id, targets, n] {
    const double g = nodes_[id].grad(0, 0);
    Matrix& gz = accum(logits);
    const Matrix& z = value(logits);
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
      gz(i, 0) += g * (sigmoid(z(i, 0)) - targets(i)) / n;
    }
  });
}

void Tape::backward(Id root) {
  if (value(root).size() != 1) throw ContractError("backward root must be a scalar");
  for (auto& n : nodes_) n.grad.resize(0, 0);
  accum(root)(0, 0) = 1.0;
  for (Id i = root; i >= 0; --i) {
    auto& n = nodes_[i];
    if (n.back && n.needs_grad && n.grad.size() != 0) n.back();
  }
}

}  // namespace cogtipro::ts
