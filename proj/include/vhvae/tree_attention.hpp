#pragma once

// Structured attention over non-projective dependency trees.
//
// Nodes y_1..y_n choose a parent among the other nodes or a virtual root.
// Edge marginals of the tree distribution p(r | y) ∝ exp(Σ θ over chosen
// edges) are computed exactly with the matrix-tree theorem: for the
// Laplacian L (L_jj = ρ_j + Σ_i A_ij, L_ij = -A_ij) with A = exp(θ) and
// root weights ρ = exp(θ_root),
//
//   p(i -> j)    = A_ij ((L^-1)_jj - (L^-1)_ji)
//   p(root -> j) = ρ_j (L^-1)_jj
//
// Multiple root children are allowed.

#include "vhvae/autodiff.hpp"
#include "vhvae/matrix.hpp"

#include <cmath>
#include <algorithm>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

namespace vhvae::tree {

inline constexpr int kRoot = -1;
inline constexpr double kMasked = -std::numeric_limits<double>::infinity();

struct TreeAttentionParams {
  Matrix w1;  // attn_hidden x embed
  Matrix w2;  // attn_hidden x embed
  Vector s;
  Vector b;
  Vector s_root;
  Vector b_root;
};

struct TreePotentials {
  Matrix theta;       // theta(i, j): score of i being the parent of j; diagonal unused
  Vector theta_root;  // score of the virtual root being the parent of j

  Eigen::Index n() const { return theta_root.size(); }
};

struct TreeMarginals {
  Matrix marg;       // marg(i, j) = p(i is the parent of j)
  Vector marg_root;  // p(root is the parent of j)

  Eigen::Index n() const { return marg_root.size(); }

  /// (n+1) x n layout: row 0 is the root, row i+1 is parent i.
  Matrix stacked() const {
    Matrix m(n() + 1, n());
    m.row(0) = marg_root.transpose();
    m.bottomRows(n()) = marg;
    return m;
  }

  static TreeMarginals from_stacked(const Matrix& m) {
    TreeMarginals t;
    t.marg_root = m.row(0).transpose();
    t.marg = m.bottomRows(m.rows() - 1);
    return t;
  }
};

/// Intermediate quantities kept for the backward pass.
struct MarginalsWork {
  Matrix a;    // stabilized edge weights, zero diagonal
  Vector rho;  // stabilized root weights
  Matrix inv;  // Laplacian inverse
  Matrix stacked;
};

inline MarginalsWork marginals_forward(const Matrix& theta, const Vector& theta_root) {
  const Eigen::Index n = theta_root.size();
  if (theta.rows() != n || theta.cols() != n) throw std::invalid_argument("marginals: shape mismatch");

  double shift = -std::numeric_limits<double>::infinity();
  for (Eigen::Index j = 0; j < n; ++j) {
    if (std::isfinite(theta_root(j))) shift = std::max(shift, theta_root(j));
    for (Eigen::Index i = 0; i < n; ++i) {
      if (i != j && std::isfinite(theta(i, j))) shift = std::max(shift, theta(i, j));
    }
  }
  if (!std::isfinite(shift)) shift = 0.0;

  MarginalsWork w;
  w.a = Matrix::Zero(n, n);
  w.rho = Vector::Zero(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    w.rho(j) = std::exp(theta_root(j) - shift);
    for (Eigen::Index i = 0; i < n; ++i) {
      if (i != j) w.a(i, j) = std::exp(theta(i, j) - shift);
    }
  }

  Matrix lap = -w.a;
  for (Eigen::Index j = 0; j < n; ++j) lap(j, j) = w.rho(j) + w.a.col(j).sum();
  w.inv = lu_logdet_inverse(lap).inverse;

  w.stacked = Matrix::Zero(n + 1, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    w.stacked(0, j) = w.rho(j) * w.inv(j, j);
    for (Eigen::Index i = 0; i < n; ++i) {
      if (i != j) w.stacked(i + 1, j) = w.a(i, j) * (w.inv(j, j) - w.inv(j, i));
    }
  }
  return w;
}

/// Vector-Jacobian product of the stacked marginals with respect to
/// (theta, theta_root), given upstream gradient `g` in the stacked layout.
inline void marginals_backward(const MarginalsWork& w, const Matrix& g, Matrix& d_theta, Vector& d_root) {
  const Eigen::Index n = w.rho.size();
  Matrix d_a = Matrix::Zero(n, n);
  Vector d_rho = Vector::Zero(n);
  Matrix d_inv = Matrix::Zero(n, n);

  for (Eigen::Index j = 0; j < n; ++j) {
    d_rho(j) += g(0, j) * w.inv(j, j);
    d_inv(j, j) += g(0, j) * w.rho(j);
    for (Eigen::Index i = 0; i < n; ++i) {
      if (i == j) continue;
      const double gij = g(i + 1, j);
      d_a(i, j) += gij * (w.inv(j, j) - w.inv(j, i));
      d_inv(j, j) += gij * w.a(i, j);
      d_inv(j, i) -= gij * w.a(i, j);
    }
  }

  // d(L^-1) = -L^-1 dL L^-1  =>  dLoss/dL = -(L^-T) dLoss/d(L^-1) (L^-T)
  const Matrix d_lap = -w.inv.transpose() * d_inv * w.inv.transpose();
  for (Eigen::Index j = 0; j < n; ++j) {
    d_rho(j) += d_lap(j, j);
    for (Eigen::Index i = 0; i < n; ++i) {
      if (i != j) d_a(i, j) += d_lap(j, j) - d_lap(i, j);
    }
  }

  d_theta = d_a.cwiseProduct(w.a);
  d_root = d_rho.cwiseProduct(w.rho);
}

/// Exact edge marginals via the matrix-tree theorem.
inline TreeMarginals marginals(const TreePotentials& pot) {
  if (pot.n() < 1) throw std::invalid_argument("marginals: empty node set");
  return TreeMarginals::from_stacked(marginals_forward(pot.theta, pot.theta_root).stacked);
}

/// Differentiable marginals: theta (n x n), theta_root (n x 1) -> stacked (n+1) x n.
inline Var marginals(Var theta, Var theta_root) {
  Tape& t = *theta.tape();
  auto work = std::make_shared<MarginalsWork>(marginals_forward(theta.value(), theta_root.value().col(0)));
  Matrix out = work->stacked;
  return t.record(std::move(out), {theta, theta_root}, [theta, theta_root, work](Tape& tp, int self) {
    Matrix d_theta;
    Vector d_root;
    marginals_backward(*work, tp.grad(self), d_theta, d_root);
    ops::accumulate(tp, theta, d_theta);
    ops::accumulate(tp, theta_root, Matrix(d_root));
  });
}

/// Exhaustive enumeration over parent assignments (oracle, n <= 7).
inline TreeMarginals brute_force_marginals(const TreePotentials& pot) {
  const Eigen::Index n = pot.n();
  if (n < 1) throw std::invalid_argument("brute_force_marginals: empty node set");
  if (n > 7) throw std::length_error("brute_force_marginals: n > 7");

  std::vector<int> parent(static_cast<std::size_t>(n), kRoot);  // kRoot or node index
  std::vector<double> log_w;
  std::vector<std::vector<int>> trees;

  // Odometer over (n)^n choices: digit value 0 means root, v > 0 means node v-1.
  std::vector<int> digit(static_cast<std::size_t>(n), 0);
  for (;;) {
    bool self_loop = false;
    for (Eigen::Index j = 0; j < n; ++j) {
      const int d = digit[static_cast<std::size_t>(j)];
      // Skip the self-parent value by remapping: values 1..n-1 index the other nodes.
      int p = kRoot;
      if (d > 0) p = (d - 1 < j) ? d - 1 : d;
      if (p == j) self_loop = true;
      parent[static_cast<std::size_t>(j)] = p;
    }
    if (!self_loop) {
      bool acyclic = true;
      for (Eigen::Index j = 0; j < n && acyclic; ++j) {
        int cur = static_cast<int>(j);
        for (Eigen::Index steps = 0; steps <= n; ++steps) {
          cur = parent[static_cast<std::size_t>(cur)];
          if (cur == kRoot) break;
          if (steps == n) acyclic = false;
        }
        if (cur != kRoot) acyclic = false;
      }
      if (acyclic) {
        double s = 0.0;
        for (Eigen::Index j = 0; j < n; ++j) {
          const int p = parent[static_cast<std::size_t>(j)];
          s += p == kRoot ? pot.theta_root(j) : pot.theta(p, j);
        }
        log_w.push_back(s);
        trees.push_back(parent);
      }
    }
    Eigen::Index k = 0;
    while (k < n) {
      if (++digit[static_cast<std::size_t>(k)] < n) break;
      digit[static_cast<std::size_t>(k)] = 0;
      ++k;
    }
    if (k == n) break;
  }

  double m = -std::numeric_limits<double>::infinity();
  for (double v : log_w) m = std::max(m, v);
  double z = 0.0;
  for (double v : log_w) z += std::exp(v - m);

  TreeMarginals out;
  out.marg = Matrix::Zero(n, n);
  out.marg_root = Vector::Zero(n);
  for (std::size_t t = 0; t < trees.size(); ++t) {
    const double p = std::exp(log_w[t] - m) / z;
    for (Eigen::Index j = 0; j < n; ++j) {
      const int par = trees[t][static_cast<std::size_t>(j)];
      if (par == kRoot) {
        out.marg_root(j) += p;
      } else {
        out.marg(par, j) += p;
      }
    }
  }
  return out;
}

/// Bound tree-attention parameters on a tape.
struct TreeAttentionVars {
  Var w1, w2, s, b, s_root, b_root;
};

/// theta(i, j) = tanh(s' tanh(W1 h_i + W2 h_j + b)) for i != j and
/// theta_root(j) = tanh(s_root' tanh(W2 h_j + b_root)). With `causal`,
/// parents later than the child are masked with -inf.
inline std::pair<Var, Var> potentials(std::span<const Var> nodes, const TreeAttentionVars& p, bool causal = false) {
  const auto n = static_cast<Eigen::Index>(nodes.size());
  Tape& t = *p.w1.tape();
  std::vector<Var> parent_proj, child_proj, root_scores, pair_scores;
  for (const Var& h : nodes) {
    parent_proj.push_back(ops::matmul(p.w1, h));
    child_proj.push_back(ops::matmul(p.w2, h));
  }
  for (Eigen::Index j = 0; j < n; ++j) {
    root_scores.push_back(ops::tanh(ops::dot(p.s_root, ops::tanh(ops::add(child_proj[static_cast<std::size_t>(j)], p.b_root)))));
  }

  struct Slot {
    Eigen::Index i, j;
  };
  std::vector<Slot> slots;
  Matrix theta = Matrix::Zero(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    Var cj = ops::add(child_proj[static_cast<std::size_t>(j)], p.b);
    for (Eigen::Index i = 0; i < n; ++i) {
      if (i == j) continue;
      if (causal && i > j) {
        theta(i, j) = kMasked;
        continue;
      }
      Var score = ops::tanh(ops::dot(p.s, ops::tanh(ops::add(parent_proj[static_cast<std::size_t>(i)], cj))));
      theta(i, j) = score.scalar();
      pair_scores.push_back(score);
      slots.push_back({i, j});
    }
  }

  Matrix root(n, 1);
  for (Eigen::Index j = 0; j < n; ++j) root(j, 0) = root_scores[static_cast<std::size_t>(j)].scalar();

  Var theta_var = t.record(std::move(theta), std::span<const Var>(pair_scores), [pair_scores, slots](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    for (std::size_t k = 0; k < slots.size(); ++k) {
      if (tp.requires_grad(pair_scores[k])) tp.grad(pair_scores[k])(0, 0) += g(slots[k].i, slots[k].j);
    }
  });
  Var root_var = t.record(std::move(root), std::span<const Var>(root_scores), [root_scores](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    for (std::size_t k = 0; k < root_scores.size(); ++k) {
      if (tp.requires_grad(root_scores[k])) tp.grad(root_scores[k])(0, 0) += g(static_cast<Eigen::Index>(k), 0);
    }
  });
  return {theta_var, root_var};
}

inline TreePotentials potentials(std::span<const Vector> embeddings, const TreeAttentionParams& params,
                                 bool causal = false) {
  Tape t(false);
  TreeAttentionVars v{t.constant(params.w1), t.constant(params.w2), t.constant(params.s),
                      t.constant(params.b),  t.constant(params.s_root), t.constant(params.b_root)};
  std::vector<Var> nodes;
  for (const Vector& e : embeddings) nodes.push_back(t.constant(e));
  auto [theta, root] = potentials(nodes, v, causal);
  return {theta.value(), root.value().col(0)};
}

/// Soft parents: column j of the result is Σ_{i != j} marg(i, j) y_i; the root contributes zero.
/// `nodes` is the d x n matrix of node embeddings and `stacked` the (n+1) x n marginals.
inline Var context_vectors(Var nodes, Var stacked) {
  const Eigen::Index n = stacked.cols();
  return ops::matmul(nodes, ops::slice_rows(stacked, 1, n));
}

inline std::vector<Vector> context_vectors(std::span<const Vector> embeddings, const TreeMarginals& marg) {
  const auto n = static_cast<Eigen::Index>(embeddings.size());
  if (marg.n() != n) throw std::invalid_argument("context_vectors: shape mismatch");
  std::vector<Vector> out;
  for (Eigen::Index j = 0; j < n; ++j) {
    Vector c = Vector::Zero(n == 0 ? 0 : embeddings.front().size());
    for (Eigen::Index i = 0; i < n; ++i) {
      if (i != j) c += marg.marg(i, j) * embeddings[static_cast<std::size_t>(i)];
    }
    out.push_back(std::move(c));
  }
  return out;
}

/// Highest-marginal parent per node; ties go to the root, then the lowest index.
/// The result is not guaranteed to be a tree.
inline std::vector<int> argmax_parent_tree(const TreeMarginals& marg) {
  std::vector<int> parent;
  for (Eigen::Index j = 0; j < marg.n(); ++j) {
    int best = kRoot;
    double best_p = marg.marg_root(j);
    for (Eigen::Index i = 0; i < marg.n(); ++i) {
      if (i != j && marg.marg(i, j) > best_p) {
        best_p = marg.marg(i, j);
        best = static_cast<int>(i);
      }
    }
    parent.push_back(best);
  }
  return parent;
}

}  // namespace vhvae::tree
