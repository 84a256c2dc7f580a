#pragma once

// Reference implementations used only by tests. Each is written in the most
// direct way available and shares no code with the library.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

namespace oracle {

struct Marginals {
  Eigen::MatrixXd edge;  // edge(i, j): i parent of j
  Eigen::VectorXd root;
};

/// Enumerates every parent function recursively and keeps the ones where
/// following parents from each node reaches the root.
inline Marginals tree_marginals(const Eigen::MatrixXd& theta, const Eigen::VectorXd& theta_root) {
  const int n = static_cast<int>(theta_root.size());
  std::vector<int> par(static_cast<std::size_t>(n));
  Marginals m{Eigen::MatrixXd::Zero(n, n), Eigen::VectorXd::Zero(n)};
  double z = 0.0;
  std::function<void(int)> rec = [&](int j) {
    if (j == n) {
      for (int s = 0; s < n; ++s) {
        int cur = s, hops = 0;
        while (cur != -1 && hops <= n) {
          cur = par[static_cast<std::size_t>(cur)];
          ++hops;
        }
        if (cur != -1) return;
      }
      double w = 1.0;
      for (int k = 0; k < n; ++k) {
        const int p = par[static_cast<std::size_t>(k)];
        w *= std::exp(p == -1 ? theta_root(k) : theta(p, k));
      }
      z += w;
      for (int k = 0; k < n; ++k) {
        const int p = par[static_cast<std::size_t>(k)];
        if (p == -1) m.root(k) += w;
        else m.edge(p, k) += w;
      }
      return;
    }
    for (int p = -1; p < n; ++p) {
      if (p == j) continue;
      par[static_cast<std::size_t>(j)] = p;
      rec(j + 1);
    }
  };
  rec(0);
  m.edge /= z;
  m.root /= z;
  return m;
}

struct Counts {
  std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
};

/// Cell-by-cell recount over a steps x pitches pair of 0/1 grids.
inline Counts recount(const std::vector<std::vector<int>>& pred, const std::vector<std::vector<int>>& truth) {
  Counts c;
  for (std::size_t s = 0; s < pred.size(); ++s) {
    for (std::size_t p = 0; p < pred[s].size(); ++p) {
      const int a = pred[s][p], b = truth[s][p];
      if (a == 1 && b == 1) c.tp++;
      if (a == 1 && b == 0) c.fp++;
      if (a == 0 && b == 1) c.fn++;
      if (a == 0 && b == 0) c.tn++;
    }
  }
  return c;
}

/// Interval vector by listing every ordered pair of distinct members.
inline std::array<int, 6> interval_vector(const std::vector<int>& classes) {
  std::array<int, 6> v{};
  for (std::size_t a = 0; a < classes.size(); ++a) {
    for (std::size_t b = 0; b < classes.size(); ++b) {
      if (a >= b) continue;
      int d = std::abs(classes[a] - classes[b]) % 12;
      if (d > 6) d = 12 - d;
      if (d > 0) v[static_cast<std::size_t>(d - 1)]++;
    }
  }
  return v;
}

/// Multi-class focal loss written from its textbook form.
inline double focal(double p, double gamma, double alpha) { return -alpha * std::pow(1.0 - p, gamma) * std::log(p); }

struct EigenPairs {
  Eigen::VectorXd values;   // descending
  Eigen::MatrixXd vectors;  // columns match values
};

/// Cyclic Jacobi rotations on a symmetric matrix until the off-diagonal
/// mass vanishes.
inline EigenPairs jacobi_eigen(Eigen::MatrixXd a) {
  const int n = static_cast<int>(a.rows());
  Eigen::MatrixXd v = Eigen::MatrixXd::Identity(n, n);
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < n; ++p) {
      for (int q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    }
    if (off < 1e-30) break;
    for (int p = 0; p < n; ++p) {
      for (int q = p + 1; q < n; ++q) {
        if (a(p, q) == 0.0) continue;
        const double tau = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
        const double t = (tau >= 0 ? 1.0 : -1.0) / (std::abs(tau) + std::sqrt(1.0 + tau * tau));
        const double c = 1.0 / std::sqrt(1.0 + t * t), s = t * c;
        for (int k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (int k = 0; k < n; ++k) {
          const double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }
  std::vector<int> idx(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
  std::sort(idx.begin(), idx.end(), [&](int x, int y) { return a(x, x) > a(y, y); });
  EigenPairs out{Eigen::VectorXd(n), Eigen::MatrixXd(n, n)};
  for (int i = 0; i < n; ++i) {
    out.values(i) = a(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(i)]);
    out.vectors.col(i) = v.col(idx[static_cast<std::size_t>(i)]);
  }
  return out;
}

}  // namespace oracle
