#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace vhvae {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

class SingularMatrixError : public std::runtime_error {
 public:
  explicit SingularMatrixError(int pivot_index)
      : std::runtime_error("singular matrix: pivot " + std::to_string(pivot_index) +
                           " below 1e-12"),
        pivot_index_(pivot_index) {}

  int pivot_index() const noexcept { return pivot_index_; }

 private:
  int pivot_index_;
};

struct LuResult {
  double log_abs_det = 0.0;
  int sign = 1;
  Matrix inverse;
};

/// Partial-pivoting LU factorization of a square matrix, returning
/// log|det A|, the determinant sign and the explicit inverse.
inline LuResult lu_logdet_inverse(const Matrix& a) {
  if (a.rows() != a.cols()) throw std::invalid_argument("lu_logdet_inverse: matrix not square");
  const Eigen::Index n = a.rows();
  Matrix lu = a;
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = i;

  LuResult out;
  for (Eigen::Index k = 0; k < n; ++k) {
    Eigen::Index pivot = k;
    double best = std::abs(lu(k, k));
    for (Eigen::Index i = k + 1; i < n; ++i) {
      if (std::abs(lu(i, k)) > best) {
        best = std::abs(lu(i, k));
        pivot = i;
      }
    }
    if (!(best >= 1e-12)) throw SingularMatrixError(static_cast<int>(k));
    if (pivot != k) {
      lu.row(k).swap(lu.row(pivot));
      std::swap(perm[static_cast<std::size_t>(k)], perm[static_cast<std::size_t>(pivot)]);
      out.sign = -out.sign;
    }
    const double d = lu(k, k);
    if (d < 0) out.sign = -out.sign;
    out.log_abs_det += std::log(std::abs(d));
    for (Eigen::Index i = k + 1; i < n; ++i) {
      const double f = lu(i, k) / d;
      lu(i, k) = f;
      if (f != 0.0) {
        for (Eigen::Index j = k + 1; j < n; ++j) lu(i, j) -= f * lu(k, j);
      }
    }
  }

  // Solve L U x = P e_c for every column c.
  out.inverse = Matrix::Zero(n, n);
  Vector y(n);
  for (Eigen::Index c = 0; c < n; ++c) {
    for (Eigen::Index i = 0; i < n; ++i) {
      double v = perm[static_cast<std::size_t>(i)] == c ? 1.0 : 0.0;
      for (Eigen::Index j = 0; j < i; ++j) v -= lu(i, j) * y(j);
      y(i) = v;
    }
    for (Eigen::Index i = n - 1; i >= 0; --i) {
      double v = y(i);
      for (Eigen::Index j = i + 1; j < n; ++j) v -= lu(i, j) * out.inverse(j, c);
      out.inverse(i, c) = v / lu(i, i);
    }
  }
  return out;
}

/// Seedable random source shared by initialization, sampling and shuffling.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  double normal() { return normal_(engine_); }
  double uniform(double lo, double hi) {
    return lo + (hi - lo) * std::generate_canonical<double, 53>(engine_);
  }
  double uniform01() { return std::generate_canonical<double, 53>(engine_); }
  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n) {
    return static_cast<std::size_t>(std::uniform_int_distribution<std::uint64_t>(0, n - 1)(engine_));
  }
  std::uint64_t next() { return engine_(); }

  template <class It>
  void shuffle(It first, It last) {
    const auto n = static_cast<std::size_t>(last - first);
    for (std::size_t i = n; i > 1; --i) std::swap(first[i - 1], first[index(i)]);
  }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

}  // namespace vhvae
