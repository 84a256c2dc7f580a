#pragma once

#include "vhvae/matrix.hpp"

#include <array>
#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

namespace vhvae {

class DegenerateInputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Pca2d {
  std::vector<std::array<double, 2>> projections;
  std::array<Vector, 2> components;
  std::array<double, 2> explained_variance{};
  Vector mean;
};

namespace detail {

// Largest-magnitude coordinate made positive.
inline void fix_sign(Vector& v) {
  Eigen::Index arg = 0;
  v.cwiseAbs().maxCoeff(&arg);
  if (v(arg) < 0) v = -v;
}

// Dominant eigenpair of a symmetric PSD matrix by power iteration.
// Returns eigenvalue 0 and leaves `v` untouched when the matrix annihilates the start vector.
inline double power_iterate(const Matrix& c, Vector& v, double tol, int max_iter) {
  const double scale = std::max(1.0, c.cwiseAbs().maxCoeff());
  for (int it = 0; it < max_iter; ++it) {
    Vector w = c * v;
    const double norm = w.norm();
    if (norm < 1e-13 * scale) return 0.0;
    w /= norm;
    if (w.dot(v) < 0) w = -w;
    const double change = (w - v).norm();
    v = w;
    if (change < tol) break;
  }
  return v.dot(c * v);
}

}  // namespace detail

/// Two leading principal components by deflated power iteration.
/// A vanishing second direction is reported with zero variance.
inline Pca2d pca_2d(std::span<const Vector> rows, double tol = 1e-10, int max_iter = 10000) {
  if (rows.size() < 3) throw DegenerateInputError("pca_2d: need at least 3 rows");
  const Eigen::Index dim = rows.front().size();
  if (dim < 2) throw DegenerateInputError("pca_2d: need dimension >= 2");
  for (const Vector& r : rows) {
    if (r.size() != dim) throw DegenerateInputError("pca_2d: rows differ in dimension");
  }

  const auto n = static_cast<double>(rows.size());
  Pca2d out;
  out.mean = Vector::Zero(dim);
  for (const Vector& r : rows) out.mean += r;
  out.mean /= n;

  Matrix cov = Matrix::Zero(dim, dim);
  for (const Vector& r : rows) {
    const Vector d = r - out.mean;
    cov.noalias() += d * d.transpose();
  }
  cov /= (n - 1.0);
  if (cov.trace() <= 1e-14) throw DegenerateInputError("pca_2d: zero variance");

  // Deterministic start vector with no symmetry along the axes.
  Vector start(dim);
  for (Eigen::Index i = 0; i < dim; ++i) start(i) = 1.0 + 0.1 * static_cast<double>(i + 1);
  start.normalize();

  Vector v1 = start;
  const double l1 = detail::power_iterate(cov, v1, tol, max_iter);
  if (l1 <= 0.0) throw DegenerateInputError("pca_2d: zero variance");
  detail::fix_sign(v1);

  const Matrix deflated = cov - l1 * v1 * v1.transpose();
  Vector v2 = start - start.dot(v1) * v1;
  if (v2.norm() < 1e-8) {
    v2 = Vector::Unit(dim, 0) - v1(0) * v1;
    if (v2.norm() < 1e-8) v2 = Vector::Unit(dim, 1) - v1(1) * v1;
  }
  v2.normalize();
  double l2 = detail::power_iterate(deflated, v2, tol, max_iter);
  // Re-orthogonalize against round-off drift.
  v2 -= v2.dot(v1) * v1;
  v2.normalize();
  if (l2 < 1e-12 * l1) l2 = 0.0;
  detail::fix_sign(v2);

  out.components = {v1, v2};
  out.explained_variance = {l1, l2};
  out.projections.reserve(rows.size());
  for (const Vector& r : rows) {
    const Vector d = r - out.mean;
    out.projections.push_back({d.dot(v1), d.dot(v2)});
  }
  return out;
}

}  // namespace vhvae
