#pragma once

#include "vhvae/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>

namespace vhvae {

class EvaluationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  Eigen::Index worst_index = -1;
  std::size_t coordinates = 0;
};

/// Central-difference gradient check.
///
/// `loss` evaluates the objective at the current parameter values and adds
/// its analytic gradient into Parameter::grad. It must be deterministic:
/// any randomness has to be reseeded inside the callback.
inline GradCheckReport grad_check_report(const std::function<double()>& loss, std::span<Parameter* const> params,
                                         double h = 1e-4) {
  for (Parameter* p : params) p->zero_grad();
  const double f0 = loss();
  if (!std::isfinite(f0)) throw EvaluationError("grad_check: objective is not finite");

  std::vector<Matrix> analytic;
  analytic.reserve(params.size());
  for (Parameter* p : params) analytic.push_back(p->grad);

  GradCheckReport report;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = *params[k];
    for (Eigen::Index i = 0; i < p.value.size(); ++i) {
      const double saved = p.value(i);
      p.value(i) = saved + h;
      const double fp = loss();
      p.value(i) = saved - h;
      const double fm = loss();
      p.value(i) = saved;
      if (!std::isfinite(fp) || !std::isfinite(fm)) {
        throw EvaluationError("grad_check: objective is not finite near " + p.name);
      }
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic[k](i);
      const double err = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
      ++report.coordinates;
      if (err > report.max_relative_error) {
        report.max_relative_error = err;
        report.worst_parameter = p.name;
        report.worst_index = i;
      }
    }
  }
  for (std::size_t k = 0; k < params.size(); ++k) params[k]->grad = analytic[k];
  return report;
}

inline double grad_check(const std::function<double()>& loss, std::span<Parameter* const> params,
                         double h = 1e-4) {
  return grad_check_report(loss, params, h).max_relative_error;
}

}  // namespace vhvae
