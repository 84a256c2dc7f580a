#pragma once

// Training objective: focal reconstruction loss, KL to the standard normal
// prior and the Permutation Loss that discourages keys from emitting pitches
// already favoured by earlier keys.

#include "vhvae/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

namespace vhvae {

struct FocalConfig {
  double gamma = 2.0;
  double alpha = 0.25;
};

struct LossBreakdown {
  double recon_focal = 0.0;
  double kl = 0.0;
  double perm = 0.0;
  double total = 0.0;
  double kl_weight = 0.0;
  double perm_weight = 0.0;
};

inline constexpr double kProbFloor = 1e-12;
inline constexpr double kLogFloor = -30.0;

namespace loss {

/// FL(p_t) = -alpha (1 - p_t)^gamma log p_t and dFL/dp_t, with p_t clamped at 1e-12.
inline std::pair<double, double> focal_value_and_slope(double p, const FocalConfig& cfg) {
  const bool clamped = p < kProbFloor;
  const double pc = clamped ? kProbFloor : std::min(p, 1.0);
  const double q = 1.0 - pc;
  const double logp = std::log(pc);
  const double value = -cfg.alpha * std::pow(q, cfg.gamma) * logp;
  if (clamped) return {value, 0.0};
  double slope = -cfg.alpha * std::pow(q, cfg.gamma) / pc;
  if (cfg.gamma != 0.0 && q > 0.0) slope += cfg.alpha * cfg.gamma * std::pow(q, cfg.gamma - 1.0) * logp;
  return {value, slope};
}

/// Focal loss of a categorical column vector against a target class.
inline Var focal(Var dist, Eigen::Index target, const FocalConfig& cfg) {
  Tape& t = *dist.tape();
  const auto [value, slope] = focal_value_and_slope(dist.value()(target, 0), cfg);
  Matrix y(1, 1);
  y(0, 0) = value;
  return t.record(std::move(y), {dist}, [dist, target, slope = slope](Tape& tp, int self) {
    if (tp.requires_grad(dist)) tp.grad(dist)(target, 0) += tp.grad(self)(0, 0) * slope;
  });
}

/// KL(N(mu, diag exp(log_var)) || N(0, I)) = 0.5 Σ (exp(lv) + mu^2 - 1 - lv).
inline Var kl_gaussian(Var mu, Var log_var) {
  Var terms = ops::sub(ops::add(ops::exp(log_var), ops::square(mu)), ops::add_constant(log_var, 1.0));
  return ops::scale(ops::sum(terms), 0.5);
}

/// Permutation Loss at one step for per-key distributions whose last entry is REST.
///
/// For k >= 1 the reference p̂ is the mean of the earlier keys' distributions
/// restricted to sounded pitches and renormalized; the step loss is
/// Σ_k Σ_v p̂_k(v) log p_k(v) with the log floored at -30.
inline Var permutation_step(std::span<const Var> dists) {
  if (dists.empty()) throw std::invalid_argument("permutation_step: no keys");
  Tape& t = *dists.front().tape();
  const auto keys = dists.size();
  const Eigen::Index pitches = dists.front().rows() - 1;

  std::vector<Vector> logs(keys);
  std::vector<std::vector<bool>> floored(keys);
  for (std::size_t k = 0; k < keys; ++k) {
    const Matrix& p = dists[k].value();
    logs[k].resize(pitches);
    floored[k].assign(static_cast<std::size_t>(pitches), false);
    for (Eigen::Index v = 0; v < pitches; ++v) {
      const double lp = p(v, 0) > 0.0 ? std::log(p(v, 0)) : -std::numeric_limits<double>::infinity();
      floored[k][static_cast<std::size_t>(v)] = lp < kLogFloor;
      logs[k](v) = std::max(lp, kLogFloor);
    }
  }

  // Running sum of sounded mass over earlier keys.
  Vector running = Vector::Zero(pitches);
  std::vector<double> mass(keys, 0.0), per_key(keys, 0.0);
  std::vector<Vector> ref(keys);
  double total = 0.0;
  for (std::size_t k = 0; k < keys; ++k) {
    if (k > 0) {
      mass[k] = running.sum();
      if (mass[k] > kProbFloor) {
        ref[k] = running / mass[k];
        per_key[k] = ref[k].dot(logs[k]);
        total += per_key[k];
      }
    }
    running += dists[k].value().topRows(pitches).col(0);
  }

  Matrix y(1, 1);
  y(0, 0) = total;
  std::vector<Var> in(dists.begin(), dists.end());
  return t.record(std::move(y), dists, [in, logs, floored, mass, per_key, ref, pitches](Tape& tp, int self) {
    const double g = tp.grad(self)(0, 0);
    const std::size_t keys = in.size();
    // Suffix sums of (log p_k - PL_k) / M_k over later keys feed the earlier keys.
    Vector later = Vector::Zero(pitches);
    for (std::size_t kk = keys; kk-- > 0;) {
      Matrix d = Matrix::Zero(pitches + 1, 1);
      d.topRows(pitches).col(0) = later;
      if (kk > 0 && mass[kk] > kProbFloor) {
        const Matrix& p = in[kk].value();
        for (Eigen::Index v = 0; v < pitches; ++v) {
          if (!floored[kk][static_cast<std::size_t>(v)]) d(v, 0) += ref[kk](v) / p(v, 0);
        }
        later += (logs[kk].array() - per_key[kk]).matrix() / mass[kk];
      }
      if (tp.requires_grad(in[kk])) tp.grad(in[kk]) += g * d;
    }
  });
}

}  // namespace loss

struct LossWeights {
  double kl_weight = 0.0;
  double perm_weight = 0.1;
  FocalConfig focal{};
};

/// Differentiable per-window outputs consumed by the objective.
struct ModelOutputs {
  int steps = 0;
  int keys = 0;
  std::vector<Var> dists;  // steps * keys categoricals, index t * keys + k; last class is REST
  Var mu;
  Var log_var;

  Var dist(int t, int k) const { return dists[static_cast<std::size_t>(t) * static_cast<std::size_t>(keys) + static_cast<std::size_t>(k)]; }
};

/// total = recon_focal + kl_weight * kl + perm_weight * PL, where recon_focal
/// is the mean focal loss over all (step, key) cells and PL the mean
/// per-step Permutation Loss. `targets` holds class indices (t * keys + k).
/// When `key_order` is given the targets are read through it: the target of
/// slot k is the original slot key_order[k].
inline std::pair<Var, LossBreakdown> total_loss(const ModelOutputs& out, std::span<const int> targets,
                                                const LossWeights& w,
                                                std::optional<std::span<const int>> key_order = std::nullopt) {
  if (targets.size() != out.dists.size()) throw std::invalid_argument("total_loss: target shape mismatch");
  std::vector<Var> focal_terms;
  focal_terms.reserve(out.dists.size());
  std::vector<Var> perm_terms;
  for (int t = 0; t < out.steps; ++t) {
    std::vector<Var> step;
    for (int k = 0; k < out.keys; ++k) {
      const int src = key_order ? (*key_order)[static_cast<std::size_t>(k)] : k;
      const int target = targets[static_cast<std::size_t>(t) * static_cast<std::size_t>(out.keys) + static_cast<std::size_t>(src)];
      focal_terms.push_back(loss::focal(out.dist(t, k), target, w.focal));
      step.push_back(out.dist(t, k));
    }
    perm_terms.push_back(loss::permutation_step(step));
  }
  Var recon = ops::mean_n(focal_terms);
  Var perm = ops::mean_n(perm_terms);
  Var kl = loss::kl_gaussian(out.mu, out.log_var);
  Var total = ops::add_n(std::vector<Var>{recon, ops::scale(kl, w.kl_weight), ops::scale(perm, w.perm_weight)});

  LossBreakdown b;
  b.recon_focal = recon.scalar();
  b.kl = kl.scalar();
  b.perm = perm.scalar();
  b.kl_weight = w.kl_weight;
  b.perm_weight = w.perm_weight;
  b.total = total.scalar();
  return {total, b};
}

// Plain-value entry points.

inline double focal_loss(std::span<const double> dist, std::size_t target, const FocalConfig& cfg = {}) {
  if (target >= dist.size()) throw std::out_of_range("focal_loss: target outside distribution");
  return loss::focal_value_and_slope(dist[target], cfg).first;
}

inline double kl_gaussian(const Vector& mu, const Vector& log_var) {
  return 0.5 * (log_var.array().exp() + mu.array().square() - 1.0 - log_var.array()).sum();
}

inline double permutation_loss(std::span<const Vector> dists) {
  Tape t(false);
  std::vector<Var> vars;
  for (const Vector& d : dists) vars.push_back(t.constant(d));
  return loss::permutation_step(vars).scalar();
}

/// KL weight under linear warm-up from 0 to `max_weight`.
inline double kl_anneal(long step, long warmup_steps, double max_weight) {
  if (warmup_steps <= 0) return max_weight;
  return max_weight * std::min(1.0, static_cast<double>(step) / static_cast<double>(warmup_steps));
}

}  // namespace vhvae
