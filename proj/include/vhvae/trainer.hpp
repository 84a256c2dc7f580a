#pragma once

#include "vhvae/eval_metrics.hpp"
#include "vhvae/losses.hpp"
#include "vhvae/model.hpp"

#include <cmath>
#include <numeric>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace vhvae {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  int epochs = 10;
  int batch_size = 4;
  double learning_rate = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip_norm = 5.0;
  long kl_warmup_steps = 2000;
  double kl_max = 0.2;
  double lambda_pl = 0.1;
  std::uint64_t seed = 42;
  int eval_every = 50;
  long max_steps = 0;  // 0: no cap beyond epochs
  bool permute_keys = true;
  FocalConfig focal{};

  void validate() const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(learning_rate > 0)) throw ConfigError("learning_rate must be positive");
    if (!(grad_clip_norm > 0)) throw ConfigError("grad_clip_norm must be positive");
    if (eval_every < 1) throw ConfigError("eval_every must be >= 1");
    if (kl_warmup_steps < 0 || kl_max < 0 || lambda_pl < 0) throw ConfigError("loss weights must be non-negative");
    if (focal.gamma < 0 || !(focal.alpha > 0 && focal.alpha <= 1)) throw ConfigError("focal gamma >= 0 and alpha in (0, 1] required");
  }

  bool apply(const std::string& key, const std::string& value) {
    if (key == "epochs") epochs = static_cast<int>(kv::to_int(key, value));
    else if (key == "batch_size") batch_size = static_cast<int>(kv::to_int(key, value));
    else if (key == "learning_rate") learning_rate = kv::to_double(key, value);
    else if (key == "adam_beta1") adam_beta1 = kv::to_double(key, value);
    else if (key == "adam_beta2") adam_beta2 = kv::to_double(key, value);
    else if (key == "adam_eps") adam_eps = kv::to_double(key, value);
    else if (key == "grad_clip_norm") grad_clip_norm = kv::to_double(key, value);
    else if (key == "kl_warmup_steps") kl_warmup_steps = kv::to_int(key, value);
    else if (key == "kl_max") kl_max = kv::to_double(key, value);
    else if (key == "lambda_pl") lambda_pl = kv::to_double(key, value);
    else if (key == "train_seed") seed = kv::to_u64(key, value);
    else if (key == "eval_every") eval_every = static_cast<int>(kv::to_int(key, value));
    else if (key == "max_steps") max_steps = kv::to_int(key, value);
    else if (key == "permute_keys") permute_keys = kv::to_bool(key, value);
    else if (key == "focal_gamma") focal.gamma = kv::to_double(key, value);
    else if (key == "focal_alpha") focal.alpha = kv::to_double(key, value);
    else return false;
    return true;
  }
};

struct TelemetryRow {
  long step = 0;
  double recon = 0.0;
  double kl = 0.0;
  double perm = 0.0;
  double ppv = 0.0;
  double tpr = 0.0;

  friend bool operator==(const TelemetryRow&, const TelemetryRow&) = default;
};

inline void write_telemetry(std::ostream& out, std::span<const TelemetryRow> rows) {
  out << "step,recon,kl,perm,ppv,tpr\n";
  for (const auto& r : rows) {
    out << r.step << ',' << kv::format_double(r.recon) << ',' << kv::format_double(r.kl) << ','
        << kv::format_double(r.perm) << ',' << kv::format_double(r.ppv) << ',' << kv::format_double(r.tpr) << '\n';
  }
}

/// Global gradient norm before clipping; rescales so the norm is at most `max_norm`.
inline double clip_gradients(ParameterStore& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params) sq += p.grad.squaredNorm();
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& p : params) p.grad *= s;
  }
  return norm;
}

inline double gradient_norm(const ParameterStore& params) {
  double sq = 0.0;
  for (const auto& p : params) sq += p.grad.squaredNorm();
  return std::sqrt(sq);
}

class Adam {
 public:
  Adam(const ParameterStore& params, double lr, double b1, double b2, double eps) : lr_(lr), b1_(b1), b2_(b2), eps_(eps) {
    for (const auto& p : params) {
      m_.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
      v_.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
    }
  }

  void step(ParameterStore& params) {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      Parameter& p = params[i];
      m_[i] = b1_ * m_[i] + (1.0 - b1_) * p.grad;
      v_[i] = b2_ * v_[i] + (1.0 - b2_) * p.grad.cwiseAbs2();
      p.value.array() -= lr_ * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
    }
  }

 private:
  double lr_, b1_, b2_, eps_;
  long t_ = 0;
  std::vector<Matrix> m_, v_;
};

/// Seeded shuffle then split: the first round(fraction * n) windows train.
template <class T>
std::pair<std::vector<T>, std::vector<T>> split_corpus(std::span<const T> items, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw std::invalid_argument("split_corpus: fraction must be in (0, 1)");
  std::vector<std::size_t> idx(items.size());
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  rng.shuffle(idx.begin(), idx.end());
  const auto n_train = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(items.size())));
  std::pair<std::vector<T>, std::vector<T>> out;
  for (std::size_t i = 0; i < idx.size(); ++i) (i < n_train ? out.first : out.second).push_back(items[idx[i]]);
  return out;
}

/// Pooled confusion counts of teacher-forced reconstructions against the windows.
inline ConfusionCounts evaluate_reconstruction(VhVae& model, std::span<const midi::Window> windows, std::uint64_t seed) {
  Rng rng(seed);
  ConfusionCounts total;
  const int pitches = model.config().n_pitches();
  for (const auto& w : windows) {
    const midi::KeyedRoll rec = model.reconstruct(w, rng);
    total += confusion(midi::recompose(rec, pitches), midi::recompose(w.roll, pitches));
  }
  return total;
}

struct TrainResult {
  std::vector<TelemetryRow> telemetry;
  long steps = 0;
};

/// Adam on the total loss with teacher forcing. Each batch draws one random
/// key permutation applied to input and targets alike. Windows in a batch are
/// processed sequentially with gradient accumulation. `held_out` (or the
/// training corpus when empty) is reconstructed for the PPV/TPR columns.
inline TrainResult train(VhVae& model, std::span<const midi::Window> corpus, std::span<const midi::Window> held_out,
                         const TrainConfig& cfg) {
  cfg.validate();
  if (corpus.empty()) throw TrainingError("train: empty corpus");
  for (const auto& w : corpus) model.check_shape(w.roll);
  const std::span<const midi::Window> eval_set = held_out.empty() ? corpus : held_out;

  Rng rng(cfg.seed);
  ParameterStore& params = model.params();
  Adam adam(params, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
  const int keys = model.config().n_keys;

  TrainResult result;
  double acc_recon = 0.0, acc_kl = 0.0, acc_perm = 0.0;
  long acc_n = 0;
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order.begin(), order.end());
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      if (cfg.max_steps > 0 && result.steps >= cfg.max_steps) return result;
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const auto batch = static_cast<double>(end - start);

      std::vector<int> perm(static_cast<std::size_t>(keys));
      std::iota(perm.begin(), perm.end(), 0);
      if (cfg.permute_keys) rng.shuffle(perm.begin(), perm.end());

      LossWeights w;
      w.kl_weight = kl_anneal(result.steps, cfg.kl_warmup_steps, cfg.kl_max);
      w.perm_weight = cfg.lambda_pl;
      w.focal = cfg.focal;

      params.zero_grad();
      double loss_sum = 0.0;
      for (std::size_t b = start; b < end; ++b) {
        const midi::Window& win = corpus[order[b]];
        const midi::KeyedRoll input = win.roll.permuted(perm);
        Tape tape;
        ModelOutputs out = model.forward(tape, input, rng);
        const std::vector<int> targets = model.targets(win.roll);
        auto [total, br] = total_loss(out, targets, w, std::span<const int>(perm));
        tape.backward(total, 1.0 / batch);
        loss_sum += br.total;
        acc_recon += br.recon_focal;
        acc_kl += br.kl;
        acc_perm += br.perm;
        ++acc_n;
      }

      if (!std::isfinite(loss_sum) || !std::isfinite(gradient_norm(params))) {
        std::string culprit = "loss";
        for (const auto& p : params) {
          if (!p.grad.allFinite() || !p.value.allFinite()) {
            culprit = p.name;
            break;
          }
        }
        throw TrainingError("non-finite loss at step " + std::to_string(result.steps) + " (parameter " + culprit + ")");
      }
      clip_gradients(params, cfg.grad_clip_norm);
      adam.step(params);
      ++result.steps;

      if (result.steps % cfg.eval_every == 0) {
        const ConfusionCounts c = evaluate_reconstruction(model, eval_set, cfg.seed + static_cast<std::uint64_t>(result.steps));
        const Rates r = rates(c);
        TelemetryRow row;
        row.step = result.steps;
        row.recon = acc_recon / static_cast<double>(acc_n);
        row.kl = acc_kl / static_cast<double>(acc_n);
        row.perm = acc_perm / static_cast<double>(acc_n);
        row.ppv = r.ppv.value_or(0.0);
        row.tpr = r.tpr.value_or(0.0);
        result.telemetry.push_back(row);
        acc_recon = acc_kl = acc_perm = 0.0;
        acc_n = 0;
      }
    }
  }
  return result;
}

}  // namespace vhvae
