// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fail.
// Usage: acceptance [criterion numbers...]   (default: all)

#include "oracles.hpp"
#include "vhvae/checkpoint.hpp"
#include "vhvae/eval_metrics.hpp"
#include "vhvae/grad_check.hpp"
#include "vhvae/losses.hpp"
#include "vhvae/midi_io.hpp"
#include "vhvae/model.hpp"
#include "vhvae/pca.hpp"
#include "vhvae/theory_analysis.hpp"
#include "vhvae/trainer.hpp"
#include "vhvae/tree_attention.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

using namespace vhvae;

namespace {

// ---- pinned tolerances and budgets ------------------------------------------------

constexpr double kOracleTol = 1e-9;
constexpr double kMassTol = 1e-10;
constexpr double kShiftTol = 1e-10;
constexpr double kShift = 3.7;
constexpr double kGradStep = 1e-4;
constexpr double kGradTol = 1e-3;
constexpr double kFocalCeTol = 1e-12;
constexpr double kCausalTol = 1e-12;
constexpr double kAngleTol = 1e-6;
constexpr double kOverfitTarget = 0.90;
constexpr int kOverfitMaxSteps = 2000;
constexpr int kDuplicateSamples = 64;
constexpr double kOracleBudgetSec = 5.0;
constexpr double kGradBudgetSec = 60.0;
constexpr double kOverfitBudgetSec = 30.0 * 60.0;

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string num(double v, int precision = 3) {
  std::ostringstream s;
  s << std::setprecision(precision) << v;
  return s.str();
}

tree::TreePotentials random_potentials(Rng& rng, int n) {
  tree::TreePotentials p{Matrix::Zero(n, n), Vector::Zero(n)};
  for (int i = 0; i < n; ++i) {
    p.theta_root(i) = 2.0 * rng.normal();
    for (int j = 0; j < n; ++j) {
      if (i != j) p.theta(i, j) = 2.0 * rng.normal();
    }
  }
  return p;
}

// Draws shared by criteria 1 and 2: 100 per n in {2,3,4,5}.
std::vector<tree::TreePotentials> marginal_draws() {
  Rng rng(2024);
  std::vector<tree::TreePotentials> out;
  for (int n = 2; n <= 5; ++n) {
    for (int d = 0; d < 100; ++d) out.push_back(random_potentials(rng, n));
  }
  return out;
}

// ---- 1-3: tree marginals --------------------------------------------------------

Outcome oracle_equivalence() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  for (const auto& p : marginal_draws()) {
    const auto m = tree::marginals(p);
    const auto o = oracle::tree_marginals(p.theta, p.theta_root);
    worst = std::max(worst, (m.marg_root - o.root).cwiseAbs().maxCoeff());
    for (Eigen::Index i = 0; i < p.n(); ++i) {
      for (Eigen::Index j = 0; j < p.n(); ++j) {
        if (i != j) worst = std::max(worst, std::abs(m.marg(i, j) - o.edge(i, j)));
      }
    }
  }
  const double sec = seconds_since(t0);
  return {worst < kOracleTol && sec < kOracleBudgetSec, "max_abs_diff=" + num(worst) + " runtime_s=" + num(sec)};
}

Outcome marginal_normalization() {
  double worst = 0.0;
  for (const auto& p : marginal_draws()) {
    const auto m = tree::marginals(p);
    for (Eigen::Index j = 0; j < p.n(); ++j) {
      double mass = m.marg_root(j);
      for (Eigen::Index i = 0; i < p.n(); ++i) mass += i == j ? 0.0 : m.marg(i, j);
      worst = std::max(worst, std::abs(mass - 1.0));
    }
  }
  return {worst < kMassTol, "max_mass_error=" + num(worst)};
}

Outcome shift_invariance() {
  double worst = 0.0;
  for (auto p : marginal_draws()) {
    const auto a = tree::marginals(p);
    p.theta.array() += kShift;
    p.theta_root.array() += kShift;
    const auto b = tree::marginals(p);
    worst = std::max(worst, (a.stacked() - b.stacked()).cwiseAbs().maxCoeff());
  }
  return {worst < kShiftTol, "max_change=" + num(worst)};
}

// ---- 4: gradients ---------------------------------------------------------------

double check(const std::function<Var(Tape&)>& build, std::vector<Parameter*> params) {
  auto loss = [&] {
    Tape t;
    Var y = build(t);
    t.backward(y);
    return y.scalar();
  };
  return grad_check(loss, params, kGradStep);
}

Outcome gradient_suite() {
  const auto t0 = Clock::now();
  Rng rng(4);
  std::vector<std::pair<std::string, double>> errs;

  // (a) marginals: the plain sum and a weighted sum
  const auto pot = random_potentials(rng, 5);
  Parameter th("theta", pot.theta), rt("root", Matrix(pot.theta_root));
  errs.emplace_back("marg_sum", check([&](Tape& t) { return ops::sum(tree::marginals(t.parameter(th), t.parameter(rt))); }, {&th, &rt}));
  const Matrix w = Matrix::Random(6, 5);
  errs.emplace_back("marg_weighted", check([&](Tape& t) { return ops::dot(tree::marginals(t.parameter(th), t.parameter(rt)), t.constant(w)); }, {&th, &rt}));

  // (b) focal, (c) permutation, (d) KL
  Parameter logits("logits", Matrix::Random(9, 3));
  const FocalConfig fc{2.0, 0.25};
  errs.emplace_back("focal", check([&](Tape& t) {
    Var l = t.parameter(logits);
    std::vector<Var> terms;
    for (int k = 0; k < 3; ++k) terms.push_back(loss::focal(ops::softmax(ops::column(l, k)), 2 * k, fc));
    return ops::add_n(terms);
  }, {&logits}));
  errs.emplace_back("permutation", check([&](Tape& t) {
    Var l = t.parameter(logits);
    std::vector<Var> d;
    for (int k = 0; k < 3; ++k) d.push_back(ops::softmax(ops::column(l, k)));
    return loss::permutation_step(d);
  }, {&logits}));
  Parameter mu("mu", Matrix::Random(5, 1)), lv("lv", Matrix::Random(5, 1));
  errs.emplace_back("kl", check([&](Tape& t) { return loss::kl_gaussian(t.parameter(mu), t.parameter(lv)); }, {&mu, &lv}));

  // (e) full model total loss on a toy
  ModelConfig c;
  c.n_keys = 2;
  c.n_bars = 2;
  c.pitch_vocab = 13;
  c.embed_dim = 8;
  c.enc_hidden = 8;
  c.latent_dim = 8;
  c.attn_hidden = 8;
  c.conductor_hidden = 8;
  c.dec_hidden = 8;
  c.seed = 42;
  VhVae model(c);
  midi::PianoRoll roll(c.steps(), c.n_pitches());
  for (auto& cell : roll.grid) cell = rng.uniform01() < 0.15 ? 1 : 0;
  const midi::KeyedRoll keyed = midi::decompose_keys(roll, c.n_keys);
  const std::vector<int> order = {1, 0};
  const auto targets = model.targets(keyed);
  const LossWeights weights{0.2, 0.1, fc};
  std::vector<Parameter*> ps;
  for (std::size_t i = 0; i < model.params().size(); ++i) ps.push_back(&model.params()[i]);
  errs.emplace_back("full_model", check([&](Tape& t) {
    Rng noise(9);
    ModelOutputs out = model.forward(t, keyed.permuted(order), noise);
    return total_loss(out, targets, weights, std::span<const int>(order)).first;
  }, ps));

  const double sec = seconds_since(t0);
  bool ok = sec < kGradBudgetSec;
  std::string detail;
  for (const auto& [name, e] : errs) {
    ok = ok && e < kGradTol;
    detail += name + "=" + num(e, 2) + " ";
  }
  return {ok, detail + "runtime_s=" + num(sec)};
}

// ---- 5-8 --------------------------------------------------------------------------

Outcome focal_cross_entropy() {
  double worst = 0.0;
  const FocalConfig ce{0.0, 1.0};
  std::vector<double> ps = {0.01};
  for (int k = 1; k <= 9; ++k) ps.push_back(0.1 * k);
  ps.push_back(0.99);
  for (double p : ps) {
    const std::vector<double> dist = {p, 1.0 - p};
    worst = std::max(worst, std::abs(focal_loss(dist, 0, ce) + std::log(p)));
  }
  return {worst < kFocalCeTol, "points=" + std::to_string(ps.size()) + " max_abs_diff=" + num(worst)};
}

Outcome interval_vectors() {
  const theory::IntervalVector expected = {0, 0, 1, 1, 1, 0};
  bool ok = theory::interval_vector(theory::PitchClassSet::of({0, 4, 7})) == expected;
  int checked = 0;
  for (const auto& triad : theory::all_triads()) {
    const auto base = theory::interval_vector(triad);
    ok = ok && base == expected;
    for (int k = 0; k < 12; ++k) {
      ok = ok && theory::interval_vector(triad.transposed(k)) == base;
      ok = ok && theory::interval_vector(triad.transposed(k).inverted()) == base;
      checked += 2;
    }
  }
  return {ok, "iv{0,4,7}=(0,0,1,1,1,0) invariance_checks=" + std::to_string(checked)};
}

Outcome metrics() {
  const Rates r = rates({3, 2, 1, 0});
  bool ok = r.ppv == 0.6 && r.tpr == 0.75;
  Rng rng(7);
  ConfusionCounts pooled;
  oracle::Counts recount;
  for (int pair = 0; pair < 50; ++pair) {
    const int steps = 16 * (1 + static_cast<int>(rng.index(3)));
    midi::PianoRoll a(steps), b(steps);
    std::vector<std::vector<int>> ga(static_cast<std::size_t>(steps), std::vector<int>(midi::kPitchCount));
    auto gb = ga;
    for (int s = 0; s < steps; ++s) {
      for (int p = 0; p < midi::kPitchCount; ++p) {
        if (rng.uniform01() < 0.05) {
          a.set(s, p);
          ga[static_cast<std::size_t>(s)][static_cast<std::size_t>(p)] = 1;
        }
        if (rng.uniform01() < 0.05) {
          b.set(s, p);
          gb[static_cast<std::size_t>(s)][static_cast<std::size_t>(p)] = 1;
        }
      }
    }
    pooled += confusion(a, b);
    const auto c = oracle::recount(ga, gb);
    recount.tp += c.tp;
    recount.fp += c.fp;
    recount.fn += c.fn;
    recount.tn += c.tn;
  }
  ok = ok && pooled.tp == recount.tp && pooled.fp == recount.fp && pooled.fn == recount.fn && pooled.tn == recount.tn;
  return {ok, "ppv=" + num(*r.ppv) + " tpr=" + num(*r.tpr) + " pooled_pairs=50"};
}

Outcome midi_round_trip() {
  Rng rng(8);
  int exact = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int bars = 1 + static_cast<int>(rng.index(4));
    const double density = rng.uniform(0.005, 0.15);
    midi::PianoRoll r(bars * midi::kStepsPerBar);
    for (auto& cell : r.grid) cell = rng.uniform01() < density ? 1 : 0;
    if (r.active_count() == 0) r.set(0, 44);
    const auto f = midi::parse_midi(midi::write_midi(r, 480));
    if (midi::quantize(f.events, f.ppq, f.end_tick) == r) ++exact;
  }
  return {exact == 100, "exact=" + std::to_string(exact) + "/100"};
}

// ---- 9: overfit ---------------------------------------------------------------------

ModelConfig overfit_model() {
  ModelConfig c;
  c.n_keys = 2;
  c.n_bars = 16;
  c.pitch_vocab = 89;
  c.embed_dim = 16;
  c.enc_hidden = 32;
  c.latent_dim = 16;
  c.attn_hidden = 16;
  c.conductor_hidden = 32;
  c.dec_hidden = 64;
  c.seed = 42;
  return c;
}

// Bass holds a chord root for half a bar; the melody moves every 2 or 4 steps
// over the chord and its neighbours.
std::vector<midi::Window> two_voice_pieces(int count, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<midi::Window> out;
  for (int i = 0; i < count; ++i) {
    midi::PianoRoll r(16 * midi::kStepsPerBar);
    int t = 0;
    int melody = 45 + static_cast<int>(rng.index(8));
    while (t < r.steps) {
      const int root = 15 + static_cast<int>(rng.index(12));
      for (int s = t; s < t + 8; ++s) r.set(s, root);
      for (int s = t; s < t + 8;) {
        const int len = rng.uniform01() < 0.5 ? 2 : 4;
        melody = std::clamp(melody + static_cast<int>(rng.index(7)) - 3, 40, 60);
        for (int q = s; q < std::min(s + len, t + 8); ++q) r.set(q, melody);
        s += len;
      }
      t += 8;
    }
    midi::Window w;
    w.bars = 16;
    w.roll = midi::decompose_keys(r, 2);
    w.source_id = "piece" + std::to_string(i);
    out.push_back(std::move(w));
  }
  return out;
}

Outcome overfit() {
  const auto t0 = Clock::now();
  const auto corpus = two_voice_pieces(4, 42);
  TrainConfig cfg;
  cfg.seed = 42;
  cfg.epochs = kOverfitMaxSteps;
  cfg.max_steps = kOverfitMaxSteps;
  cfg.batch_size = 1;
  cfg.learning_rate = 3e-3;
  cfg.kl_warmup_steps = 500;
  cfg.eval_every = 100;
  VhVae model(overfit_model());
  const TrainResult res = train(model, corpus, {}, cfg);
  const Rates r = rates(evaluate_reconstruction(model, corpus, 42));
  const double sec = seconds_since(t0);
  const double ppv = r.ppv.value_or(0.0), tpr = r.tpr.value_or(0.0);
  for (const auto& row : res.telemetry) {
    std::printf("      step=%ld recon=%.5f kl=%.4f ppv=%.4f tpr=%.4f\n", row.step, row.recon, row.kl, row.ppv, row.tpr);
  }
  return {ppv >= kOverfitTarget && tpr >= kOverfitTarget && res.steps <= kOverfitMaxSteps && sec < kOverfitBudgetSec,
          "windows=4 steps=" + std::to_string(res.steps) + " ppv=" + num(ppv, 4) + " tpr=" + num(tpr, 4) + " runtime_s=" + num(sec)};
}

// ---- 10: permutation-loss effect --------------------------------------------------

ModelConfig duplicate_model() {
  ModelConfig c;
  c.n_keys = 2;
  c.n_bars = 2;
  c.pitch_vocab = 13;
  c.embed_dim = 8;
  c.enc_hidden = 8;
  c.latent_dim = 8;
  c.attn_hidden = 8;
  c.conductor_hidden = 12;
  c.dec_hidden = 16;
  c.seed = 42;
  return c;
}

// Two voices on distinct pitch classes at every step, one dyad per bar.
std::vector<midi::Window> distinct_voice_corpus(int count, std::uint64_t seed) {
  const ModelConfig c = duplicate_model();
  Rng rng(seed);
  std::vector<midi::Window> out;
  for (int i = 0; i < count; ++i) {
    midi::PianoRoll r(c.steps(), c.n_pitches());
    for (int t = 0; t < r.steps; t += c.steps_per_bar) {
      const int a = static_cast<int>(rng.index(12));
      const int b = (a + 3 + static_cast<int>(rng.index(6))) % 12;
      for (int s = t; s < t + c.steps_per_bar; ++s) {
        r.set(s, a);
        r.set(s, b);
      }
    }
    midi::Window w;
    w.bars = c.n_bars;
    w.roll = midi::decompose_keys(r, 2);
    w.source_id = "d" + std::to_string(i);
    out.push_back(std::move(w));
  }
  return out;
}

double duplicate_rate(double lambda_pl, const std::vector<midi::Window>& corpus) {
  TrainConfig cfg;
  cfg.seed = 42;
  cfg.epochs = 40;
  cfg.batch_size = 4;
  cfg.learning_rate = 5e-3;
  cfg.eval_every = 1000;
  cfg.lambda_pl = lambda_pl;
  VhVae model(duplicate_model());
  train(model, corpus, {}, cfg);
  Rng rng(42);
  std::size_t sounded = 0, dups = 0;
  for (int i = 0; i < kDuplicateSamples; ++i) {
    const SampleResult s = model.sample(rng);
    sounded += s.sounded_emissions;
    dups += s.duplicate_emissions;
  }
  return sounded == 0 ? 0.0 : static_cast<double>(dups) / static_cast<double>(sounded);
}

Outcome permutation_effect() {
  const auto corpus = distinct_voice_corpus(32, 10);
  const double with_pl = duplicate_rate(0.1, corpus);
  const double without = duplicate_rate(0.0, corpus);
  return {with_pl < without, "dup_rate_pl0.1=" + num(with_pl, 4) + " dup_rate_pl0=" + num(without, 4) + " samples=64"};
}

// ---- 11-13 -------------------------------------------------------------------------

Outcome causal_horizontal() {
  ModelConfig c = overfit_model();
  c.n_bars = 6;
  c.global_attention = false;
  VhVae model(c);
  Rng rng(11);
  midi::Window w;
  w.bars = c.n_bars;
  w.roll = midi::KeyedRoll(c.steps(), c.n_keys);
  const auto src = two_voice_pieces(1, 3).front().roll;
  std::copy_n(src.slots.begin(), w.roll.slots.size(), w.roll.slots.begin());
  const auto base = model.attention_of(w);
  double worst = 0.0;
  int checks = 0;
  for (int u = 0; u + 1 < c.n_bars; ++u) {
    midi::Window changed = w;
    for (int t = (u + 1) * c.steps_per_bar; t < c.steps(); ++t) {
      for (int k = 0; k < c.n_keys; ++k) changed.roll.at(t, k) = rng.uniform01() < 0.2 ? midi::kRest : static_cast<int>(rng.index(88));
    }
    changed.roll.canonicalize();
    const auto after = model.attention_of(changed);
    for (int x = 0; x <= u; ++x) {
      worst = std::max(worst, (after.horizontal[static_cast<std::size_t>(x)] - base.horizontal[static_cast<std::size_t>(x)]).cwiseAbs().maxCoeff());
      ++checks;
    }
  }
  return {worst < kCausalTol, "max_change=" + num(worst) + " checks=" + std::to_string(checks)};
}

Outcome determinism() {
  const auto corpus = distinct_voice_corpus(6, 12);
  TrainConfig cfg;
  cfg.seed = 42;
  cfg.epochs = 5;
  cfg.batch_size = 2;
  cfg.eval_every = 3;
  auto run = [&] {
    VhVae m(duplicate_model());
    const auto r = train(m, corpus, {}, cfg);
    std::ostringstream tel;
    write_telemetry(tel, r.telemetry);
    return std::make_pair(checkpoint_bytes(m), tel.str());
  };
  const auto a = run(), b = run();
  const bool ok = a.first == b.first && a.second == b.second && !a.second.empty();
  return {ok, "checkpoint_bytes=" + std::to_string(a.first.size()) + " identical=" + (ok ? "yes" : "no")};
}

Outcome pca() {
  Rng rng(13);
  const std::vector<double> sd = {3.0, 2.0, 1.0, 0.5, 0.2};
  std::vector<Vector> rows;
  for (int i = 0; i < 50; ++i) {
    Vector v(5);
    for (int k = 0; k < 5; ++k) v(k) = sd[static_cast<std::size_t>(k)] * rng.normal();
    rows.push_back(v);
  }
  const Pca2d p = pca_2d(rows);
  Vector mean = Vector::Zero(5);
  for (const auto& r : rows) mean += r / 50.0;
  Matrix cov = Matrix::Zero(5, 5);
  for (const auto& r : rows) cov += (r - mean) * (r - mean).transpose() / 49.0;
  const auto ref = oracle::jacobi_eigen(cov);
  double worst = 0.0;
  for (int c = 0; c < 2; ++c) {
    const Vector a = ref.vectors.col(c).normalized();
    Vector b = p.components[c].normalized();
    if (a.dot(b) < 0) b = -b;
    worst = std::max(worst, 2.0 * std::asin(std::min(1.0, 0.5 * (a - b).norm())));
  }
  return {worst < kAngleTol, "max_angle_rad=" + num(worst)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"tree marginals match brute-force oracle", oracle_equivalence},
      {"incoming marginal mass is one", marginal_normalization},
      {"marginals shift invariant", shift_invariance},
      {"gradient checks", gradient_suite},
      {"focal loss reduces to cross-entropy", focal_cross_entropy},
      {"interval vectors", interval_vectors},
      {"confusion metrics", metrics},
      {"midi round-trip", midi_round_trip},
      {"overfit reconstruction", overfit},
      {"permutation loss lowers duplicates", permutation_effect},
      {"causal horizontal attention", causal_horizontal},
      {"training determinism", determinism},
      {"pca top-2 components", pca},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::stoi(argv[i]));
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failed;
    std::printf("%s %2d %s: %s\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
