#pragma once

// Vertical-horizontal VAE.
//
//   encode:  every (bar, key) token sequence -> bidirectional LSTM -> y[u][j];
//            y[u] = mean over keys; (mu, log_var) from the mean of all y[u]
//   attend:  tree attention across keys inside a bar (vertical) and across
//            bars (horizontal, causal unless global_attention) giving
//            yhat[u][j] = [y[u][j]; cv[u][j]; ch[u]]
//   decode:  conductor LSTM over bars on [z; mean_j yhat[u][j]], then a
//            shared per-key LSTM decoder over the 16 steps of each bar on
//            [e_u; yhat[u][j]; embed(previous token)]

#include "vhvae/autodiff.hpp"
#include "vhvae/key_value.hpp"
#include "vhvae/losses.hpp"
#include "vhvae/matrix.hpp"
#include "vhvae/midi_io.hpp"
#include "vhvae/tree_attention.hpp"

#include <algorithm>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace vhvae {

struct ModelConfig {
  int n_keys = 2;
  int n_bars = 16;
  int steps_per_bar = midi::kStepsPerBar;
  int pitch_vocab = midi::kPitchCount + 1;  // pitches plus REST (last class)
  int embed_dim = 32;
  int enc_hidden = 128;
  int latent_dim = 32;
  int attn_hidden = 32;
  int conductor_hidden = 64;
  int dec_hidden = 64;
  bool global_attention = false;
  std::uint64_t seed = 42;

  int n_pitches() const { return pitch_vocab - 1; }
  int rest_class() const { return pitch_vocab - 1; }
  int start_class() const { return pitch_vocab; }
  int steps() const { return n_bars * steps_per_bar; }
  int enc_dim() const { return 2 * enc_hidden; }
  int augmented_dim() const { return 3 * enc_dim(); }

  void validate() const {
    for (auto [name, v] : {std::pair{"n_keys", n_keys}, {"n_bars", n_bars}, {"embed_dim", embed_dim},
                           {"enc_hidden", enc_hidden}, {"latent_dim", latent_dim}, {"attn_hidden", attn_hidden},
                           {"conductor_hidden", conductor_hidden}, {"dec_hidden", dec_hidden}}) {
      if (v < 1) throw ConfigError(std::string(name) + " must be >= 1");
    }
    if (steps_per_bar != midi::kStepsPerBar) throw ConfigError("steps_per_bar is fixed at 16");
    if (pitch_vocab < 2) throw ConfigError("pitch_vocab must be >= 2");
  }

  /// Applies one key; returns false for keys this struct does not own.
  bool apply(const std::string& key, const std::string& value) {
    if (key == "n_keys") n_keys = static_cast<int>(kv::to_int(key, value));
    else if (key == "n_bars") n_bars = static_cast<int>(kv::to_int(key, value));
    else if (key == "steps_per_bar") steps_per_bar = static_cast<int>(kv::to_int(key, value));
    else if (key == "pitch_vocab") pitch_vocab = static_cast<int>(kv::to_int(key, value));
    else if (key == "embed_dim") embed_dim = static_cast<int>(kv::to_int(key, value));
    else if (key == "enc_hidden") enc_hidden = static_cast<int>(kv::to_int(key, value));
    else if (key == "latent_dim") latent_dim = static_cast<int>(kv::to_int(key, value));
    else if (key == "attn_hidden") attn_hidden = static_cast<int>(kv::to_int(key, value));
    else if (key == "conductor_hidden") conductor_hidden = static_cast<int>(kv::to_int(key, value));
    else if (key == "dec_hidden") dec_hidden = static_cast<int>(kv::to_int(key, value));
    else if (key == "global_attention") global_attention = kv::to_bool(key, value);
    else if (key == "seed") seed = kv::to_u64(key, value);
    else return false;
    return true;
  }

  std::string to_text() const {
    std::string s;
    auto put = [&s](const char* k, const std::string& v) { s += std::string(k) + "=" + v + "\n"; };
    put("n_keys", std::to_string(n_keys));
    put("n_bars", std::to_string(n_bars));
    put("steps_per_bar", std::to_string(steps_per_bar));
    put("pitch_vocab", std::to_string(pitch_vocab));
    put("embed_dim", std::to_string(embed_dim));
    put("enc_hidden", std::to_string(enc_hidden));
    put("latent_dim", std::to_string(latent_dim));
    put("attn_hidden", std::to_string(attn_hidden));
    put("conductor_hidden", std::to_string(conductor_hidden));
    put("dec_hidden", std::to_string(dec_hidden));
    put("global_attention", global_attention ? "true" : "false");
    put("seed", std::to_string(seed));
    return s;
  }

  static ModelConfig from_text(const std::string& text) {
    ModelConfig c;
    for (const auto& [k, v] : kv::parse(text, "model config")) {
      if (!c.apply(k, v)) throw ConfigError("unknown model config key: " + k);
    }
    c.validate();
    return c;
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Plain-value encoder output.
struct EncodingGrid {
  std::vector<std::vector<Vector>> key_embeddings;  // [bar][key]
  std::vector<Vector> bar_embeddings;               // mean over keys
};

struct LatentCode {
  Vector mu;
  Vector log_var;
  Vector z;
};

struct AugmentedEncoding {
  std::vector<std::vector<Vector>> yhat;        // [bar][key]
  std::vector<std::vector<Vector>> vertical;    // cv[bar][key]
  std::vector<Vector> horizontal;               // ch[bar]
  std::vector<tree::TreeMarginals> vertical_marginals;
  tree::TreeMarginals horizontal_marginals;
};

struct SampleResult {
  midi::KeyedRoll roll;             // canonical, duplicates removed
  std::size_t sounded_emissions = 0;
  std::size_t duplicate_emissions = 0;  // non-REST emissions equal to an earlier key at the same step

  double duplicate_rate() const {
    return sounded_emissions == 0 ? 0.0 : static_cast<double>(duplicate_emissions) / static_cast<double>(sounded_emissions);
  }
};

inline constexpr double kLogVarMin = -20.0;
inline constexpr double kLogVarMax = 4.0;

/// Picks one class per key in slot order; a sounded pitch already taken by an
/// earlier key falls through to that key's next-best class (ties: lowest
/// index). REST may repeat. Returns slot tokens (midi::kRest for REST).
inline std::vector<int> resolve_tokens(std::span<const Vector> dists) {
  std::vector<int> chosen;
  for (const Vector& d : dists) {
    const auto vocab = static_cast<int>(d.size());
    std::vector<int> order(static_cast<std::size_t>(vocab));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&d](int a, int b) { return d(a) > d(b); });
    int pick = vocab - 1;
    for (int c : order) {
      if (c == vocab - 1 || std::find(chosen.begin(), chosen.end(), c) == chosen.end()) {
        pick = c;
        break;
      }
    }
    chosen.push_back(pick);
  }
  const int rest = dists.empty() ? 0 : static_cast<int>(dists.front().size()) - 1;
  for (int& c : chosen) {
    if (c == rest) c = midi::kRest;
  }
  return chosen;
}

class VhVae {
 public:
  explicit VhVae(const ModelConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    build();
  }

  const ModelConfig& config() const { return cfg_; }
  ParameterStore& params() { return store_; }
  const ParameterStore& params() const { return store_; }

  // ---- differentiable building blocks ------------------------------------

  struct GridVars {
    std::vector<std::vector<Var>> keys;  // [bar][key]
    std::vector<Var> bars;
  };

  struct LatentVars {
    Var mu, log_var, z;
  };

  struct AugVars {
    std::vector<std::vector<Var>> yhat;
    std::vector<std::vector<Var>> cv;
    std::vector<Var> ch;
    std::vector<Var> vertical_marginals;  // stacked (K+1) x K per bar
    Var horizontal_marginals;             // stacked (U+1) x U
  };

  /// Class index of a slot token.
  int class_of(int token) const {
    if (token == midi::kRest) return cfg_.rest_class();
    if (token < 0 || token >= cfg_.n_pitches()) throw ConfigError("token " + std::to_string(token) + " outside pitch vocabulary");
    return token;
  }

  void check_shape(const midi::KeyedRoll& roll) const {
    if (roll.steps != cfg_.steps() || roll.keys != cfg_.n_keys) {
      throw ConfigError("window shape " + std::to_string(roll.steps) + "x" + std::to_string(roll.keys) +
                        " does not match model " + std::to_string(cfg_.steps()) + "x" + std::to_string(cfg_.n_keys));
    }
  }

  /// Encodes one key of one bar: final forward and backward states.
  Var encode_bar_key(Tape& t, const midi::KeyedRoll& roll, int bar, int key) {
    const int base = bar * cfg_.steps_per_bar;
    Var table = t.parameter(p(enc_embed_));
    std::vector<Var> xs;
    xs.reserve(static_cast<std::size_t>(cfg_.steps_per_bar));
    for (int s = 0; s < cfg_.steps_per_bar; ++s) xs.push_back(ops::lookup(table, class_of(roll.at(base + s, key))));
    Var zero = t.constant(Matrix::Zero(cfg_.enc_hidden, 1));
    LstmState fwd{zero, zero}, bwd{zero, zero};
    Var wf = t.parameter(p(enc_fwd_w_)), bf = t.parameter(p(enc_fwd_b_));
    Var wb = t.parameter(p(enc_bwd_w_)), bb = t.parameter(p(enc_bwd_b_));
    for (int s = 0; s < cfg_.steps_per_bar; ++s) {
      fwd = lstm_step(wf, bf, xs[static_cast<std::size_t>(s)], fwd);
      bwd = lstm_step(wb, bb, xs[static_cast<std::size_t>(cfg_.steps_per_bar - 1 - s)], bwd);
    }
    return ops::concat({fwd.h, bwd.h});
  }

  GridVars encode_grid(Tape& t, const midi::KeyedRoll& roll, int bars = -1) {
    if (bars < 0) bars = roll.bars();
    GridVars g;
    for (int u = 0; u < bars; ++u) {
      std::vector<Var> row;
      for (int j = 0; j < cfg_.n_keys; ++j) row.push_back(encode_bar_key(t, roll, u, j));
      g.bars.push_back(ops::mean_n(row));
      g.keys.push_back(std::move(row));
    }
    return g;
  }

  /// Posterior parameters from the mean bar embedding; log_var clamped to [-20, 4].
  std::pair<Var, Var> posterior(Tape& t, const GridVars& g) {
    Var pooled = ops::mean_n(g.bars);
    Var mu = ops::affine(t.parameter(p(mu_w_)), pooled, t.parameter(p(mu_b_)));
    Var lv = ops::clamp(ops::affine(t.parameter(p(lv_w_)), pooled, t.parameter(p(lv_b_))), kLogVarMin, kLogVarMax);
    return {mu, lv};
  }

  /// Reparameterized draw z = mu + exp(0.5 log_var) * eps.
  static Var reparameterize(Var mu, Var log_var, Rng& rng) {
    Tape& t = *mu.tape();
    Matrix eps(mu.rows(), 1);
    for (Eigen::Index i = 0; i < eps.rows(); ++i) eps(i, 0) = rng.normal();
    return ops::add(mu, ops::hadamard(ops::exp(ops::scale(log_var, 0.5)), t.constant(std::move(eps))));
  }

  AugVars attend(Tape& t, const GridVars& g, bool global) {
    AugVars a;
    tree::TreeAttentionVars vv = attention_vars(t, vatt_);
    tree::TreeAttentionVars hv = attention_vars(t, hatt_);
    const auto bars = g.bars.size();

    for (std::size_t u = 0; u < bars; ++u) {
      auto [theta, root] = tree::potentials(g.keys[u], vv, false);
      Var marg = tree::marginals(theta, root);
      Var ctx = tree::context_vectors(ops::hcat(g.keys[u]), marg);
      std::vector<Var> cols;
      for (int j = 0; j < cfg_.n_keys; ++j) cols.push_back(ops::column(ctx, j));
      a.cv.push_back(std::move(cols));
      a.vertical_marginals.push_back(marg);
    }

    auto [theta, root] = tree::potentials(g.bars, hv, !global);
    a.horizontal_marginals = tree::marginals(theta, root);
    Var hctx = tree::context_vectors(ops::hcat(g.bars), a.horizontal_marginals);
    for (std::size_t u = 0; u < bars; ++u) a.ch.push_back(ops::column(hctx, static_cast<Eigen::Index>(u)));

    for (std::size_t u = 0; u < bars; ++u) {
      std::vector<Var> row;
      for (int j = 0; j < cfg_.n_keys; ++j) {
        row.push_back(ops::concat({g.keys[u][static_cast<std::size_t>(j)], a.cv[u][static_cast<std::size_t>(j)], a.ch[u]}));
      }
      a.yhat.push_back(std::move(row));
    }
    return a;
  }

  struct DecoderState {
    LstmState conductor;
    std::vector<int> prev;  // previous class per key
  };

  DecoderState initial_decoder_state(Tape& t) {
    Var zero = t.constant(Matrix::Zero(cfg_.conductor_hidden, 1));
    return {LstmState{zero, zero}, std::vector<int>(static_cast<std::size_t>(cfg_.n_keys), cfg_.start_class())};
  }

  /// Decodes one bar. With `teacher`, previous tokens come from it; otherwise
  /// each emitted distribution is sampled. Appends distributions (step-major)
  /// to `dists` and emitted classes to `emitted` when non-null.
  void decode_bar(Tape& t, Var z, std::span<const Var> yhat_bar, int bar, DecoderState& st,
                  const midi::KeyedRoll* teacher, Rng* rng, std::vector<Var>& dists, std::vector<int>* emitted) {
    const int keys = cfg_.n_keys;
    Var cond_in = ops::concat({z, ops::mean_n(yhat_bar)});
    st.conductor = lstm_step(t.parameter(p(cond_w_)), t.parameter(p(cond_b_)), cond_in, st.conductor);
    Var e = st.conductor.h;

    Var h0 = ops::tanh(ops::affine(t.parameter(p(dinit_w_)), e, t.parameter(p(dinit_b_))));
    Var c0 = t.constant(Matrix::Zero(cfg_.dec_hidden, 1));
    Var wc = t.parameter(p(dec_wc_));
    Var w = t.parameter(p(dec_w_));
    Var b = t.parameter(p(dec_b_));
    Var out_w = t.parameter(p(out_w_));
    Var out_b = t.parameter(p(out_b_));
    Var table = t.parameter(p(dec_embed_));

    std::vector<LstmState> states(static_cast<std::size_t>(keys), LstmState{h0, c0});
    std::vector<Var> context_gates;
    for (int j = 0; j < keys; ++j) {
      context_gates.push_back(ops::add(ops::matmul(wc, ops::concat({e, yhat_bar[static_cast<std::size_t>(j)]})), b));
    }
    const int hidden = cfg_.dec_hidden;
    for (int s = 0; s < cfg_.steps_per_bar; ++s) {
      const int step = bar * cfg_.steps_per_bar + s;
      for (int j = 0; j < keys; ++j) {
        auto& state = states[static_cast<std::size_t>(j)];
        Var x = ops::lookup(table, st.prev[static_cast<std::size_t>(j)]);
        Var gates = ops::add(ops::matmul(w, ops::concat({x, state.h})), context_gates[static_cast<std::size_t>(j)]);
        Var ig = ops::sigmoid(ops::slice_rows(gates, 0, hidden));
        Var fg = ops::sigmoid(ops::slice_rows(gates, hidden, hidden));
        Var gg = ops::tanh(ops::slice_rows(gates, 2 * hidden, hidden));
        Var og = ops::sigmoid(ops::slice_rows(gates, 3 * hidden, hidden));
        state.c = ops::add(ops::hadamard(fg, state.c), ops::hadamard(ig, gg));
        state.h = ops::hadamard(og, ops::tanh(state.c));
        Var dist = ops::softmax(ops::affine(out_w, state.h, out_b));
        dists.push_back(dist);

        int next;
        if (teacher != nullptr) {
          next = class_of(teacher->at(step, j));
        } else {
          next = sample_class(dist.value(), *rng);
        }
        if (emitted) emitted->push_back(next);
        st.prev[static_cast<std::size_t>(j)] = next;
      }
    }
  }

  /// Teacher-forced pass over a full window.
  ModelOutputs forward(Tape& t, const midi::KeyedRoll& roll, Rng& rng, std::optional<bool> global = std::nullopt) {
    check_shape(roll);
    GridVars g = encode_grid(t, roll);
    auto [mu, lv] = posterior(t, g);
    Var z = reparameterize(mu, lv, rng);
    AugVars a = attend(t, g, global.value_or(cfg_.global_attention));
    ModelOutputs out;
    out.steps = roll.steps;
    out.keys = roll.keys;
    out.mu = mu;
    out.log_var = lv;
    DecoderState st = initial_decoder_state(t);
    for (int u = 0; u < cfg_.n_bars; ++u) decode_bar(t, z, a.yhat[static_cast<std::size_t>(u)], u, st, &roll, nullptr, out.dists, nullptr);
    return out;
  }

  /// Target classes of a roll, index t * keys + k.
  std::vector<int> targets(const midi::KeyedRoll& roll) const {
    std::vector<int> out;
    out.reserve(roll.slots.size());
    for (int v : roll.slots) out.push_back(class_of(v));
    return out;
  }

  // ---- plain-value operations ---------------------------------------------

  std::pair<EncodingGrid, LatentCode> encode(const midi::Window& window) {
    check_shape(window.roll);
    Tape t(false);
    GridVars g = encode_grid(t, window.roll);
    auto [mu, lv] = posterior(t, g);
    EncodingGrid grid;
    for (std::size_t u = 0; u < g.bars.size(); ++u) {
      std::vector<Vector> row;
      for (const Var& v : g.keys[u]) row.push_back(v.value().col(0));
      grid.key_embeddings.push_back(std::move(row));
      grid.bar_embeddings.push_back(g.bars[u].value().col(0));
    }
    LatentCode code;
    code.mu = mu.value().col(0);
    code.log_var = lv.value().col(0);
    code.z = code.mu;
    return {std::move(grid), std::move(code)};
  }

  static Vector sample_latent(const Vector& mu, const Vector& log_var, Rng& rng) {
    Vector z(mu.size());
    for (Eigen::Index i = 0; i < mu.size(); ++i) {
      const double lv = std::clamp(log_var(i), kLogVarMin, kLogVarMax);
      z(i) = mu(i) + std::exp(0.5 * lv) * rng.normal();
    }
    return z;
  }

  AugmentedEncoding attend(const EncodingGrid& grid, std::optional<bool> global = std::nullopt) {
    Tape t(false);
    GridVars g = constant_grid(t, grid);
    AugVars a = attend(t, g, global.value_or(cfg_.global_attention));
    AugmentedEncoding out;
    for (std::size_t u = 0; u < g.bars.size(); ++u) {
      std::vector<Vector> yh, cv;
      for (int j = 0; j < cfg_.n_keys; ++j) {
        yh.push_back(a.yhat[u][static_cast<std::size_t>(j)].value().col(0));
        cv.push_back(a.cv[u][static_cast<std::size_t>(j)].value().col(0));
      }
      out.yhat.push_back(std::move(yh));
      out.vertical.push_back(std::move(cv));
      out.horizontal.push_back(a.ch[u].value().col(0));
      out.vertical_marginals.push_back(tree::TreeMarginals::from_stacked(a.vertical_marginals[u].value()));
    }
    out.horizontal_marginals = tree::TreeMarginals::from_stacked(a.horizontal_marginals.value());
    return out;
  }

  /// Per-(step, key) distributions, index t * keys + k. Free-running when `teacher` is null.
  std::vector<Vector> decode(const Vector& z, const AugmentedEncoding& aug, const midi::KeyedRoll* teacher, Rng& rng) {
    if (static_cast<int>(aug.yhat.size()) != cfg_.n_bars) throw ConfigError("decode: augmented encoding has wrong bar count");
    if (teacher) check_shape(*teacher);
    Tape t(false);
    Var zv = t.constant(z);
    DecoderState st = initial_decoder_state(t);
    std::vector<Var> dists;
    for (int u = 0; u < cfg_.n_bars; ++u) {
      std::vector<Var> yhat;
      for (const Vector& v : aug.yhat[static_cast<std::size_t>(u)]) yhat.push_back(t.constant(v));
      decode_bar(t, zv, yhat, u, st, teacher, &rng, dists, nullptr);
    }
    std::vector<Vector> out;
    out.reserve(dists.size());
    for (const Var& d : dists) out.push_back(d.value().col(0));
    return out;
  }

  /// Teacher-forced reconstruction with per-step collision resolution; canonical output.
  midi::KeyedRoll reconstruct(const midi::Window& window, Rng& rng) {
    auto [grid, code] = encode(window);
    const Vector z = sample_latent(code.mu, code.log_var, rng);
    const AugmentedEncoding aug = attend(grid);
    const auto dists = decode(z, aug, &window.roll, rng);
    midi::KeyedRoll out(cfg_.steps(), cfg_.n_keys);
    for (int t = 0; t < out.steps; ++t) {
      std::span<const Vector> step(dists.data() + static_cast<std::ptrdiff_t>(t) * cfg_.n_keys, static_cast<std::size_t>(cfg_.n_keys));
      const auto tokens = resolve_tokens(step);
      for (int k = 0; k < cfg_.n_keys; ++k) out.at(t, k) = tokens[static_cast<std::size_t>(k)];
    }
    out.canonicalize();
    return out;
  }

  /// Free-running generation from the prior. The embedding of the bar being
  /// generated is taken from the previous generated bar (all-REST for the
  /// first bar); once a bar is generated its tokens are re-encoded.
  SampleResult sample(Rng& rng) {
    const int keys = cfg_.n_keys;
    Tape t(false);
    Matrix zm(cfg_.latent_dim, 1);
    for (Eigen::Index i = 0; i < zm.rows(); ++i) zm(i, 0) = rng.normal();
    Var z = t.constant(std::move(zm));

    midi::KeyedRoll raw(cfg_.steps(), keys);
    GridVars g;
    DecoderState st = initial_decoder_state(t);
    SampleResult res;
    for (int u = 0; u < cfg_.n_bars; ++u) {
      std::vector<Var> placeholder;
      for (int j = 0; j < keys; ++j) {
        placeholder.push_back(u == 0 ? encode_bar_key(t, raw, 0, j) : g.keys.back()[static_cast<std::size_t>(j)]);
      }
      GridVars partial = g;
      partial.bars.push_back(ops::mean_n(placeholder));
      partial.keys.push_back(placeholder);
      AugVars a = attend(t, partial, cfg_.global_attention);

      std::vector<Var> dists;
      std::vector<int> emitted;
      decode_bar(t, z, a.yhat.back(), u, st, nullptr, &rng, dists, &emitted);
      for (int s = 0; s < cfg_.steps_per_bar; ++s) {
        for (int j = 0; j < keys; ++j) {
          const int c = emitted[static_cast<std::size_t>(s * keys + j)];
          raw.at(u * cfg_.steps_per_bar + s, j) = c == cfg_.rest_class() ? midi::kRest : c;
        }
      }

      std::vector<Var> row;
      for (int j = 0; j < keys; ++j) row.push_back(encode_bar_key(t, raw, u, j));
      g.bars.push_back(ops::mean_n(row));
      g.keys.push_back(std::move(row));
    }

    res.roll = raw;
    for (int s = 0; s < raw.steps; ++s) {
      for (int j = 0; j < keys; ++j) {
        const int v = raw.at(s, j);
        if (v == midi::kRest) continue;
        ++res.sounded_emissions;
        bool dup = false;
        for (int i = 0; i < j; ++i) dup = dup || raw.at(s, i) == v;
        if (dup) {
          ++res.duplicate_emissions;
          res.roll.at(s, j) = midi::kRest;
        }
      }
    }
    res.roll.canonicalize();
    return res;
  }

  /// Tree marginals of a window for inspection.
  AugmentedEncoding attention_of(const midi::Window& window, std::optional<bool> global = std::nullopt) {
    return attend(encode(window).first, global);
  }

 private:
  static int sample_class(const Matrix& dist, Rng& rng) {
    const double u = rng.uniform01();
    double acc = 0.0;
    for (Eigen::Index i = 0; i < dist.rows(); ++i) {
      acc += dist(i, 0);
      if (u < acc) return static_cast<int>(i);
    }
    return static_cast<int>(dist.rows() - 1);
  }

  struct AttentionIds {
    std::size_t w1, w2, s, b, s_root, b_root;
  };

  Parameter& p(std::size_t i) { return store_[i]; }

  tree::TreeAttentionVars attention_vars(Tape& t, const AttentionIds& ids) {
    return {t.parameter(p(ids.w1)), t.parameter(p(ids.w2)), t.parameter(p(ids.s)),
            t.parameter(p(ids.b)),  t.parameter(p(ids.s_root)), t.parameter(p(ids.b_root))};
  }

  GridVars constant_grid(Tape& t, const EncodingGrid& grid) {
    GridVars g;
    for (std::size_t u = 0; u < grid.key_embeddings.size(); ++u) {
      std::vector<Var> row;
      for (const Vector& v : grid.key_embeddings[u]) row.push_back(t.constant(v));
      g.bars.push_back(ops::mean_n(row));
      g.keys.push_back(std::move(row));
    }
    return g;
  }

  void build() {
    Rng rng(cfg_.seed);
    const int vocab = cfg_.pitch_vocab;
    const int e = cfg_.embed_dim, he = cfg_.enc_hidden, d = cfg_.enc_dim(), zd = cfg_.latent_dim;
    const int a = cfg_.attn_hidden, hc = cfg_.conductor_hidden, hd = cfg_.dec_hidden, aug = cfg_.augmented_dim();

    auto uniform = [&rng](int rows, int cols, double k) {
      Matrix m(rows, cols);
      for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = rng.uniform(-k, k);
      return m;
    };
    auto add = [&](const std::string& name, int rows, int cols, double k) { return store_.add(name, uniform(rows, cols, k)); };
    auto lstm_bias = [&](const std::string& name, int hidden, double k) {
      Matrix b = uniform(4 * hidden, 1, k);
      b.middleRows(hidden, hidden).array() += 1.0;
      return store_.add(name, std::move(b));
    };
    auto inv_sqrt = [](int n) { return 1.0 / std::sqrt(static_cast<double>(n)); };

    enc_embed_ = add("enc.embed", vocab, e, 0.5);
    enc_fwd_w_ = add("enc.fwd.w", 4 * he, e + he, inv_sqrt(he));
    enc_fwd_b_ = lstm_bias("enc.fwd.b", he, inv_sqrt(he));
    enc_bwd_w_ = add("enc.bwd.w", 4 * he, e + he, inv_sqrt(he));
    enc_bwd_b_ = lstm_bias("enc.bwd.b", he, inv_sqrt(he));
    mu_w_ = add("enc.mu.w", zd, d, inv_sqrt(d));
    mu_b_ = add("enc.mu.b", zd, 1, inv_sqrt(d));
    lv_w_ = add("enc.logvar.w", zd, d, inv_sqrt(d));
    lv_b_ = add("enc.logvar.b", zd, 1, inv_sqrt(d));
    for (auto [prefix, ids] : {std::pair{"vatt", &vatt_}, {"hatt", &hatt_}}) {
      const std::string pre(prefix);
      ids->w1 = add(pre + ".w1", a, d, inv_sqrt(d));
      ids->w2 = add(pre + ".w2", a, d, inv_sqrt(d));
      ids->s = add(pre + ".s", a, 1, inv_sqrt(a));
      ids->b = add(pre + ".b", a, 1, inv_sqrt(d));
      ids->s_root = add(pre + ".s_root", a, 1, inv_sqrt(a));
      ids->b_root = add(pre + ".b_root", a, 1, inv_sqrt(d));
    }
    cond_w_ = add("cond.w", 4 * hc, zd + aug + hc, inv_sqrt(hc));
    cond_b_ = lstm_bias("cond.b", hc, inv_sqrt(hc));
    dinit_w_ = add("dec.init.w", hd, hc, inv_sqrt(hc));
    dinit_b_ = add("dec.init.b", hd, 1, inv_sqrt(hc));
    dec_embed_ = add("dec.embed", vocab + 1, e, 0.5);
    dec_wc_ = add("dec.ctx.w", 4 * hd, hc + aug, inv_sqrt(hd));
    dec_w_ = add("dec.w", 4 * hd, e + hd, inv_sqrt(hd));
    dec_b_ = lstm_bias("dec.b", hd, inv_sqrt(hd));
    out_w_ = add("dec.out.w", vocab, hd, inv_sqrt(hd));
    out_b_ = add("dec.out.b", vocab, 1, inv_sqrt(hd));
  }

  ModelConfig cfg_;
  ParameterStore store_;
  std::size_t enc_embed_{}, enc_fwd_w_{}, enc_fwd_b_{}, enc_bwd_w_{}, enc_bwd_b_{};
  std::size_t mu_w_{}, mu_b_{}, lv_w_{}, lv_b_{};
  AttentionIds vatt_{}, hatt_{};
  std::size_t cond_w_{}, cond_b_{}, dinit_w_{}, dinit_b_{}, dec_embed_{}, dec_wc_{}, dec_w_{}, dec_b_{}, out_w_{}, out_b_{};
};

}  // namespace vhvae
