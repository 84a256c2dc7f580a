// vhvae: ingest, train, reconstruct, sample, eval and analyze from the command line.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 data error.

#include "vhvae/checkpoint.hpp"
#include "vhvae/eval_metrics.hpp"
#include "vhvae/midi_io.hpp"
#include "vhvae/model.hpp"
#include "vhvae/run_config.hpp"
#include "vhvae/theory_analysis.hpp"
#include "vhvae/trainer.hpp"

#include <CLI11.hpp>

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace fs = std::filesystem;
using namespace vhvae;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;

// Thrown for problems with input data; maps to exit code 2.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir = ".";
  std::vector<std::string> overrides;
};

RunConfig resolve_config(const Globals& g) {
  RunConfig rc;
  if (!g.config_path.empty()) rc.load_file(g.config_path);
  for (const auto& kv_text : g.overrides) {
    const auto eq = kv_text.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + kv_text + "'");
    rc.apply(kv::trim(kv_text.substr(0, eq)), kv::trim(kv_text.substr(eq + 1)));
  }
  if (g.seed) rc.set_seed(*g.seed);
  rc.validate();
  return rc;
}

fs::path out_path(const Globals& g, const std::string& name) {
  fs::create_directories(g.out_dir);
  return fs::path(g.out_dir) / name;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

std::string fixed6(double v) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(6) << v;
  return s.str();
}

std::string rate_text(const std::optional<double>& r) { return r ? fixed6(*r) : std::string("nan"); }

std::string metrics_line(const ConfusionCounts& c) {
  const Rates r = rates(c);
  return "ppv=" + rate_text(r.ppv) + " tpr=" + rate_text(r.tpr) + " npv=" + rate_text(r.npv) + " tnr=" + rate_text(r.tnr) +
         " tp=" + std::to_string(c.tp) + " fp=" + std::to_string(c.fp) + " fn=" + std::to_string(c.fn) +
         " tn=" + std::to_string(c.tn);
}

int worker_count(std::size_t jobs) {
  unsigned n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("VHVAE_THREADS")) {
    try {
      const long v = std::stol(env);
      if (v < 1) throw std::invalid_argument(env);
      n = static_cast<unsigned>(v);
    } catch (const std::exception&) {
      throw ConfigError(std::string("VHVAE_THREADS must be a positive integer, got '") + env + "'");
    }
  }
  return static_cast<int>(std::min<std::size_t>(n, std::max<std::size_t>(jobs, 1)));
}

/// Loads every manifest entry into windows. Files are parsed in parallel;
/// results are concatenated in manifest order.
std::vector<midi::Window> windows_from_manifest(const std::string& manifest, const ModelConfig& cfg) {
  std::vector<std::string> paths;
  try {
    paths = midi::read_manifest(manifest);
  } catch (const std::runtime_error& e) {
    throw DataError(e.what());
  }
  const fs::path base = fs::path(manifest).parent_path();
  std::vector<std::vector<midi::Window>> per_file(paths.size());
  std::vector<std::string> errors(paths.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < paths.size(); i = next++) {
      fs::path p = paths[i];
      if (p.is_relative()) p = base / p;
      try {
        std::vector<std::string> warnings;
        const midi::PianoRoll roll = midi::load_piano_roll(p.string(), &warnings);
        per_file[i] = midi::window(midi::decompose_keys(roll, cfg.n_keys), cfg.n_bars, paths[i]);
        for (const auto& w : warnings) errors[i] += "warning: " + p.string() + ": " + w + "\n";
      } catch (const std::exception& e) {
        errors[i] = "error: " + p.string() + ": " + e.what() + "\n";
      }
    }
  };
  std::vector<std::thread> pool;
  const int workers = worker_count(paths.size());
  for (int i = 1; i < workers; ++i) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();

  std::vector<midi::Window> out;
  for (std::size_t i = 0; i < paths.size(); ++i) {
    if (!errors[i].empty()) {
      std::cerr << errors[i];
      if (errors[i].rfind("error:", 0) == 0) throw DataError("failed to ingest " + paths[i]);
    }
    for (auto& w : per_file[i]) {
      for (int& v : w.roll.slots) {
        if (v >= cfg.n_pitches()) throw DataError(w.source_id + ": pitch index " + std::to_string(v) + " outside pitch_vocab");
      }
      out.push_back(std::move(w));
    }
  }
  return out;
}

std::vector<midi::Window> load_corpus(const std::string& windows, const std::string& manifest, const ModelConfig& cfg) {
  std::vector<midi::Window> corpus;
  if (!windows.empty()) {
    try {
      corpus = load_windows(windows);
    } catch (const std::runtime_error& e) {
      throw DataError(windows + ": " + e.what());
    }
  } else if (!manifest.empty()) {
    corpus = windows_from_manifest(manifest, cfg);
  } else {
    throw ConfigError("provide --windows CACHE or --manifest FILE");
  }
  for (const auto& w : corpus) {
    if (w.roll.steps != cfg.steps() || w.roll.keys != cfg.n_keys) {
      throw DataError(w.source_id + ": window shape does not match n_bars/n_keys of the model");
    }
  }
  return corpus;
}

VhVae open_checkpoint(const std::string& path) {
  if (path.empty()) throw ConfigError("--checkpoint is required");
  try {
    return load_checkpoint(path);
  } catch (const CheckpointError& e) {
    throw DataError(path + ": " + e.what());
  }
}

std::vector<midi::Window> piece_windows(const std::string& path, const ModelConfig& cfg) {
  const midi::PianoRoll roll = midi::load_piano_roll(path);
  auto ws = midi::window(midi::decompose_keys(roll, cfg.n_keys), cfg.n_bars, fs::path(path).filename().string());
  if (ws.empty()) throw DataError(path + ": no non-silent window of " + std::to_string(cfg.n_bars) + " bars");
  for (const auto& w : ws) {
    for (int v : w.roll.slots) {
      if (v >= cfg.n_pitches()) throw DataError(path + ": pitch outside the model's pitch_vocab");
    }
  }
  return ws;
}

// ---- commands ------------------------------------------------------------------

int cmd_ingest(const Globals& g, const std::string& manifest, const std::string& name) {
  const RunConfig rc = resolve_config(g);
  const auto windows = windows_from_manifest(manifest, rc.model);
  const fs::path path = out_path(g, name);
  save_windows(windows, path.string());
  std::cout << "windows=" << windows.size() << " cache=" << path.string() << "\n";
  return 0;
}

int cmd_train(const Globals& g, const std::string& windows, const std::string& manifest) {
  const RunConfig rc = resolve_config(g);
  auto corpus = load_corpus(windows, manifest, rc.model);
  if (corpus.empty()) throw DataError("corpus has no windows");
  std::vector<midi::Window> train_set = corpus, held_out;
  if (rc.holdout_fraction > 0.0 && corpus.size() >= 2) {
    std::tie(train_set, held_out) = split_corpus<midi::Window>(corpus, 1.0 - rc.holdout_fraction, rc.train.seed);
  }
  VhVae model(rc.model);
  TrainResult res;
  try {
    res = train(model, train_set, held_out, rc.train);
  } catch (const TrainingError& e) {
    throw DataError(e.what());
  }
  const fs::path ckpt = out_path(g, "model.ckpt");
  save_checkpoint(model, ckpt.string());
  std::ostringstream tel;
  write_telemetry(tel, res.telemetry);
  write_text(out_path(g, "telemetry.csv"), tel.str());
  std::string split = "split,source_id\n";
  for (const auto& w : train_set) split += "train," + w.source_id + "\n";
  for (const auto& w : held_out) split += "test," + w.source_id + "\n";
  write_text(out_path(g, "split.csv"), split);
  write_text(out_path(g, "run_config.txt"), rc.to_text());
  std::cout << "steps=" << res.steps << " train_windows=" << train_set.size() << " test_windows=" << held_out.size()
            << " checkpoint=" << ckpt.string() << "\n";
  return 0;
}

int cmd_reconstruct(const Globals& g, const std::string& checkpoint, const std::string& midi_in, const std::string& name) {
  const RunConfig rc = resolve_config(g);
  VhVae model = open_checkpoint(checkpoint);
  const ModelConfig& mc = model.config();
  const auto ws = piece_windows(midi_in, mc);
  Rng rng(rc.sample_seed);
  midi::KeyedRoll joined(static_cast<int>(ws.size()) * mc.steps(), mc.n_keys);
  ConfusionCounts total;
  for (std::size_t i = 0; i < ws.size(); ++i) {
    const midi::KeyedRoll rec = model.reconstruct(ws[i], rng);
    total += confusion(midi::recompose(rec, mc.n_pitches()), midi::recompose(ws[i].roll, mc.n_pitches()));
    std::copy(rec.slots.begin(), rec.slots.end(), joined.slots.begin() + static_cast<std::ptrdiff_t>(i * rec.slots.size()));
  }
  const fs::path out = out_path(g, name);
  const auto bytes = midi::write_midi(midi::recompose(joined, mc.n_pitches()), rc.ppq);
  write_bytes(out.string(), bytes);
  std::cout << metrics_line(total) << " windows=" << ws.size() << " midi=" << out.string() << "\n";
  return 0;
}

int cmd_sample(const Globals& g, const std::string& checkpoint, int count, const std::string& name) {
  const RunConfig rc = resolve_config(g);
  VhVae model = open_checkpoint(checkpoint);
  const ModelConfig& mc = model.config();
  Rng rng(rc.sample_seed);
  midi::KeyedRoll joined(count * mc.steps(), mc.n_keys);
  std::size_t sounded = 0, dups = 0;
  for (int i = 0; i < count; ++i) {
    const SampleResult s = model.sample(rng);
    sounded += s.sounded_emissions;
    dups += s.duplicate_emissions;
    std::copy(s.roll.slots.begin(), s.roll.slots.end(), joined.slots.begin() + static_cast<std::ptrdiff_t>(i) * static_cast<std::ptrdiff_t>(s.roll.slots.size()));
  }
  const fs::path out = out_path(g, name);
  write_bytes(out.string(), midi::write_midi(midi::recompose(joined, mc.n_pitches()), rc.ppq));
  const double rate = sounded == 0 ? 0.0 : static_cast<double>(dups) / static_cast<double>(sounded);
  std::cout << "windows=" << count << " duplicate_rate=" << fixed6(rate) << " midi=" << out.string() << "\n";
  return 0;
}

int cmd_eval(const Globals& g, const std::string& checkpoint, const std::string& windows, const std::string& manifest) {
  const RunConfig rc = resolve_config(g);
  VhVae model = open_checkpoint(checkpoint);
  const auto corpus = load_corpus(windows, manifest, model.config());
  if (corpus.empty()) throw DataError("test set has no windows");
  const ConfusionCounts c = evaluate_reconstruction(model, corpus, rc.sample_seed);
  const std::string line = metrics_line(c);
  write_text(out_path(g, "eval.txt"), line + "\n");
  std::cout << line << " windows=" << corpus.size() << "\n";
  return 0;
}

int cmd_analyze_iv(const Globals& g, const std::vector<std::string>& inputs) {
  resolve_config(g);
  std::vector<midi::PianoRoll> rolls;
  for (const auto& p : inputs) rolls.push_back(midi::load_piano_roll(p));
  const auto prof = theory::chord_profile(rolls);
  const std::string csv = theory::profile_csv(prof);
  write_text(out_path(g, "interval_vectors.csv"), csv);
  write_text(out_path(g, "interval_counts.csv"), theory::profile_counts_csv(prof));
  std::cout << csv;
  return 0;
}

int cmd_analyze_cof(const Globals& g, const std::string& checkpoint) {
  resolve_config(g);
  VhVae model = open_checkpoint(checkpoint);
  const auto chords = theory::all_triads();
  theory::ChordEmbedding emb;
  try {
    emb = theory::chord_embeddings(model, chords);
  } catch (const DegenerateInputError& e) {
    throw DataError(e.what());
  }
  write_text(out_path(g, "cof.csv"), theory::embedding_csv(emb.points));
  write_text(out_path(g, "cof.svg"), theory::embedding_svg(emb.points));
  const auto ratio = theory::fifths_neighbor_ratio(emb.points);
  std::cout << "chords=" << emb.points.size() << " explained_variance=" << fixed6(emb.pca.explained_variance[0]) << ","
            << fixed6(emb.pca.explained_variance[1]) << " fifths_neighbor_ratio=" << (ratio ? fixed6(*ratio) : "nan") << "\n";
  return 0;
}

int cmd_analyze_attention(const Globals& g, const std::string& checkpoint, const std::string& midi_in, int window_index) {
  resolve_config(g);
  VhVae model = open_checkpoint(checkpoint);
  const auto ws = piece_windows(midi_in, model.config());
  if (window_index < 0 || window_index >= static_cast<int>(ws.size())) {
    throw ConfigError("--window must be in [0, " + std::to_string(ws.size()) + ")");
  }
  const auto aug = model.attention_of(ws[static_cast<std::size_t>(window_index)]);
  const std::string ckpt_name = fs::path(checkpoint).filename().string();
  const auto h = theory::export_attention(aug.horizontal_marginals, {model.config().seed, ckpt_name, "horizontal", "bar"});
  write_text(out_path(g, "attention_horizontal.csv"), h.csv);
  write_text(out_path(g, "attention_horizontal.dot"), h.dot);
  for (std::size_t u = 0; u < aug.vertical_marginals.size(); ++u) {
    const auto v = theory::export_attention(aug.vertical_marginals[u], {model.config().seed, ckpt_name, "vertical", "key"});
    write_text(out_path(g, "attention_vertical_bar" + std::to_string(u) + ".csv"), v.csv);
    write_text(out_path(g, "attention_vertical_bar" + std::to_string(u) + ".dot"), v.dot);
  }
  std::cout << "bars=" << aug.vertical_marginals.size() << " window=" << window_index << "\n";
  return 0;
}

std::string config_help() {
  return "\nConfig keys (file lines or --set key=value), with defaults:\n" + RunConfig{}.to_text() +
         "\nEnvironment: VHVAE_THREADS caps parallel ingest workers.\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"VH-VAE: tree-attention music VAE tools"};
  app.require_subcommand(1);
  app.fallthrough();
  app.footer(config_help());
  Globals g;
  app.add_option("--config", g.config_path, "Config file of key=value lines");
  app.add_option("--seed", g.seed, "Seed for initialization, training and sampling");
  app.add_option("--out", g.out_dir, "Output directory")->capture_default_str();
  app.add_option("--set", g.overrides, "Override a config key (key=value), repeatable");

  std::string manifest, windows, checkpoint, midi_in;
  std::string cache_name, rec_name, sample_name;
  std::vector<std::string> inputs;
  int count = 1, window_index = 0;

  auto* ingest = app.add_subcommand("ingest", "Parse, quantize and window a corpus into a cache file");
  ingest->add_option("manifest", manifest, "File listing one MIDI path per line")->required();
  ingest->add_option("--name", cache_name, "Cache file name inside --out")->default_val("windows.bin");

  auto* trn = app.add_subcommand("train", "Train a model; writes model.ckpt and telemetry.csv");
  trn->add_option("--windows", windows, "Window cache from ingest");
  trn->add_option("--manifest", manifest, "Corpus manifest (alternative to --windows)");

  auto* rec = app.add_subcommand("reconstruct", "Reconstruct a MIDI file and print ppv/tpr/npv/tnr");
  rec->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
  rec->add_option("midi", midi_in, "Input MIDI file")->required();
  rec->add_option("--name", rec_name, "Output MIDI name inside --out")->default_val("reconstruction.mid");

  auto* smp = app.add_subcommand("sample", "Sample windows from the prior to MIDI");
  smp->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
  smp->add_option("--count", count, "Number of windows")->check(CLI::PositiveNumber)->default_val(1);
  smp->add_option("--name", sample_name, "Output MIDI name inside --out")->default_val("sample.mid");

  auto* evl = app.add_subcommand("eval", "Pooled confusion metrics over a test set");
  evl->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
  evl->add_option("--windows", windows, "Window cache");
  evl->add_option("--manifest", manifest, "Test manifest");

  auto* ana = app.add_subcommand("analyze", "Music-theory and attention analyses");
  ana->require_subcommand(1);
  auto* iv = ana->add_subcommand("iv", "Interval-vector profile by chord quality");
  iv->add_option("inputs", inputs, "MIDI files")->required();
  auto* cof = ana->add_subcommand("cof", "PCA of triad latents with circle-of-fifths diagnostic");
  cof->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
  auto* att = ana->add_subcommand("attention", "Export attention marginals as CSV and DOT");
  att->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
  att->add_option("midi", midi_in, "Input MIDI file")->required();
  att->add_option("--window", window_index, "Window index within the piece")->default_val(0);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*ingest) return cmd_ingest(g, manifest, cache_name);
    if (*trn) return cmd_train(g, windows, manifest);
    if (*rec) return cmd_reconstruct(g, checkpoint, midi_in, rec_name);
    if (*smp) return cmd_sample(g, checkpoint, count, sample_name);
    if (*evl) return cmd_eval(g, checkpoint, windows, manifest);
    if (*iv) return cmd_analyze_iv(g, inputs);
    if (*cof) return cmd_analyze_cof(g, checkpoint);
    if (*att) return cmd_analyze_attention(g, checkpoint, midi_in, window_index);
  } catch (const ConfigError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}
