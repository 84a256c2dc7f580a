#pragma once

#include "vhvae/model.hpp"
#include "vhvae/pca.hpp"
#include "vhvae/tree_attention.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace vhvae::theory {

inline constexpr std::array<const char*, 12> kPitchNames = {"C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B"};

/// 12-bit mask over pitch classes, bit i = class i (C = 0).
struct PitchClassSet {
  std::uint16_t mask = 0;

  static PitchClassSet of(std::initializer_list<int> classes) {
    PitchClassSet s;
    for (int c : classes) s.add(c);
    return s;
  }
  void add(int pc) { mask |= static_cast<std::uint16_t>(1u << (((pc % 12) + 12) % 12)); }
  bool contains(int pc) const { return (mask >> pc) & 1u; }
  int size() const { return std::popcount(mask); }
  bool empty() const { return mask == 0; }

  PitchClassSet transposed(int k) const {
    PitchClassSet s;
    for (int pc = 0; pc < 12; ++pc) {
      if (contains(pc)) s.add(pc + k);
    }
    return s;
  }
  PitchClassSet inverted() const {
    PitchClassSet s;
    for (int pc = 0; pc < 12; ++pc) {
      if (contains(pc)) s.add(-pc);
    }
    return s;
  }

  friend bool operator==(const PitchClassSet&, const PitchClassSet&) = default;
};

using IntervalVector = std::array<int, 6>;

inline IntervalVector interval_vector(const PitchClassSet& s) {
  if (s.empty()) throw std::invalid_argument("interval_vector: empty pitch-class set");
  IntervalVector v{};
  for (int a = 0; a < 12; ++a) {
    if (!s.contains(a)) continue;
    for (int b = a + 1; b < 12; ++b) {
      if (!s.contains(b)) continue;
      const int d = std::min(b - a, 12 - (b - a));
      ++v[static_cast<std::size_t>(d - 1)];
    }
  }
  return v;
}

enum class Quality { Major, Minor, Other };

struct TriadClass {
  Quality quality = Quality::Other;
  int root = -1;  // pitch class, -1 for Other

  friend bool operator==(const TriadClass&, const TriadClass&) = default;
};

inline TriadClass classify_triad(const PitchClassSet& s) {
  const auto major = PitchClassSet::of({0, 4, 7});
  const auto minor = PitchClassSet::of({0, 3, 7});
  for (int r = 0; r < 12; ++r) {
    if (s == major.transposed(r)) return {Quality::Major, r};
    if (s == minor.transposed(r)) return {Quality::Minor, r};
  }
  return {};
}

inline const char* quality_name(Quality q) {
  switch (q) {
    case Quality::Major: return "major";
    case Quality::Minor: return "minor";
    default: return "other";
  }
}

inline std::string chord_name(const TriadClass& c) {
  if (c.quality == Quality::Other) return "other";
  return std::string(kPitchNames[static_cast<std::size_t>(c.root)]) + (c.quality == Quality::Minor ? "m" : "");
}

/// The 12 major triads followed by the 12 minor triads, rooted C upward.
inline std::vector<PitchClassSet> all_triads() {
  std::vector<PitchClassSet> out;
  for (int r = 0; r < 12; ++r) out.push_back(PitchClassSet::of({0, 4, 7}).transposed(r));
  for (int r = 0; r < 12; ++r) out.push_back(PitchClassSet::of({0, 3, 7}).transposed(r));
  return out;
}

inline int pitch_class_of_index(int pitch_index) { return (midi::kLowestNote + pitch_index) % 12; }

// ---- chord profiles ----------------------------------------------------------

/// Exact per-quality tallies; the mean of coefficient i is sums[i] / count.
struct QualityProfile {
  std::uint64_t count = 0;
  std::array<std::uint64_t, 6> sums{};

  std::string mean_text(std::size_t i) const {
    if (count == 0) return "0";
    const std::uint64_t g = std::gcd(sums[i], count);
    const std::uint64_t num = sums[i] / g, den = count / g;
    return den == 1 ? std::to_string(num) : std::to_string(num) + "/" + std::to_string(den);
  }
  double mean(std::size_t i) const { return count == 0 ? 0.0 : static_cast<double>(sums[i]) / static_cast<double>(count); }
};

struct ChordProfile {
  QualityProfile major, minor, other;

  const QualityProfile& of(Quality q) const { return q == Quality::Major ? major : q == Quality::Minor ? minor : other; }
  QualityProfile& of(Quality q) { return q == Quality::Major ? major : q == Quality::Minor ? minor : other; }
};

inline ChordProfile chord_profile(std::span<const midi::PianoRoll> rolls) {
  if (rolls.empty()) throw std::invalid_argument("chord_profile: no rolls");
  ChordProfile prof;
  for (const auto& roll : rolls) {
    for (int t = 0; t < roll.steps; ++t) {
      const auto act = roll.active(t);
      if (act.size() < 2) continue;
      PitchClassSet s;
      for (int p : act) s.add(pitch_class_of_index(p));
      const IntervalVector v = interval_vector(s);
      QualityProfile& q = prof.of(classify_triad(s).quality);
      ++q.count;
      for (std::size_t i = 0; i < 6; ++i) q.sums[i] += static_cast<std::uint64_t>(v[i]);
    }
  }
  return prof;
}

/// CSV with header quality,v1..v6 and one row per quality.
inline std::string profile_csv(const ChordProfile& p) {
  std::ostringstream out;
  out << "quality,v1,v2,v3,v4,v5,v6\n";
  for (Quality q : {Quality::Major, Quality::Minor, Quality::Other}) {
    out << quality_name(q);
    for (std::size_t i = 0; i < 6; ++i) out << ',' << p.of(q).mean_text(i);
    out << '\n';
  }
  return out.str();
}

inline std::string profile_counts_csv(const ChordProfile& p) {
  std::ostringstream out;
  out << "quality,count\n";
  for (Quality q : {Quality::Major, Quality::Minor, Quality::Other}) out << quality_name(q) << ',' << p.of(q).count << '\n';
  return out.str();
}

// ---- chord embeddings ----------------------------------------------------------

/// A triad held for the whole window. Pitches sit in octave 4 (C4 = MIDI 60)
/// when the vocabulary covers it, otherwise at the lowest octave of the vocabulary.
inline midi::Window render_chord(const PitchClassSet& chord, const ModelConfig& cfg) {
  const int pitches = cfg.n_pitches();
  const int base = pitches >= 60 - midi::kLowestNote + 12 ? 60 - midi::kLowestNote : 0;
  if (base + 12 > pitches) throw ConfigError("render_chord: pitch vocabulary smaller than one octave");
  midi::PianoRoll roll(cfg.steps(), pitches);
  for (int pc = 0; pc < 12; ++pc) {
    if (!chord.contains(pc)) continue;
    // index of the first pitch at or above `base` with this class
    int idx = base;
    while (pitch_class_of_index(idx) != pc) ++idx;
    for (int t = 0; t < roll.steps; ++t) roll.set(t, idx);
  }
  midi::Window w;
  w.bars = cfg.n_bars;
  w.roll = midi::decompose_keys(roll, cfg.n_keys);
  w.source_id = "chord";
  return w;
}

struct ChordPoint {
  std::string label;
  TriadClass chord;
  double x = 0.0, y = 0.0;
};

struct ChordEmbedding {
  std::vector<ChordPoint> points;
  Pca2d pca;
};

inline ChordEmbedding chord_embeddings(VhVae& model, std::span<const PitchClassSet> chords) {
  std::vector<Vector> mus;
  for (const auto& c : chords) mus.push_back(model.encode(render_chord(c, model.config())).second.mu);
  ChordEmbedding out;
  out.pca = pca_2d(mus);
  for (std::size_t i = 0; i < chords.size(); ++i) {
    ChordPoint p;
    p.chord = classify_triad(chords[i]);
    p.label = chord_name(p.chord);
    p.x = out.pca.projections[i][0];
    p.y = out.pca.projections[i][1];
    out.points.push_back(std::move(p));
  }
  return out;
}

/// Mean distance between same-quality chords a fifth apart divided by the mean
/// distance over all other pairs. Values below 1 mean circle-of-fifths
/// neighbors sit closer together than average. Empty if either group is empty.
inline std::optional<double> fifths_neighbor_ratio(std::span<const ChordPoint> pts) {
  double near_sum = 0.0, far_sum = 0.0;
  std::size_t near_n = 0, far_n = 0;
  for (std::size_t a = 0; a < pts.size(); ++a) {
    for (std::size_t b = a + 1; b < pts.size(); ++b) {
      const auto& ca = pts[a].chord;
      const auto& cb = pts[b].chord;
      const double d = std::hypot(pts[a].x - pts[b].x, pts[a].y - pts[b].y);
      const int diff = ((ca.root - cb.root) % 12 + 12) % 12;
      const bool neighbors = ca.quality != Quality::Other && ca.quality == cb.quality && (diff == 5 || diff == 7);
      if (neighbors) {
        near_sum += d;
        ++near_n;
      } else {
        far_sum += d;
        ++far_n;
      }
    }
  }
  if (near_n == 0 || far_n == 0 || far_sum == 0.0) return std::nullopt;
  return (near_sum / static_cast<double>(near_n)) / (far_sum / static_cast<double>(far_n));
}

inline std::string embedding_csv(std::span<const ChordPoint> pts) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(6) << "chord,quality,x,y\n";
  for (const auto& p : pts) out << p.label << ',' << quality_name(p.chord.quality) << ',' << p.x << ',' << p.y << '\n';
  return out.str();
}

inline std::string embedding_svg(std::span<const ChordPoint> pts) {
  constexpr double size = 600.0, margin = 40.0;
  double lo_x = 0, hi_x = 0, lo_y = 0, hi_y = 0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    lo_x = i == 0 ? pts[i].x : std::min(lo_x, pts[i].x);
    hi_x = i == 0 ? pts[i].x : std::max(hi_x, pts[i].x);
    lo_y = i == 0 ? pts[i].y : std::min(lo_y, pts[i].y);
    hi_y = i == 0 ? pts[i].y : std::max(hi_y, pts[i].y);
  }
  const double sx = hi_x > lo_x ? (size - 2 * margin) / (hi_x - lo_x) : 0.0;
  const double sy = hi_y > lo_y ? (size - 2 * margin) / (hi_y - lo_y) : 0.0;
  std::ostringstream out;
  out << std::fixed << std::setprecision(2);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"600\" height=\"600\" viewBox=\"0 0 600 600\">\n";
  out << "  <rect width=\"600\" height=\"600\" fill=\"white\"/>\n";
  for (const auto& p : pts) {
    const double cx = margin + (p.x - lo_x) * sx;
    const double cy = size - margin - (p.y - lo_y) * sy;
    const char* fill = p.chord.quality == Quality::Major ? "#c0392b" : p.chord.quality == Quality::Minor ? "#2c6fbb" : "#777777";
    out << "  <circle cx=\"" << cx << "\" cy=\"" << cy << "\" r=\"5\" fill=\"" << fill << "\"/>\n";
    out << "  <text x=\"" << cx + 7 << "\" y=\"" << cy + 4 << "\" font-size=\"12\" font-family=\"sans-serif\">" << p.label
        << "</text>\n";
  }
  out << "</svg>\n";
  return out.str();
}

// ---- attention export ------------------------------------------------------------

struct AttentionExport {
  std::string csv;
  std::string dot;
};

struct AttentionHeader {
  std::uint64_t seed = 0;
  std::string checkpoint;
  std::string kind;        // "vertical" or "horizontal"
  std::string node_label;  // "bar" or "key"
};

/// CSV rows are parents (ROOT first), columns are children. The DOT graph
/// draws the per-child argmax parent; that choice is not guaranteed to be a tree.
inline AttentionExport export_attention(const tree::TreeMarginals& m, const AttentionHeader& h) {
  const auto n = static_cast<int>(m.n());
  AttentionExport out;

  std::ostringstream csv;
  csv << std::fixed << std::setprecision(6) << "parent";
  for (int j = 0; j < n; ++j) csv << ',' << h.node_label << j;
  csv << "\nROOT";
  for (int j = 0; j < n; ++j) csv << ',' << m.marg_root(j);
  csv << '\n';
  for (int i = 0; i < n; ++i) {
    csv << h.node_label << i;
    for (int j = 0; j < n; ++j) csv << ',' << m.marg(i, j);
    csv << '\n';
  }
  out.csv = csv.str();

  const auto parents = tree::argmax_parent_tree(m);
  std::ostringstream dot;
  dot << std::fixed << std::setprecision(6);
  dot << "// seed=" << h.seed << " checkpoint=" << h.checkpoint << " kind=" << h.kind << '\n';
  dot << "// edges are per-child argmax parents and may contain a cycle\n";
  dot << "digraph attention {\n";
  dot << "  ROOT [label=\"ROOT\", shape=box];\n";
  for (int j = 0; j < n; ++j) dot << "  n" << j << " [label=\"" << h.node_label << ' ' << j << "\"];\n";
  for (int j = 0; j < n; ++j) {
    const int p = parents[static_cast<std::size_t>(j)];
    const double w = p == tree::kRoot ? m.marg_root(j) : m.marg(p, j);
    dot << "  " << (p == tree::kRoot ? std::string("ROOT") : "n" + std::to_string(p)) << " -> n" << j << " [label=\"" << w
        << "\"];\n";
  }
  dot << "}\n";
  out.dot = dot.str();
  return out;
}

}  // namespace vhvae::theory
