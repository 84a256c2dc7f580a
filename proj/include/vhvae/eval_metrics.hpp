#pragma once

#include "vhvae/midi_io.hpp"

#include <cstdint>
#include <optional>
#include <stdexcept>

namespace vhvae {

/// Cellwise confusion counts over (step, pitch) activity.
struct ConfusionCounts {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
  std::uint64_t tn = 0;

  std::uint64_t total() const { return tp + fp + fn + tn; }

  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
  }

  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

/// Ratios are empty when their denominator is zero.
struct Rates {
  std::optional<double> ppv;
  std::optional<double> tpr;
  std::optional<double> npv;
  std::optional<double> tnr;
};

inline ConfusionCounts confusion(const midi::PianoRoll& pred, const midi::PianoRoll& truth) {
  if (pred.steps != truth.steps || pred.pitches != truth.pitches) {
    throw std::invalid_argument("confusion: roll shapes differ");
  }
  ConfusionCounts c;
  for (std::size_t i = 0; i < pred.grid.size(); ++i) {
    const bool p = pred.grid[i] != 0;
    const bool t = truth.grid[i] != 0;
    if (p && t) ++c.tp;
    else if (p) ++c.fp;
    else if (t) ++c.fn;
    else ++c.tn;
  }
  return c;
}

inline Rates rates(const ConfusionCounts& c) {
  auto ratio = [](std::uint64_t num, std::uint64_t den) -> std::optional<double> {
    if (den == 0) return std::nullopt;
    return static_cast<double>(num) / static_cast<double>(den);
  };
  return {ratio(c.tp, c.tp + c.fp), ratio(c.tp, c.tp + c.fn), ratio(c.tn, c.tn + c.fn), ratio(c.tn, c.tn + c.fp)};
}

}  // namespace vhvae
