#pragma once

// Binary framing shared by checkpoints and window caches:
//
//   "VHVA" | u32 version (1) | u32 entry count
//   per entry: u16 name length | name | u8 ndim | u32 dims[ndim] | f64 payload (row-major)
//   u32 document length | UTF-8 key=value document
//
// All integers and floats are little-endian.

#include "vhvae/midi_io.hpp"
#include "vhvae/model.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace vhvae {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr char kMagic[4] = {'V', 'H', 'V', 'A'};
inline constexpr std::uint32_t kFormatVersion = 1;

struct FramedEntry {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<double> data;
};

struct FramedFile {
  std::vector<FramedEntry> entries;
  std::string document;
};

namespace detail {

template <class T>
void put_le(std::vector<std::uint8_t>& out, T v) {
  static_assert(std::is_integral_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xFFu));
}

inline void put_f64(std::vector<std::uint8_t>& out, double v) { put_le(out, std::bit_cast<std::uint64_t>(v)); }

class LeReader {
 public:
  explicit LeReader(std::span<const std::uint8_t> b) : b_(b) {}

  template <class T>
  T get() {
    need(sizeof(T));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(b_[pos_ + i]) << (8 * i);
    pos_ += sizeof(T);
    return static_cast<T>(v);
  }
  double f64() { return std::bit_cast<double>(get<std::uint64_t>()); }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == b_.size(); }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (n > b_.size() - pos_) throw CheckpointError("truncated file at byte " + std::to_string(pos_));
  }
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<std::uint8_t> encode_framed(const FramedFile& f) {
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  detail::put_le<std::uint32_t>(out, kFormatVersion);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(f.entries.size()));
  for (const auto& e : f.entries) {
    if (e.name.size() > 0xFFFF) throw CheckpointError("entry name too long: " + e.name.substr(0, 32));
    if (e.dims.size() > 0xFF) throw CheckpointError("too many dimensions in " + e.name);
    detail::put_le<std::uint16_t>(out, static_cast<std::uint16_t>(e.name.size()));
    out.insert(out.end(), e.name.begin(), e.name.end());
    out.push_back(static_cast<std::uint8_t>(e.dims.size()));
    std::size_t count = 1;
    for (auto d : e.dims) {
      detail::put_le<std::uint32_t>(out, d);
      count *= d;
    }
    if (count != e.data.size()) throw CheckpointError("payload size mismatch in " + e.name);
    for (double v : e.data) detail::put_f64(out, v);
  }
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(f.document.size()));
  out.insert(out.end(), f.document.begin(), f.document.end());
  return out;
}

inline FramedFile decode_framed(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) throw CheckpointError("bad magic bytes");
  detail::LeReader r(bytes.subspan(4));
  const auto version = r.get<std::uint32_t>();
  if (version != kFormatVersion) throw CheckpointError("unsupported version " + std::to_string(version));
  const auto count = r.get<std::uint32_t>();
  FramedFile f;
  for (std::uint32_t i = 0; i < count; ++i) {
    FramedEntry e;
    e.name = r.bytes(r.get<std::uint16_t>());
    const auto ndim = r.get<std::uint8_t>();
    std::size_t n = 1;
    for (std::uint8_t d = 0; d < ndim; ++d) {
      e.dims.push_back(r.get<std::uint32_t>());
      n *= e.dims.back();
    }
    if (n > (bytes.size() - r.pos()) / 8) throw CheckpointError("truncated payload in " + e.name);
    e.data.resize(n);
    for (double& v : e.data) v = r.f64();
    f.entries.push_back(std::move(e));
  }
  f.document = r.bytes(r.get<std::uint32_t>());
  if (!r.done()) throw CheckpointError("trailing bytes after document");
  return f;
}

inline void write_bytes(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for " + path);
}

// ---- checkpoints -----------------------------------------------------------

inline std::vector<std::uint8_t> checkpoint_bytes(const VhVae& model) {
  FramedFile f;
  for (const auto& p : model.params()) {
    FramedEntry e;
    e.name = p.name;
    e.dims = {static_cast<std::uint32_t>(p.value.rows()), static_cast<std::uint32_t>(p.value.cols())};
    e.data.reserve(static_cast<std::size_t>(p.value.size()));
    for (Eigen::Index i = 0; i < p.value.rows(); ++i) {
      for (Eigen::Index j = 0; j < p.value.cols(); ++j) e.data.push_back(p.value(i, j));
    }
    f.entries.push_back(std::move(e));
  }
  f.document = model.config().to_text();
  return encode_framed(f);
}

inline void save_checkpoint(const VhVae& model, const std::string& path) { write_bytes(path, checkpoint_bytes(model)); }

/// Copies parameter values into `model`; names and shapes must match exactly.
inline void load_parameters(VhVae& model, const FramedFile& f) {
  auto& store = model.params();
  if (f.entries.size() != store.size()) {
    throw CheckpointError("checkpoint has " + std::to_string(f.entries.size()) + " entries, model expects " +
                          std::to_string(store.size()));
  }
  for (std::size_t i = 0; i < f.entries.size(); ++i) {
    const auto& e = f.entries[i];
    Parameter& p = store[i];
    if (e.name != p.name) throw CheckpointError("entry " + std::to_string(i) + " is '" + e.name + "', expected '" + p.name + "'");
    if (e.dims.size() != 2 || e.dims[0] != p.value.rows() || e.dims[1] != p.value.cols()) {
      throw CheckpointError("shape mismatch for " + p.name);
    }
    std::size_t k = 0;
    for (Eigen::Index r = 0; r < p.value.rows(); ++r) {
      for (Eigen::Index c = 0; c < p.value.cols(); ++c) p.value(r, c) = e.data[k++];
    }
  }
}

inline VhVae checkpoint_from_bytes(std::span<const std::uint8_t> bytes) {
  const FramedFile f = decode_framed(bytes);
  ModelConfig cfg;
  try {
    cfg = ModelConfig::from_text(f.document);
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("embedded config: ") + e.what());
  }
  VhVae model(cfg);
  load_parameters(model, f);
  return model;
}

inline VhVae load_checkpoint(const std::string& path) {
  std::vector<std::uint8_t> bytes;
  try {
    bytes = midi::read_file_bytes(path);
  } catch (const std::runtime_error& e) {
    throw CheckpointError(e.what());
  }
  return checkpoint_from_bytes(bytes);
}

/// Loads into an existing model, rejecting checkpoints whose shapes differ from its config.
inline void load_checkpoint_into(VhVae& model, const std::string& path) {
  load_parameters(model, decode_framed(midi::read_file_bytes(path)));
}

// ---- window caches -----------------------------------------------------------

inline std::vector<std::uint8_t> window_cache_bytes(std::span<const midi::Window> windows) {
  FramedFile f;
  int bars = 0, keys = 0;
  for (const auto& w : windows) {
    FramedEntry e;
    e.name = w.source_id;
    e.dims = {static_cast<std::uint32_t>(w.roll.steps), static_cast<std::uint32_t>(w.roll.keys)};
    for (int v : w.roll.slots) e.data.push_back(static_cast<double>(v));
    f.entries.push_back(std::move(e));
    bars = w.bars;
    keys = w.roll.keys;
  }
  f.document = "kind=windows\nn_bars=" + std::to_string(bars) + "\nn_keys=" + std::to_string(keys) + "\n";
  return encode_framed(f);
}

inline std::vector<midi::Window> windows_from_bytes(std::span<const std::uint8_t> bytes) {
  const FramedFile f = decode_framed(bytes);
  std::vector<midi::Window> out;
  for (const auto& e : f.entries) {
    if (e.dims.size() != 2 || e.dims[0] % midi::kStepsPerBar != 0) throw CheckpointError("malformed window entry " + e.name);
    midi::Window w;
    w.source_id = e.name;
    w.roll = midi::KeyedRoll(static_cast<int>(e.dims[0]), static_cast<int>(e.dims[1]));
    w.bars = w.roll.bars();
    for (std::size_t i = 0; i < e.data.size(); ++i) w.roll.slots[i] = static_cast<int>(e.data[i]);
    out.push_back(std::move(w));
  }
  return out;
}

inline void save_windows(std::span<const midi::Window> windows, const std::string& path) {
  write_bytes(path, window_cache_bytes(windows));
}

inline std::vector<midi::Window> load_windows(const std::string& path) { return windows_from_bytes(midi::read_file_bytes(path)); }

}  // namespace vhvae
