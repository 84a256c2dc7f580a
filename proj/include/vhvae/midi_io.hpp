#pragma once

// Standard MIDI File reading/writing and the piano-roll representations the
// model trains on: a binary step x pitch roll on a sixteenth-note grid, its
// decomposition into N_K key slots, and fixed-length windows.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

namespace vhvae::midi {

inline constexpr int kPitchCount = 88;
inline constexpr int kLowestNote = 21;
inline constexpr int kHighestNote = kLowestNote + kPitchCount - 1;
inline constexpr int kStepsPerBar = 16;
inline constexpr int kRest = -1;
inline constexpr int kExportVelocity = 80;
inline constexpr std::uint32_t kTempoMicros = 500000;  // 120 BPM

class MidiParseError : public std::runtime_error {
 public:
  MidiParseError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " at byte offset " + std::to_string(offset)), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

class UnsupportedMidiFormat : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class EmptyPieceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct NoteEvent {
  int note = 0;
  std::int64_t on_tick = 0;
  std::int64_t off_tick = 0;
  int track = 0;
  int program = 0;
  int channel = 0;

  friend bool operator==(const NoteEvent&, const NoteEvent&) = default;
};

struct MidiFile {
  int format = 0;
  int ppq = 480;
  int track_count = 0;
  std::int64_t end_tick = 0;  // latest end-of-track
  std::vector<NoteEvent> events;
  std::vector<std::string> warnings;
};

namespace detail {

class Reader {
 public:
  Reader(std::span<const std::uint8_t> bytes, std::size_t begin, std::size_t end)
      : bytes_(bytes), pos_(begin), end_(end) {}

  bool done() const { return pos_ >= end_; }
  std::size_t pos() const { return pos_; }

  std::uint8_t u8() {
    if (pos_ >= end_) throw MidiParseError("truncated chunk", pos_);
    return bytes_[pos_++];
  }
  std::uint8_t peek() const {
    if (pos_ >= end_) throw MidiParseError("truncated chunk", pos_);
    return bytes_[pos_];
  }
  std::uint32_t be(int n) {
    std::uint32_t v = 0;
    for (int i = 0; i < n; ++i) v = (v << 8) | u8();
    return v;
  }
  std::uint32_t vlq() {
    const std::size_t start = pos_;
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      const std::uint8_t b = u8();
      v = (v << 7) | (b & 0x7Fu);
      if ((b & 0x80u) == 0) return v;
    }
    throw MidiParseError("variable-length quantity longer than 4 bytes", start);
  }
  void skip(std::size_t n) {
    if (n > end_ - pos_) throw MidiParseError("truncated chunk", pos_);
    pos_ += n;
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_;
  std::size_t end_;
};

inline void put_be(std::vector<std::uint8_t>& out, std::uint32_t v, int n) {
  for (int i = n - 1; i >= 0; --i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFFu));
}

inline void put_vlq(std::vector<std::uint8_t>& out, std::uint32_t v) {
  std::uint8_t buf[5];
  int n = 0;
  buf[n++] = static_cast<std::uint8_t>(v & 0x7Fu);
  while ((v >>= 7) != 0) buf[n++] = static_cast<std::uint8_t>((v & 0x7Fu) | 0x80u);
  while (n > 0) out.push_back(buf[--n]);
}

struct RawInterval {
  std::int64_t on;
  std::int64_t off;
  int program;
  int channel;
};

}  // namespace detail

/// Parses a format 0/1 Standard MIDI File into note events sorted by onset.
/// Note-on with velocity 0 is a note-off; overlapping soundings of the same
/// pitch in a track are merged into their union.
inline MidiFile parse_midi(std::span<const std::uint8_t> bytes) {
  using detail::Reader;
  Reader header(bytes, 0, bytes.size());
  if (bytes.size() < 14) throw MidiParseError("file shorter than a header chunk", bytes.size());
  if (!(bytes[0] == 'M' && bytes[1] == 'T' && bytes[2] == 'h' && bytes[3] == 'd')) {
    throw MidiParseError("missing MThd header", 0);
  }
  header.skip(4);
  const std::uint32_t header_len = header.be(4);
  if (header_len < 6) throw MidiParseError("malformed header length", 4);
  MidiFile file;
  file.format = static_cast<int>(header.be(2));
  const int declared_tracks = static_cast<int>(header.be(2));
  const std::uint32_t division = header.be(2);
  if (file.format > 1) throw UnsupportedMidiFormat("MIDI format " + std::to_string(file.format) + " not supported");
  if (division & 0x8000u) throw UnsupportedMidiFormat("SMPTE time division not supported");
  if (division == 0) throw MidiParseError("zero ticks-per-quarter division", 12);
  file.ppq = static_cast<int>(division);
  if (8 + static_cast<std::size_t>(header_len) > bytes.size()) throw MidiParseError("truncated header chunk", 8);

  std::size_t pos = 8 + header_len;
  // (track, note) -> intervals; merged after the whole file is read.
  std::map<std::pair<int, int>, std::vector<detail::RawInterval>> intervals;
  int track = 0;
  while (pos < bytes.size()) {
    if (bytes.size() - pos < 8) throw MidiParseError("truncated chunk header", pos);
    const bool is_track = bytes[pos] == 'M' && bytes[pos + 1] == 'T' && bytes[pos + 2] == 'r' && bytes[pos + 3] == 'k';
    Reader len_reader(bytes, pos + 4, pos + 8);
    const std::uint32_t len = len_reader.be(4);
    const std::size_t body = pos + 8;
    if (len > bytes.size() - body) throw MidiParseError("truncated chunk", pos);
    if (!is_track) {
      pos = body + len;
      continue;
    }

    Reader r(bytes, body, body + len);
    std::int64_t tick = 0;
    std::uint8_t running = 0;
    int program[16] = {};
    std::map<std::pair<int, int>, std::vector<std::pair<std::int64_t, int>>> open;  // (channel, note) -> (on, program)
    bool ended = false;
    while (!r.done() && !ended) {
      tick += r.vlq();
      const std::size_t at = r.pos();
      std::uint8_t status = r.peek();
      if (status & 0x80u) {
        r.u8();
      } else {
        if (running == 0) throw MidiParseError("data byte without running status", at);
        status = running;
      }
      if (status == 0xFF) {
        const std::uint8_t type = r.u8();
        const std::uint32_t mlen = r.vlq();
        if (type == 0x2F) {
          r.skip(mlen);
          ended = true;
        } else if (type == 0x58 && mlen >= 2) {
          const int num = r.u8();
          const int den_pow = r.u8();
          r.skip(mlen - 2);
          if (num != 4 || den_pow != 2) {
            file.warnings.push_back("track " + std::to_string(track) + ": meter " + std::to_string(num) + "/" +
                                    std::to_string(1 << den_pow) + " treated as 4/4");
          }
        } else {
          r.skip(mlen);
        }
        running = 0;
      } else if (status == 0xF0 || status == 0xF7) {
        r.skip(r.vlq());
        running = 0;
      } else if (status >= 0xF0) {
        throw MidiParseError("unexpected system message", at);
      } else {
        running = status;
        const int kind = status & 0xF0;
        const int channel = status & 0x0F;
        if (kind == 0xC0 || kind == 0xD0) {
          const int d = r.u8();
          if (kind == 0xC0) program[channel] = d & 0x7F;
        } else {
          const int note = r.u8() & 0x7F;
          const int vel = r.u8() & 0x7F;
          if (kind == 0x90 && vel > 0) {
            open[{channel, note}].emplace_back(tick, program[channel]);
          } else if (kind == 0x80 || kind == 0x90) {
            auto it = open.find({channel, note});
            if (it != open.end() && !it->second.empty()) {
              auto [on, prog] = it->second.front();
              it->second.erase(it->second.begin());
              if (tick > on) intervals[{track, note}].push_back({on, tick, prog, channel});
            }
          }
        }
      }
    }
    for (auto& [key, ons] : open) {
      for (auto [on, prog] : ons) {
        if (tick > on) intervals[{track, key.second}].push_back({on, tick, prog, key.first});
      }
    }
    file.end_tick = std::max(file.end_tick, tick);
    pos = body + len;
    ++track;
  }
  file.track_count = track;
  if (track == 0 && declared_tracks > 0) throw MidiParseError("no MTrk chunk found", 8 + header_len);

  for (auto& [key, list] : intervals) {
    std::sort(list.begin(), list.end(), [](const auto& a, const auto& b) { return a.on < b.on; });
    std::size_t i = 0;
    while (i < list.size()) {
      detail::RawInterval cur = list[i];
      std::size_t k = i + 1;
      while (k < list.size() && list[k].on < cur.off) {
        cur.off = std::max(cur.off, list[k].off);
        ++k;
      }
      file.events.push_back({key.second, cur.on, cur.off, key.first, cur.program, cur.channel});
      i = k;
    }
  }
  std::stable_sort(file.events.begin(), file.events.end(), [](const NoteEvent& a, const NoteEvent& b) {
    return std::tie(a.on_tick, a.track, a.note) < std::tie(b.on_tick, b.track, b.note);
  });
  return file;
}

inline std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

/// Keeps Acoustic Grand Piano (program 0) notes; falls back to the track
/// with the most notes when no such notes exist.
inline std::vector<NoteEvent> select_piano_track(std::span<const NoteEvent> events) {
  std::vector<NoteEvent> out;
  for (const NoteEvent& e : events) {
    if (e.program == 0) out.push_back(e);
  }
  if (out.empty()) {
    std::map<int, std::size_t> counts;
    for (const NoteEvent& e : events) ++counts[e.track];
    int best = -1;
    std::size_t best_count = 0;
    for (auto [t, c] : counts) {
      if (c > best_count) {
        best = t;
        best_count = c;
      }
    }
    for (const NoteEvent& e : events) {
      if (e.track == best) out.push_back(e);
    }
  }
  if (out.empty()) throw EmptyPieceError("no note events");
  return out;
}

/// Binary step x pitch activity on a sixteenth-note grid.
struct PianoRoll {
  int steps = 0;
  int pitches = kPitchCount;
  std::vector<std::uint8_t> grid;  // row-major steps x pitches

  PianoRoll() = default;
  PianoRoll(int steps_, int pitches_ = kPitchCount)
      : steps(steps_), pitches(pitches_), grid(static_cast<std::size_t>(steps_) * static_cast<std::size_t>(pitches_), 0) {}

  std::uint8_t at(int s, int p) const { return grid[static_cast<std::size_t>(s) * static_cast<std::size_t>(pitches) + static_cast<std::size_t>(p)]; }
  void set(int s, int p, bool on = true) {
    grid[static_cast<std::size_t>(s) * static_cast<std::size_t>(pitches) + static_cast<std::size_t>(p)] = on ? 1 : 0;
  }
  int bars() const { return steps / kStepsPerBar; }
  std::size_t active_count() const {
    return static_cast<std::size_t>(std::count(grid.begin(), grid.end(), std::uint8_t{1}));
  }
  std::vector<int> active(int s) const {
    std::vector<int> out;
    for (int p = 0; p < pitches; ++p) {
      if (at(s, p)) out.push_back(p);
    }
    return out;
  }

  friend bool operator==(const PianoRoll&, const PianoRoll&) = default;
};

/// Quantizes note events to sixteenth steps (step = ppq/4 ticks). A pitch is
/// active at step s when its interval covers at least half of the step or its
/// onset falls inside the step. A trailing partial bar is dropped; a piece
/// shorter than one bar is padded to one bar.
inline PianoRoll quantize(std::span<const NoteEvent> events, int ppq, std::int64_t end_tick = 0) {
  if (ppq <= 0) throw std::invalid_argument("quantize: ppq must be positive");
  if (events.empty()) throw EmptyPieceError("quantize: no note events");
  std::int64_t length = end_tick;
  bool any_in_range = false;
  for (const NoteEvent& e : events) {
    length = std::max(length, e.off_tick);
    any_in_range = any_in_range || (e.note >= kLowestNote && e.note <= kHighestNote);
  }
  if (!any_in_range) throw EmptyPieceError("quantize: all notes outside MIDI 21-108");

  // Work in quarter-ticks so that one step spans exactly `ppq` units.
  const std::int64_t step4 = ppq;
  const std::int64_t total_steps = (length * 4 + step4 - 1) / step4;
  const std::int64_t bars = std::max<std::int64_t>(1, total_steps / kStepsPerBar);
  PianoRoll roll(static_cast<int>(bars * kStepsPerBar));

  for (const NoteEvent& e : events) {
    if (e.note < kLowestNote || e.note > kHighestNote) continue;
    const std::int64_t on = e.on_tick * 4;
    const std::int64_t off = e.off_tick * 4;
    const std::int64_t first = on / step4;
    const std::int64_t last = (off + step4 - 1) / step4;
    for (std::int64_t s = first; s < last && s < roll.steps; ++s) {
      const std::int64_t lo = s * step4;
      const std::int64_t hi = lo + step4;
      const std::int64_t overlap = std::min(off, hi) - std::max(on, lo);
      const bool onset_here = on >= lo && on < hi;
      if (onset_here || 2 * overlap >= step4) roll.set(static_cast<int>(s), e.note - kLowestNote);
    }
  }
  return roll;
}

/// Per-step assignment of up to `keys` slots to pitch tokens (kRest when empty).
struct KeyedRoll {
  int steps = 0;
  int keys = 0;
  std::vector<int> slots;  // row-major steps x keys

  KeyedRoll() = default;
  KeyedRoll(int steps_, int keys_)
      : steps(steps_), keys(keys_), slots(static_cast<std::size_t>(steps_) * static_cast<std::size_t>(keys_), kRest) {}

  int at(int t, int k) const { return slots[static_cast<std::size_t>(t) * static_cast<std::size_t>(keys) + static_cast<std::size_t>(k)]; }
  int& at(int t, int k) { return slots[static_cast<std::size_t>(t) * static_cast<std::size_t>(keys) + static_cast<std::size_t>(k)]; }
  int bars() const { return steps / kStepsPerBar; }

  bool has_notes() const {
    return std::any_of(slots.begin(), slots.end(), [](int v) { return v != kRest; });
  }

  /// Distinct non-rest tokens, descending, packed into the lowest slots.
  bool is_canonical() const {
    for (int t = 0; t < steps; ++t) {
      bool rest_seen = false;
      int prev = 1 << 30;
      for (int k = 0; k < keys; ++k) {
        const int v = at(t, k);
        if (v == kRest) {
          rest_seen = true;
        } else {
          if (rest_seen || v >= prev) return false;
          prev = v;
        }
      }
    }
    return true;
  }

  /// Non-rest tokens are distinct within every step.
  bool is_valid() const {
    for (int t = 0; t < steps; ++t) {
      for (int a = 0; a < keys; ++a) {
        for (int b = a + 1; b < keys; ++b) {
          if (at(t, a) != kRest && at(t, a) == at(t, b)) return false;
        }
      }
    }
    return true;
  }

  /// Reorders the key axis: slot k of the result is slot order[k] of this roll.
  KeyedRoll permuted(std::span<const int> order) const {
    KeyedRoll out(steps, keys);
    for (int t = 0; t < steps; ++t) {
      for (int k = 0; k < keys; ++k) out.at(t, k) = at(t, order[static_cast<std::size_t>(k)]);
    }
    return out;
  }

  /// Sorts every step into canonical order.
  void canonicalize() {
    for (int t = 0; t < steps; ++t) {
      auto first = slots.begin() + static_cast<std::ptrdiff_t>(t) * keys;
      std::sort(first, first + keys, [](int a, int b) {
        if (a == kRest) return false;
        if (b == kRest) return true;
        return a > b;
      });
    }
  }

  friend bool operator==(const KeyedRoll&, const KeyedRoll&) = default;
};

/// Fills slots with the active pitches in descending order, keeping the
/// `n_keys` highest when a chord is larger.
inline KeyedRoll decompose_keys(const PianoRoll& roll, int n_keys) {
  if (n_keys < 1) throw std::invalid_argument("decompose_keys: n_keys must be >= 1");
  KeyedRoll out(roll.steps, n_keys);
  for (int t = 0; t < roll.steps; ++t) {
    int k = 0;
    for (int p = roll.pitches - 1; p >= 0 && k < n_keys; --p) {
      if (roll.at(t, p)) out.at(t, k++) = p;
    }
  }
  return out;
}

inline PianoRoll recompose(const KeyedRoll& keyed, int pitches = kPitchCount) {
  PianoRoll out(keyed.steps, pitches);
  for (int t = 0; t < keyed.steps; ++t) {
    for (int k = 0; k < keyed.keys; ++k) {
      const int v = keyed.at(t, k);
      if (v != kRest) {
        if (v < 0 || v >= pitches) throw std::out_of_range("recompose: token outside pitch range");
        out.set(t, v);
      }
    }
  }
  return out;
}

struct Window {
  int bars = 0;
  KeyedRoll roll;
  std::string source_id;
};

/// Non-overlapping windows of `n_bars` bars; the remainder and silent windows are discarded.
inline std::vector<Window> window(const KeyedRoll& roll, int n_bars, const std::string& source_id = {}) {
  if (n_bars < 1) throw std::invalid_argument("window: n_bars must be >= 1");
  const int span = n_bars * kStepsPerBar;
  std::vector<Window> out;
  for (int w = 0; (w + 1) * span <= roll.steps; ++w) {
    Window win;
    win.bars = n_bars;
    win.roll = KeyedRoll(span, roll.keys);
    std::copy_n(roll.slots.begin() + static_cast<std::ptrdiff_t>(w) * span * roll.keys,
                static_cast<std::ptrdiff_t>(span) * roll.keys, win.roll.slots.begin());
    if (!win.roll.has_notes()) continue;
    win.source_id = source_id + "#" + std::to_string(w);
    out.push_back(std::move(win));
  }
  return out;
}

/// Format-0 file: tempo 120 BPM, 4/4, program 0, one note per maximal run of
/// active steps, velocity 80. End-of-track sits at the end of the last step.
inline std::vector<std::uint8_t> write_midi(const PianoRoll& roll, int ppq = 480) {
  if (ppq <= 0 || ppq % 4 != 0 || ppq > 0x7FFF) throw std::invalid_argument("write_midi: ppq must be a positive multiple of 4");
  if (roll.pitches > kPitchCount) throw std::invalid_argument("write_midi: roll wider than the piano range");
  const std::int64_t step = ppq / 4;

  struct Ev {
    std::int64_t tick;
    int order;  // offs (0) before ons (1) at the same tick
    int note;
  };
  std::vector<Ev> evs;
  for (int p = 0; p < roll.pitches; ++p) {
    int t = 0;
    while (t < roll.steps) {
      if (!roll.at(t, p)) {
        ++t;
        continue;
      }
      int e = t;
      while (e < roll.steps && roll.at(e, p)) ++e;
      evs.push_back({t * step, 1, p + kLowestNote});
      evs.push_back({e * step, 0, p + kLowestNote});
      t = e;
    }
  }
  std::sort(evs.begin(), evs.end(), [](const Ev& a, const Ev& b) { return std::tie(a.tick, a.order, a.note) < std::tie(b.tick, b.order, b.note); });

  std::vector<std::uint8_t> trk;
  detail::put_vlq(trk, 0);
  trk.insert(trk.end(), {0xFF, 0x51, 0x03});
  detail::put_be(trk, kTempoMicros, 3);
  detail::put_vlq(trk, 0);
  trk.insert(trk.end(), {0xFF, 0x58, 0x04, 0x04, 0x02, 0x18, 0x08});
  detail::put_vlq(trk, 0);
  trk.insert(trk.end(), {0xC0, 0x00});
  std::int64_t now = 0;
  for (const Ev& e : evs) {
    detail::put_vlq(trk, static_cast<std::uint32_t>(e.tick - now));
    now = e.tick;
    if (e.order == 1) {
      trk.insert(trk.end(), {0x90, static_cast<std::uint8_t>(e.note), static_cast<std::uint8_t>(kExportVelocity)});
    } else {
      trk.insert(trk.end(), {0x80, static_cast<std::uint8_t>(e.note), 0x00});
    }
  }
  const std::int64_t end = static_cast<std::int64_t>(roll.steps) * step;
  detail::put_vlq(trk, static_cast<std::uint32_t>(end - now));
  trk.insert(trk.end(), {0xFF, 0x2F, 0x00});

  std::vector<std::uint8_t> out{'M', 'T', 'h', 'd'};
  detail::put_be(out, 6, 4);
  detail::put_be(out, 0, 2);
  detail::put_be(out, 1, 2);
  detail::put_be(out, static_cast<std::uint32_t>(ppq), 2);
  out.insert(out.end(), {'M', 'T', 'r', 'k'});
  detail::put_be(out, static_cast<std::uint32_t>(trk.size()), 4);
  out.insert(out.end(), trk.begin(), trk.end());
  return out;
}

/// Reads a piano roll from a MIDI file path: parse, select piano, quantize.
inline PianoRoll load_piano_roll(const std::string& path, std::vector<std::string>* warnings = nullptr) {
  const auto bytes = read_file_bytes(path);
  MidiFile f = parse_midi(bytes);
  if (warnings) warnings->insert(warnings->end(), f.warnings.begin(), f.warnings.end());
  const auto events = select_piano_track(f.events);
  return quantize(events, f.ppq, f.end_tick);
}

/// One path per line; blank lines and '#' comments are skipped.
inline std::vector<std::string> read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest " + path);
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ' || line.back() == '\t')) line.pop_back();
    std::size_t b = line.find_first_not_of(" \t");
    if (b == std::string::npos || line[b] == '#') continue;
    out.push_back(line.substr(b));
  }
  return out;
}

}  // namespace vhvae::midi
