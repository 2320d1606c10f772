#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "nmt/midi/piece.hpp"

namespace nmt::midi {

struct TimeSignatureEvent {
  long tick = 0;
  TimeSignature signature;
};

struct ParseStats {
  int format = 0;
  int tracks = 0;
  long unmatched_note_ons = 0;  // closed at end of track
  std::vector<TimeSignatureEvent> time_signatures;
  std::size_t tempo_events = 0;
};

namespace detail {

class ByteReader {
 public:
  ByteReader(std::span<const std::uint8_t> bytes, std::size_t begin, std::size_t end)
      : bytes_(bytes), pos_(begin), end_(end) {}

  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ >= end_; }

  std::uint8_t u8() {
    if (pos_ >= end_) fail("unexpected end of data");
    return bytes_[pos_++];
  }
  std::uint8_t peek() {
    if (pos_ >= end_) fail("unexpected end of data");
    return bytes_[pos_];
  }
  std::uint32_t be(int n) {
    std::uint32_t v = 0;
    for (int i = 0; i < n; ++i) v = (v << 8) | u8();
    return v;
  }
  std::uint32_t vlq() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      const std::uint8_t b = u8();
      v = (v << 7) | (b & 0x7F);
      if (!(b & 0x80)) return v;
    }
    fail("variable-length quantity longer than 4 bytes");
  }
  void skip(std::size_t n) {
    if (n > end_ - pos_) fail("chunk runs past its end");
    pos_ += n;
  }
  [[noreturn]] void fail(const std::string& what) const {
    throw DataError("MIDI parse error at byte offset " + std::to_string(pos_) + ": " + what);
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_;
  std::size_t end_;
};

struct Pending {
  long onset;
  int velocity;
  int program;
};

inline void parse_track(ByteReader& r, Piece& piece, ParseStats& stats,
                        std::vector<std::pair<long, int>>& tempos) {
  std::array<int, 16> program{};
  std::map<std::pair<int, int>, std::deque<Pending>> active;  // (channel, pitch)
  long tick = 0;
  std::uint8_t status = 0;
  auto close = [&](int channel, int pitch, long at) {
    auto it = active.find({channel, pitch});
    if (it == active.end() || it->second.empty()) return;  // stray note-off
    const Pending p = it->second.front();
    it->second.pop_front();
    NoteEvent n;
    n.onset = p.onset;
    n.pitch = pitch;
    n.duration = std::max(1L, at - p.onset);
    n.velocity = p.velocity;
    n.instrument = {p.program, channel == 9};
    piece.notes.push_back(n);
  };
  while (!r.done()) {
    tick += r.vlq();
    std::uint8_t b = r.peek();
    if (b & 0x80) {
      r.u8();
      status = b;
    } else if (status == 0) {
      r.fail("data byte without running status");
    }
    if (status == 0xFF) {
      const std::uint8_t type = r.u8();
      const std::uint32_t len = r.vlq();
      if (type == 0x51 && len == 3) {
        tempos.emplace_back(tick, static_cast<int>(r.be(3)));
        ++stats.tempo_events;
      } else if (type == 0x58 && len >= 2) {
        TimeSignatureEvent ev;
        ev.tick = tick;
        ev.signature.numerator = r.u8();
        ev.signature.denominator = 1 << r.u8();
        r.skip(len - 2);
        stats.time_signatures.push_back(ev);
      } else if (type == 0x2F) {
        r.skip(len);
        break;
      } else {
        r.skip(len);
      }
      status = 0;  // meta events cancel running status
      continue;
    }
    if (status == 0xF0 || status == 0xF7) {
      r.skip(r.vlq());
      status = 0;
      continue;
    }
    if (status < 0x80 || status >= 0xF0) r.fail("unsupported status byte");
    const int kind = status & 0xF0;
    const int channel = status & 0x0F;
    const int d1 = r.u8();
    const int d2 = (kind == 0xC0 || kind == 0xD0) ? 0 : r.u8();
    if (d1 > 127 || d2 > 127) r.fail("data byte above 127");
    if (kind == 0x90 && d2 > 0) {
      active[{channel, d1}].push_back({tick, d2, program[channel]});
    } else if (kind == 0x80 || kind == 0x90) {
      close(channel, d1, tick);
    } else if (kind == 0xC0) {
      program[channel] = d1;
    }
  }
  for (auto& [key, queue] : active)
    while (!queue.empty()) {
      ++stats.unmatched_note_ons;
      close(key.first, key.second, tick);
    }
}

inline void put_vlq(std::vector<std::uint8_t>& out, std::uint32_t v) {
  std::uint8_t buf[5];
  int n = 0;
  buf[n++] = v & 0x7F;
  while (v >>= 7) buf[n++] = static_cast<std::uint8_t>((v & 0x7F) | 0x80);
  while (n) out.push_back(buf[--n]);
}

inline void put_be(std::vector<std::uint8_t>& out, std::uint32_t v, int n) {
  for (int i = n - 1; i >= 0; --i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

struct TrackEvent {
  long tick;
  int order;  // at equal ticks: meta/program (0) < note-off (1) < note-on (2)
  std::vector<std::uint8_t> bytes;
};

inline void put_track(std::vector<std::uint8_t>& out, std::vector<TrackEvent> events) {
  std::stable_sort(events.begin(), events.end(),
                   [](const TrackEvent& a, const TrackEvent& b) { return std::tie(a.tick, a.order) < std::tie(b.tick, b.order); });
  std::vector<std::uint8_t> body;
  long last = 0;
  for (const auto& e : events) {
    put_vlq(body, static_cast<std::uint32_t>(e.tick - last));
    last = e.tick;
    body.insert(body.end(), e.bytes.begin(), e.bytes.end());
  }
  put_vlq(body, 0);
  body.insert(body.end(), {0xFF, 0x2F, 0x00});
  out.insert(out.end(), {'M', 'T', 'r', 'k'});
  put_be(out, static_cast<std::uint32_t>(body.size()), 4);
  out.insert(out.end(), body.begin(), body.end());
}

}  // namespace detail

// Parses a format 0 or 1 Standard MIDI File. Times stay in source ticks and
// `resolution` is the file's ticks per quarter note. Program changes are
// tracked per track and channel; channel 10 (index 9) marks drums.
inline Piece parse_midi(std::span<const std::uint8_t> bytes, ParseStats* stats_out = nullptr,
                        std::string source_id = {}) {
  if (bytes.empty()) throw DataError("MIDI parse error at byte offset 0: empty input");
  ParseStats stats;
  Piece piece;
  piece.source_id = std::move(source_id);
  detail::ByteReader r(bytes, 0, bytes.size());
  auto chunk_id = [&] {
    std::string id;
    for (int i = 0; i < 4; ++i) id.push_back(static_cast<char>(r.u8()));
    return id;
  };
  if (chunk_id() != "MThd") r.fail("missing MThd header");
  const std::uint32_t header_len = r.be(4);
  if (header_len < 6) r.fail("header chunk shorter than 6 bytes");
  stats.format = static_cast<int>(r.be(2));
  const int ntracks = static_cast<int>(r.be(2));
  const std::uint32_t division = r.be(2);
  r.skip(header_len - 6);
  if (stats.format > 1) r.fail("only format 0 and 1 files are supported");
  if (division & 0x8000) r.fail("SMPTE time division is not supported");
  if (division == 0) r.fail("zero ticks per quarter note");
  piece.resolution = static_cast<int>(division);

  std::vector<std::pair<long, int>> tempos;
  while (!r.done() && stats.tracks < ntracks) {
    const std::size_t at = r.pos();
    const std::string id = chunk_id();
    const std::uint32_t len = r.be(4);
    if (len > bytes.size() - r.pos())
      throw DataError("MIDI parse error at byte offset " + std::to_string(at) + ": chunk length exceeds file");
    if (id == "MTrk") {
      detail::ByteReader tr(bytes, r.pos(), r.pos() + len);
      detail::parse_track(tr, piece, stats, tempos);
      ++stats.tracks;
    }
    r.skip(len);
  }
  if (stats.tracks < ntracks)
    throw DataError("MIDI parse error at byte offset " + std::to_string(r.pos()) + ": expected " +
                    std::to_string(ntracks) + " tracks, found " + std::to_string(stats.tracks));

  std::stable_sort(stats.time_signatures.begin(), stats.time_signatures.end(),
                   [](const auto& a, const auto& b) { return a.tick < b.tick; });
  piece.time_signature_events = 0;
  for (std::size_t i = 0; i < stats.time_signatures.size(); ++i)
    if (i == 0 || !(stats.time_signatures[i].signature == stats.time_signatures[i - 1].signature))
      ++piece.time_signature_events;
  if (!stats.time_signatures.empty()) piece.time_signature = stats.time_signatures.front().signature;

  std::stable_sort(tempos.begin(), tempos.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  for (const auto& [tick, micros] : tempos) {
    if (!piece.tempo_changes.empty() && piece.tempo_changes.back().tick == tick)
      piece.tempo_changes.back().micros_per_beat = micros;
    else if (piece.tempo_changes.empty() || piece.tempo_changes.back().micros_per_beat != micros)
      piece.tempo_changes.push_back({tick, micros});
  }
  piece.sort_notes();
  if (stats_out) *stats_out = std::move(stats);
  return piece;
}

inline std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline Piece read_midi_file(const std::filesystem::path& path, ParseStats* stats = nullptr) {
  const auto bytes = read_bytes(path);
  return parse_midi(bytes, stats, path.stem().string());
}

// Serializes a piece as a format 1 file with `resolution` ticks per quarter.
// Track 0 holds meter and tempo; every instrument gets its own track(s) and a
// channel (drums on channel 10). Notes of one instrument that overlap at the
// same pitch are split over extra tracks so note-off pairing stays unambiguous.
inline std::vector<std::uint8_t> write_midi(const Piece& piece) {
  if (piece.notes.empty()) throw DataError("write_midi: piece '" + piece.source_id + "' has no notes");
  if (piece.resolution <= 0 || piece.resolution > 0x7FFF) throw DataError("write_midi: resolution out of range");
  using detail::TrackEvent;

  std::vector<TrackEvent> meta;
  {
    const auto& ts = piece.time_signature;
    int pow2 = 0;
    while ((1 << pow2) < ts.denominator) ++pow2;
    meta.push_back({0, 0, {0xFF, 0x58, 0x04, static_cast<std::uint8_t>(ts.numerator), static_cast<std::uint8_t>(pow2), 24, 8}});
    for (const auto& t : piece.tempo_changes) {
      TrackEvent e{t.tick, 0, {0xFF, 0x51, 0x03}};
      detail::put_be(e.bytes, static_cast<std::uint32_t>(t.micros_per_beat), 3);
      meta.push_back(std::move(e));
    }
  }

  // instrument -> list of sub-tracks, each a list of notes without same-pitch overlap
  std::map<Instrument, std::vector<std::vector<const NoteEvent*>>> lanes;
  std::map<Instrument, std::vector<std::map<int, long>>> lane_busy_until;  // per lane: pitch -> end tick
  std::vector<const NoteEvent*> ordered;
  for (const auto& n : piece.notes) ordered.push_back(&n);
  std::stable_sort(ordered.begin(), ordered.end(), [](auto* a, auto* b) { return note_less(*a, *b); });
  for (const auto* n : ordered) {
    auto& ls = lanes[n->instrument];
    auto& busy = lane_busy_until[n->instrument];
    std::size_t lane = 0;
    for (; lane < ls.size(); ++lane) {
      auto it = busy[lane].find(n->pitch);
      if (it == busy[lane].end() || it->second <= n->onset) break;
    }
    if (lane == ls.size()) {
      ls.emplace_back();
      busy.emplace_back();
    }
    ls[lane].push_back(n);
    busy[lane][n->pitch] = n->onset + n->duration;
  }

  static constexpr int kMelodicChannels[] = {0, 1, 2, 3, 4, 5, 6, 7, 8, 10, 11, 12, 13, 14, 15};
  std::vector<std::vector<TrackEvent>> tracks;
  int next_melodic = 0;
  for (const auto& [inst, ls] : lanes) {
    const int channel = inst.is_drum ? 9 : kMelodicChannels[next_melodic++ % 15];
    for (const auto& lane : ls) {
      std::vector<TrackEvent> ev;
      ev.push_back({0, 0, {static_cast<std::uint8_t>(0xC0 | channel), static_cast<std::uint8_t>(inst.program)}});
      for (const auto* n : lane) {
        ev.push_back({n->onset, 2,
                      {static_cast<std::uint8_t>(0x90 | channel), static_cast<std::uint8_t>(n->pitch),
                       static_cast<std::uint8_t>(n->velocity)}});
        ev.push_back({n->onset + n->duration, 1,
                      {static_cast<std::uint8_t>(0x80 | channel), static_cast<std::uint8_t>(n->pitch), 0}});
      }
      tracks.push_back(std::move(ev));
    }
  }

  std::vector<std::uint8_t> out{'M', 'T', 'h', 'd', 0, 0, 0, 6};
  detail::put_be(out, 1, 2);
  detail::put_be(out, static_cast<std::uint32_t>(tracks.size() + 1), 2);
  detail::put_be(out, static_cast<std::uint32_t>(piece.resolution), 2);
  detail::put_track(out, std::move(meta));
  for (auto& t : tracks) detail::put_track(out, std::move(t));
  return out;
}

inline void write_midi_file(const Piece& piece, const std::filesystem::path& path) {
  const auto bytes = write_midi(piece);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace nmt::midi
