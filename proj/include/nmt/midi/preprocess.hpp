#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <string>
#include <tuple>
#include <vector>

#include "nmt/core/rng.hpp"
#include "nmt/midi/piece.hpp"

namespace nmt::midi {

namespace detail {

// round(ticks * res / tpb), half away from zero for nonnegative ticks.
inline long snap(long ticks, long res, long tpb) { return (2 * ticks * res + tpb) / (2 * tpb); }

}  // namespace detail

// Snaps onsets and durations to a grid of `resolution` units per beat.
// Durations are clamped to at least one unit; notes that collapse onto the
// same (onset, pitch, instrument) merge, keeping the longest duration and the
// first note's velocity.
inline Piece quantize(const Piece& piece, int resolution) {
  if (resolution <= 0) throw ConfigError("quantize: resolution must be positive, got " + std::to_string(resolution));
  if (piece.resolution <= 0) throw DataError("quantize: source resolution must be positive");
  const long res = resolution, tpb = piece.resolution;
  Piece out = piece;
  out.resolution = resolution;
  out.notes.clear();
  std::map<std::tuple<long, Instrument, int>, std::size_t> seen;
  for (const auto& n : piece.notes) {
    NoteEvent q = n;
    q.onset = detail::snap(n.onset, res, tpb);
    q.duration = std::max(1L, detail::snap(n.duration, res, tpb));
    auto key = std::make_tuple(q.onset, q.instrument, q.pitch);
    auto it = seen.find(key);
    if (it != seen.end()) {
      out.notes[it->second].duration = std::max(out.notes[it->second].duration, q.duration);
      continue;
    }
    seen.emplace(key, out.notes.size());
    out.notes.push_back(q);
  }
  out.sort_notes();
  out.tempo_changes.clear();
  for (const auto& t : piece.tempo_changes) {
    TempoChange q{detail::snap(t.tick, res, tpb), t.micros_per_beat};
    if (!out.tempo_changes.empty() && out.tempo_changes.back().tick == q.tick)
      out.tempo_changes.back() = q;
    else
      out.tempo_changes.push_back(q);
  }
  for (auto& c : out.chords) c.tick = detail::snap(c.tick, res, tpb);
  return out;
}

// Thresholds of zero (or false) disable a criterion.
struct FilterCriteria {
  bool require_time_signature = false;
  bool reject_meter_changes = false;
  bool reject_expressive_tempo = false;
  std::size_t max_tempo_changes = 8;  // used by reject_expressive_tempo
  std::size_t min_notes = 0;
  std::size_t max_notes = 0;
  std::size_t min_instruments = 0;

  // Ingest defaults: [64, 20000] notes, meter required and constant, no expressive tempo.
  static FilterCriteria ingest_defaults() {
    FilterCriteria c;
    c.require_time_signature = true;
    c.reject_meter_changes = true;
    c.reject_expressive_tempo = true;
    c.min_notes = 64;
    c.max_notes = 20000;
    return c;
  }
};

struct FilterReport {
  std::vector<std::size_t> kept;  // indices into the input, in order
  std::size_t missing_time_signature = 0;
  std::size_t meter_changes = 0;
  std::size_t expressive_tempo = 0;
  std::size_t too_few_notes = 0;
  std::size_t too_many_notes = 0;
  std::size_t too_few_instruments = 0;
};

// Tempo is "expressive" when it changes more than `max_changes` times or any
// change falls off a beat boundary (ticks measured at the piece's resolution).
inline bool has_expressive_tempo(const Piece& p, std::size_t max_changes) {
  if (p.tempo_changes.size() > max_changes + 1) return true;
  for (const auto& t : p.tempo_changes)
    if (t.tick % p.resolution != 0) return true;
  return false;
}

// Returns the passing pieces in input order. Each failed criterion is counted.
inline FilterReport filter_corpus(const std::vector<Piece>& pieces, const FilterCriteria& c) {
  FilterReport rep;
  for (std::size_t i = 0; i < pieces.size(); ++i) {
    const Piece& p = pieces[i];
    bool ok = true;
    auto reject = [&](bool fails, std::size_t& counter) {
      if (fails) {
        ++counter;
        ok = false;
      }
    };
    reject(c.require_time_signature && p.time_signature_events == 0, rep.missing_time_signature);
    reject(c.reject_meter_changes && p.time_signature_events > 1, rep.meter_changes);
    reject(c.reject_expressive_tempo && has_expressive_tempo(p, c.max_tempo_changes), rep.expressive_tempo);
    reject(c.min_notes > 0 && p.notes.size() < c.min_notes, rep.too_few_notes);
    reject(c.max_notes > 0 && p.notes.size() > c.max_notes, rep.too_many_notes);
    reject(c.min_instruments > 0 && p.instrument_count() < c.min_instruments, rep.too_few_instruments);
    if (ok) rep.kept.push_back(i);
  }
  return rep;
}

inline constexpr int kMinPitchShift = -5;
inline constexpr int kMaxPitchShift = 6;

// Transposes every non-drum note by `shift` semitones. Pitches pushed out of
// [0, 127] move back by whole octaves; chord roots rotate by the same amount.
inline Piece augment_pitch(const Piece& piece, int shift) {
  Piece out = piece;
  if (shift == 0) return out;
  for (auto& n : out.notes) {
    if (n.instrument.is_drum) continue;
    int p = n.pitch + shift;
    while (p > 127) p -= 12;
    while (p < 0) p += 12;
    n.pitch = p;
  }
  for (auto& c : out.chords)
    if (!c.chord.is_none()) c.chord.root = ((c.chord.root + shift) % 12 + 12) % 12;
  out.sort_notes();
  return out;
}

struct CorpusSplit {
  std::vector<std::string> train;
  std::vector<std::string> valid;
  std::vector<std::string> test;
  std::uint64_t seed = 0;
};

// Deterministic shuffle under `seed`, then floor(n/10) pieces each to valid
// and test, the rest to train.
inline CorpusSplit split_corpus(const std::vector<std::string>& ids, std::uint64_t seed) {
  if (ids.size() < 10)
    throw ConfigError("split_corpus needs at least 10 pieces, got " + std::to_string(ids.size()));
  std::vector<std::string> order = ids;
  Rng rng(seed);
  rng.shuffle(order);
  const std::size_t held = ids.size() / 10;
  CorpusSplit s;
  s.seed = seed;
  s.valid.assign(order.begin(), order.begin() + static_cast<long>(held));
  s.test.assign(order.begin() + static_cast<long>(held), order.begin() + static_cast<long>(2 * held));
  s.train.assign(order.begin() + static_cast<long>(2 * held), order.end());
  return s;
}

inline CorpusSplit split_corpus(const std::vector<Piece>& pieces, std::uint64_t seed) {
  std::vector<std::string> ids;
  for (const auto& p : pieces) ids.push_back(p.source_id);
  return split_corpus(ids, seed);
}

}  // namespace nmt::midi
