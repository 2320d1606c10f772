#pragma once

#include <algorithm>
#include <array>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "nmt/encoding/chords.hpp"
#include "nmt/encoding/tokens.hpp"

namespace nmt::encoding {

// Values an encoder had to move to fit the vocabulary.
struct EncodeReport {
  std::size_t durations_clamped = 0;
  std::size_t tempos_clamped = 0;
  std::size_t notes_merged = 0;
  std::size_t measures_dropped = 0;  // measures without onsets

  EncodeReport& operator+=(const EncodeReport& o) {
    durations_clamped += o.durations_clamped;
    tempos_clamped += o.tempos_clamped;
    notes_merged += o.notes_merged;
    measures_dropped += o.measures_dropped;
    return *this;
  }
};

namespace detail {

template <typename Event>
const Event* event_at_or_before(const std::vector<Event>& events, long tick) {
  const Event* found = nullptr;
  for (const auto& e : events)
    if (e.tick <= tick && (!found || e.tick >= found->tick)) found = &e;
  return found;
}

}  // namespace detail

// The piece every encoder actually represents. Measures without onsets are
// removed, instruments fold to their class representative, durations are
// capped, velocities and tempos snap to bin representatives, and chord and
// tempo changes move to the note positions where they are first heard (the
// first tempo at tick 0). Inactive features take fixed defaults. For every
// scheme, decode(encode(p)) == canonicalize(p), chords included.
inline midi::Piece canonicalize(const midi::Piece& piece, const FeatureVocab& v, EncodeReport* report = nullptr) {
  if (piece.notes.empty()) throw DataError("piece '" + piece.source_id + "' has no notes");
  if (piece.resolution != v.resolution)
    throw DataError("piece '" + piece.source_id + "' has resolution " + std::to_string(piece.resolution) +
                    ", vocabulary expects " + std::to_string(v.resolution));
  const long m_len = piece.measure_length();
  if (m_len > v.beat_positions)
    throw DataError("piece '" + piece.source_id + "' measure of " + std::to_string(m_len) +
                    " grid units exceeds the vocabulary's " + std::to_string(v.beat_positions));
  EncodeReport rep;
  std::vector<midi::NoteEvent> src = piece.notes;
  std::sort(src.begin(), src.end(), midi::note_less);

  std::map<long, long> measure_rank;
  for (const auto& n : src) measure_rank.emplace(n.onset / m_len, 0);
  long rank = 0;
  for (auto& [m, r] : measure_rank) r = rank++;
  rep.measures_dropped = static_cast<std::size_t>(measure_rank.rbegin()->first + 1 - rank);

  midi::Piece out;
  out.time_signature = piece.time_signature;
  out.resolution = piece.resolution;
  out.source_id = piece.source_id;

  // Old onset -> new onset, in position order.
  std::map<long, long> positions;
  for (const auto& n : src) positions.emplace(n.onset, measure_rank[n.onset / m_len] * m_len + n.onset % m_len);

  for (const auto& n : src) {
    midi::NoteEvent c = n;
    c.onset = positions[n.onset];
    c.instrument = v.features.instrument ? class_instrument(instrument_class(n.instrument)) : midi::Instrument{0, false};
    if (c.duration > v.duration_cap) {
      c.duration = v.duration_cap;
      ++rep.durations_clamped;
    }
    c.duration = std::max<long>(1, c.duration);
    c.velocity = v.features.velocity ? velocity_bin_value(velocity_bin(n.velocity)) : kDefaultVelocity;
    out.notes.push_back(c);
  }
  std::stable_sort(out.notes.begin(), out.notes.end(), [](const auto& a, const auto& b) {
    return std::tie(a.onset, a.instrument, a.pitch) < std::tie(b.onset, b.instrument, b.pitch);
  });
  std::vector<midi::NoteEvent> merged;
  for (const auto& n : out.notes) {
    if (!merged.empty() && merged.back().onset == n.onset && merged.back().instrument == n.instrument &&
        merged.back().pitch == n.pitch) {
      merged.back().duration = std::max(merged.back().duration, n.duration);
      ++rep.notes_merged;
      continue;
    }
    merged.push_back(n);
  }
  out.notes = std::move(merged);
  out.sort_notes();

  if (v.features.tempo) {
    int prev = -1;
    for (const auto& [old_onset, new_onset] : positions) {
      const auto* t = detail::event_at_or_before(piece.tempo_changes, old_onset);
      bool clamped = false;
      const int bin = tempo_bin(t ? t->bpm() : 60'000'000.0 / midi::kDefaultMicrosPerBeat, &clamped);
      if (bin == prev) continue;
      rep.tempos_clamped += clamped;
      out.tempo_changes.push_back({prev < 0 ? 0 : new_onset, tempo_bin_micros(bin)});
      prev = bin;
    }
  } else {
    out.tempo_changes = {{0, midi::kDefaultMicrosPerBeat}};
  }

  if (v.features.chord) {
    bool first = true;
    midi::Chord prev;
    for (const auto& [old_onset, new_onset] : positions) {
      const auto* e = detail::event_at_or_before(piece.chords, old_onset);
      const midi::Chord c = e ? e->chord : midi::Chord{};
      if (!first && c == prev) continue;
      out.chords.push_back({new_onset, c});
      prev = c;
      first = false;
    }
  }
  if (report) *report += rep;
  return out;
}

namespace detail {

// One grid position of a canonical piece and the state changes heard there.
struct Position {
  long onset = 0;
  std::size_t first = 0, count = 0;  // note range
  bool new_measure = false;
  int chord = kContinue;  // chord vocabulary index or CONTINUE
  int tempo = kContinue;  // tempo vocabulary index or CONTINUE
};

inline std::vector<Position> positions_of(const midi::Piece& c, const FeatureVocab& v) {
  const long m_len = c.measure_length();
  std::vector<Position> out;
  for (std::size_t i = 0; i < c.notes.size(); ++i) {
    if (!out.empty() && out.back().onset == c.notes[i].onset) {
      ++out.back().count;
      continue;
    }
    Position p;
    p.onset = c.notes[i].onset;
    p.first = i;
    p.count = 1;
    p.new_measure = out.empty() || out.back().onset / m_len != p.onset / m_len;
    out.push_back(p);
  }
  if (v.features.chord)
    for (const auto& e : c.chords)
      for (auto& p : out)
        if (p.onset == e.tick) p.chord = 1 + e.chord.index();
  if (v.features.tempo)
    for (const auto& t : c.tempo_changes) {
      const long tick = t.tick == 0 ? out.front().onset : t.tick;
      for (auto& p : out)
        if (p.onset == tick) p.tempo = 1 + tempo_bin(t.bpm());
    }
  return out;
}

inline std::array<int, 4> note_slots(const midi::NoteEvent& n, const FeatureVocab& v) {
  return {v.features.instrument ? instrument_class(n.instrument) : kIgnore, n.pitch, static_cast<int>(n.duration - 1),
          v.features.velocity ? velocity_bin(n.velocity) : kIgnore};
}

inline TokenSequence empty_sequence(Scheme s, const midi::Piece& c) {
  TokenSequence seq;
  seq.scheme = s;
  seq.width = is_compound(s) ? 8 : 1;
  seq.time_signature = c.time_signature;
  seq.resolution = c.resolution;
  seq.source_id = c.source_id;
  return seq;
}

inline TokenSequence encode_nb_mf(const midi::Piece& c, const FeatureVocab& v) {
  TokenSequence seq = empty_sequence(Scheme::kNbMetricFirst, c);
  const long m_len = c.measure_length();
  const auto pos = positions_of(c, v);
  for (std::size_t p = 0; p < pos.size(); ++p)
    for (std::size_t k = 0; k < pos[p].count; ++k) {
      const auto& n = c.notes[pos[p].first + k];
      int metric = kMetricNNN;
      if (k == 0) metric = p == 0 ? kMetricSSS : pos[p].new_measure ? kMetricNSS : kMetricNNS;
      const auto ns = note_slots(n, v);
      const int chord = !v.features.chord ? kIgnore : k == 0 ? pos[p].chord : kContinue;
      const int tempo = !v.features.tempo ? kIgnore : k == 0 ? pos[p].tempo : kContinue;
      const std::array<int, 8> t{metric, static_cast<int>(n.onset % m_len), chord, tempo, ns[0], ns[1], ns[2], ns[3]};
      seq.push(t);
    }
  return seq;
}

// Compound shift: token i = (pitch, dur, vel of note i-1; metric, beat, chord, tempo, inst of note i),
// closed by a terminal token that carries the last note's pitch, dur and vel.
inline TokenSequence shift_to_pitch_first(const TokenSequence& mf) {
  TokenSequence pf = mf;
  pf.scheme = Scheme::kNbPitchFirst;
  pf.data.clear();
  std::array<int, 3> carry{kIgnore, kIgnore, kIgnore};
  for (std::size_t i = 0; i <= mf.size(); ++i) {
    std::array<int, 8> t{carry[0], carry[1], carry[2], kIgnore, kIgnore, kIgnore, kIgnore, kIgnore};
    if (i < mf.size()) {
      const auto m = mf.token(i);
      t = {carry[0], carry[1], carry[2], m[0], m[1], m[2], m[3], m[4]};
      carry = {m[5], m[6], m[7]};
    }
    pf.push(t);
  }
  return pf;
}

// Inverse of shift_to_pitch_first.
inline TokenSequence shift_to_metric_first(const TokenSequence& pf) {
  TokenSequence mf = pf;
  mf.scheme = Scheme::kNbMetricFirst;
  mf.data.clear();
  if (pf.size() < 2) throw DataError("nb-pf sequence needs at least one note token and the terminal token");
  for (int k = 0; k < 3; ++k)
    if (pf.token(0)[k] != kIgnore) throw DataError("nb-pf token 0 carries a note before the first note");
  for (int k = 3; k < 8; ++k)
    if (pf.token(pf.size() - 1)[k] != kIgnore) throw DataError("nb-pf terminal token carries metric-side values");
  for (std::size_t i = 0; i + 1 < pf.size(); ++i) {
    const auto a = pf.token(i), b = pf.token(i + 1);
    const std::array<int, 8> t{a[3], a[4], a[5], a[6], a[7], b[0], b[1], b[2]};
    mf.push(t);
  }
  return mf;
}

}  // namespace detail

inline TokenSequence encode_nb(const midi::Piece& piece, const FeatureVocab& v, bool pitch_first,
                               EncodeReport* report = nullptr) {
  const auto mf = detail::encode_nb_mf(canonicalize(piece, v, report), v);
  return pitch_first ? detail::shift_to_pitch_first(mf) : mf;
}

inline TokenSequence encode_cp(const midi::Piece& piece, const FeatureVocab& v, EncodeReport* report = nullptr) {
  const midi::Piece c = canonicalize(piece, v, report);
  TokenSequence seq = detail::empty_sequence(Scheme::kCp, c);
  const long m_len = c.measure_length();
  for (const auto& p : detail::positions_of(c, v)) {
    const std::array<int, 8> metric{p.new_measure ? kCpMetricBar : kCpMetric, static_cast<int>(p.onset % m_len),
                                    v.features.chord ? p.chord : kIgnore, v.features.tempo ? p.tempo : kIgnore,
                                    kIgnore, kIgnore, kIgnore, kIgnore};
    seq.push(metric);
    for (std::size_t k = 0; k < p.count; ++k) {
      const auto ns = detail::note_slots(c.notes[p.first + k], v);
      const std::array<int, 8> note{kCpNote, kIgnore, kIgnore, kIgnore, ns[0], ns[1], ns[2], ns[3]};
      seq.push(note);
    }
  }
  return seq;
}

inline TokenSequence encode_remi(const midi::Piece& piece, const FeatureVocab& v, EncodeReport* report = nullptr) {
  const midi::Piece c = canonicalize(piece, v, report);
  TokenSequence seq = detail::empty_sequence(Scheme::kRemi, c);
  const RemiVocab rv(v);
  const long m_len = c.measure_length();
  for (const auto& p : detail::positions_of(c, v)) {
    if (p.new_measure) seq.data.push_back(RemiVocab::kBar);
    seq.data.push_back(rv.id(Feature::kBeat, static_cast<int>(p.onset % m_len)));
    if (v.features.chord && p.chord != kContinue) seq.data.push_back(rv.id(Feature::kChord, p.chord));
    if (v.features.tempo && p.tempo != kContinue) seq.data.push_back(rv.id(Feature::kTempo, p.tempo));
    for (std::size_t k = 0; k < p.count; ++k) {
      const auto ns = detail::note_slots(c.notes[p.first + k], v);
      if (v.features.instrument) seq.data.push_back(rv.id(Feature::kInstrument, ns[0]));
      seq.data.push_back(rv.id(Feature::kPitch, ns[1]));
      seq.data.push_back(rv.id(Feature::kDuration, ns[2]));
      if (v.features.velocity) seq.data.push_back(rv.id(Feature::kVelocity, ns[3]));
    }
  }
  return seq;
}

inline TokenSequence encode(const midi::Piece& piece, const FeatureVocab& v, Scheme s, EncodeReport* report = nullptr) {
  switch (s) {
    case Scheme::kRemi: return encode_remi(piece, v, report);
    case Scheme::kCp: return encode_cp(piece, v, report);
    case Scheme::kNbMetricFirst: return encode_nb(piece, v, false, report);
    case Scheme::kNbPitchFirst: return encode_nb(piece, v, true, report);
  }
  return {};
}

namespace detail {

// Accumulates positions and notes while a decoder walks a token stream.
class PieceBuilder {
 public:
  PieceBuilder(const TokenSequence& seq, const FeatureVocab& v) : v_(v) {
    piece_.time_signature = seq.time_signature;
    piece_.resolution = seq.resolution;
    piece_.source_id = seq.source_id;
    if (seq.resolution != v.resolution)
      throw DataError("sequence resolution " + std::to_string(seq.resolution) + " does not match the vocabulary's " +
                      std::to_string(v.resolution));
    m_len_ = piece_.measure_length();
    if (m_len_ > v.beat_positions) throw DataError("sequence meter does not fit the beat vocabulary");
  }

  bool has_position() const { return measure_ >= 0 && beat_ >= 0; }
  long beat() const { return beat_; }

  void bar(std::size_t at) {
    if (measure_ >= 0 && beat_ < 0) fail(at, "empty measure (Bar not followed by a position)");
    ++measure_;
    beat_ = -1;
  }

  void position(int beat, std::size_t at) {
    if (measure_ < 0) fail(at, "position before the first measure");
    check(Feature::kBeat, beat, at);
    if (beat >= m_len_) fail(at, "beat " + std::to_string(beat) + " outside a measure of " + std::to_string(m_len_));
    if (beat <= beat_) fail(at, "beat moves from " + std::to_string(beat_) + " to " + std::to_string(beat) + " within a measure");
    beat_ = beat;
    notes_here_ = 0;
  }

  void chord(int index, std::size_t at) {
    if (index == kIgnore || index == kContinue || !v_.features.chord) return;
    check(Feature::kChord, index, at);
    set_event(piece_.chords, midi::ChordEvent{onset(), midi::Chord::from_index(index - 1)});
  }

  void tempo(int index, std::size_t at) {
    if (index == kIgnore || index == kContinue || !v_.features.tempo) return;
    check(Feature::kTempo, index, at);
    set_event(piece_.tempo_changes, midi::TempoChange{piece_.notes.empty() && piece_.tempo_changes.empty() ? 0 : onset(),
                                                      tempo_bin_micros(index - 1)});
  }

  void note(int inst, int pitch, int dur, int vel, std::size_t at) {
    if (!has_position()) fail(at, "note before any position");
    midi::NoteEvent n;
    n.onset = onset();
    if (v_.features.instrument) {
      check(Feature::kInstrument, inst, at);
      n.instrument = class_instrument(inst);
    }
    check(Feature::kPitch, pitch, at);
    check(Feature::kDuration, dur, at);
    n.pitch = pitch;
    n.duration = dur + 1;
    n.velocity = kDefaultVelocity;
    if (v_.features.velocity) {
      check(Feature::kVelocity, vel, at);
      n.velocity = velocity_bin_value(vel);
    }
    piece_.notes.push_back(n);
    ++notes_here_;
  }

  std::size_t notes_here() const { return notes_here_; }

  midi::Piece finish() {
    if (piece_.notes.empty()) throw DataError("decoded sequence contains no notes");
    if (piece_.tempo_changes.empty() || piece_.tempo_changes.front().tick != 0)
      piece_.tempo_changes.insert(piece_.tempo_changes.begin(), {0, midi::kDefaultMicrosPerBeat});
    piece_.sort_notes();
    return piece_;
  }

  [[noreturn]] void fail(std::size_t at, const std::string& what) const {
    throw DataError("decode: token " + std::to_string(at) + ": " + what);
  }

 private:
  long onset() const { return measure_ * m_len_ + beat_; }

  void check(Feature f, int index, std::size_t at) const {
    if (index < 0 || index >= v_.size(f))
      fail(at, std::string(feature_name(f)) + " value " + std::to_string(index) + " outside [0, " +
                   std::to_string(v_.size(f)) + ")");
  }

  template <typename E>
  static void set_event(std::vector<E>& events, E e) {
    if (!events.empty() && events.back().tick == e.tick)
      events.back() = e;
    else
      events.push_back(e);
  }

  const FeatureVocab& v_;
  midi::Piece piece_;
  long m_len_ = 0;
  long measure_ = -1;
  long beat_ = -1;
  std::size_t notes_here_ = 0;
};

inline midi::Piece decode_nb_mf(const TokenSequence& seq, const FeatureVocab& v) {
  PieceBuilder b(seq, v);
  for (std::size_t i = 0; i < seq.size(); ++i) {
    const auto t = seq.token(i);
    const int metric = t[0];
    if (i == 0 && metric != kMetricSSS) b.fail(i, "first token must open the piece (SSS)");
    if (i > 0 && metric == kMetricSSS) b.fail(i, "time-signature change inside a piece");
    switch (metric) {
      case kMetricSSS:
      case kMetricNSS:
        b.bar(i);
        b.position(t[1], i);
        break;
      case kMetricNNS: b.position(t[1], i); break;
      case kMetricNNN:
        if (t[1] != b.beat()) b.fail(i, "NNN token changes the beat");
        break;
      default: b.fail(i, "metric value " + std::to_string(metric) + " out of range");
    }
    b.chord(t[2], i);
    b.tempo(t[3], i);
    b.note(t[4], t[5], t[6], t[7], i);
  }
  return b.finish();
}

inline midi::Piece decode_cp(const TokenSequence& seq, const FeatureVocab& v) {
  PieceBuilder b(seq, v);
  for (std::size_t i = 0; i < seq.size(); ++i) {
    const auto t = seq.token(i);
    switch (t[0]) {
      case kCpMetricBar:
      case kCpMetric:
        if (t[0] == kCpMetricBar) b.bar(i);
        b.position(t[1], i);
        b.chord(t[2], i);
        b.tempo(t[3], i);
        break;
      case kCpNote: b.note(t[4], t[5], t[6], t[7], i); break;
      default: b.fail(i, "type value " + std::to_string(t[0]) + " out of range");
    }
  }
  return b.finish();
}

inline midi::Piece decode_remi(const TokenSequence& seq, const FeatureVocab& v) {
  PieceBuilder b(seq, v);
  const RemiVocab rv(v);
  // Fields of a note in stream order, inactive ones skipped.
  std::vector<Feature> note_fields;
  for (Feature f : {Feature::kInstrument, Feature::kPitch, Feature::kDuration, Feature::kVelocity})
    if (v.active(f)) note_fields.push_back(f);
  std::array<int, 4> fields{kIgnore, kIgnore, kIgnore, kIgnore};
  std::size_t next_field = 0;
  bool expect_beat = false;
  for (std::size_t i = 0; i < seq.data.size(); ++i) {
    const int id = seq.data[i];
    if (id == RemiVocab::kBar) {
      if (next_field != 0) b.fail(i, "Bar inside a note");
      if (expect_beat) b.fail(i, "Bar must be followed by a Beat");
      b.bar(i);
      expect_beat = true;
      continue;
    }
    const auto [f, index] = rv.split(id);
    if (expect_beat && f != Feature::kBeat) b.fail(i, std::string(feature_name(f)) + " after Bar (expected Beat)");
    switch (f) {
      case Feature::kBeat:
        if (next_field != 0) b.fail(i, "Beat inside a note");
        b.position(index, i);
        expect_beat = false;
        break;
      case Feature::kChord:
      case Feature::kTempo:
        if (!b.has_position() || b.notes_here() > 0 || next_field != 0)
          b.fail(i, std::string(feature_name(f)) + " must directly follow a Beat");
        if (f == Feature::kChord) b.chord(index, i);
        else b.tempo(index, i);
        break;
      default: {
        if (!b.has_position()) b.fail(i, std::string(feature_name(f)) + " before any Bar/Beat");
        if (note_fields[next_field] != f)
          b.fail(i, std::string(feature_name(f)) + " where " + feature_name(note_fields[next_field]) + " was expected");
        const int slot = f == Feature::kInstrument ? 0 : f == Feature::kPitch ? 1 : f == Feature::kDuration ? 2 : 3;
        fields[static_cast<std::size_t>(slot)] = index;
        if (++next_field == note_fields.size()) {
          b.note(fields[0], fields[1], fields[2], fields[3], i);
          fields = {kIgnore, kIgnore, kIgnore, kIgnore};
          next_field = 0;
        }
      }
    }
  }
  if (next_field != 0) b.fail(seq.data.size(), "stream ends inside a note");
  if (expect_beat) b.fail(seq.data.size(), "stream ends after Bar");
  return b.finish();
}

}  // namespace detail

inline midi::Piece decode(const TokenSequence& seq, const FeatureVocab& v) {
  if (seq.data.empty()) throw DataError("decode: empty sequence");
  switch (seq.scheme) {
    case Scheme::kRemi: return detail::decode_remi(seq, v);
    case Scheme::kCp: return detail::decode_cp(seq, v);
    case Scheme::kNbMetricFirst: return detail::decode_nb_mf(seq, v);
    case Scheme::kNbPitchFirst: return detail::decode_nb_mf(detail::shift_to_metric_first(seq), v);
  }
  return {};
}

// Per sub-token (token * width + slot) of a compound sequence: the index of the
// REMI token it corresponds to, kOmitted when REMI has no such token, or kAbsent
// for IGNORE/PAD slots.
struct RemiAlignment {
  static constexpr int kOmitted = -1;
  static constexpr int kAbsent = -2;
  std::vector<int> remi_index;
  std::vector<int> remi_ids;  // REMI id of every matched sub-token, in order
  std::size_t matched = 0;
};

inline RemiAlignment align_to_remi(const TokenSequence& seq, const FeatureVocab& v) {
  if (!is_compound(seq.scheme)) throw ConfigError("align_to_remi: sequence is already REMI");
  const RemiVocab rv(v);
  const auto& slots = scheme_slots(seq.scheme);
  RemiAlignment a;
  a.remi_index.assign(seq.data.size(), RemiAlignment::kAbsent);
  auto match = [&](std::size_t at, int remi_id) {
    a.remi_index[at] = static_cast<int>(a.matched++);
    a.remi_ids.push_back(remi_id);
  };
  for (std::size_t i = 0; i < seq.size(); ++i) {
    const auto t = seq.token(i);
    int metric = kMetricNNS;  // beat slots count unless the token repeats the position
    for (std::size_t k = 0; k < slots.size(); ++k)
      if (slots[k] == Feature::kMetric) metric = t[k];
    for (std::size_t k = 0; k < slots.size(); ++k) {
      const std::size_t at = i * slots.size() + k;
      const int x = t[k];
      if (x < 0) continue;
      const Feature f = slots[k];
      bool omitted = false;
      switch (f) {
        case Feature::kMetric: omitted = x == kMetricNNS || x == kMetricNNN; break;
        case Feature::kType: omitted = x != kCpMetricBar; break;
        case Feature::kBeat: omitted = metric == kMetricNNN; break;
        case Feature::kChord:
        case Feature::kTempo: omitted = x == kContinue; break;
        default: break;
      }
      if (omitted) {
        a.remi_index[at] = RemiAlignment::kOmitted;
        continue;
      }
      match(at, f == Feature::kMetric || f == Feature::kType ? RemiVocab::kBar : rv.id(f, x));
    }
  }
  return a;
}

// Test hook: the matched sub-tokens must reproduce the REMI encoding of the same piece.
inline void verify_alignment(const TokenSequence& seq, const FeatureVocab& v) {
  const auto a = align_to_remi(seq, v);
  const auto remi = encode_remi(decode(seq, v), v);
  if (a.remi_ids != remi.data)
    throw RuntimeFailure("alignment of '" + seq.source_id + "' matched " + std::to_string(a.matched) +
                         " sub-tokens against " + std::to_string(remi.data.size()) + " REMI tokens");
}

}  // namespace nmt::encoding
