#pragma once

#include <span>
#include <string>
#include <vector>

#include "nmt/encoding/tokens.hpp"

namespace nmt::gen {

// Values a slot may take next. `forced_ignore` marks slots that carry no
// value in this token (they are filled with IGNORE, never sampled).
struct SlotMask {
  bool forced_ignore = false;
  std::vector<bool> allow;

  bool allows(int x) const { return forced_ignore ? x == encoding::kIgnore : x >= 0 && x < static_cast<int>(allow.size()) && allow[static_cast<std::size_t>(x)]; }
  std::size_t count() const { return static_cast<std::size_t>(std::count(allow.begin(), allow.end(), true)); }
};

// Structural rules of each scheme, tracked token by token: the first token
// opens a measure, beats only move forward inside a measure and stay inside
// the meter, a position is followed by at least one note, CONTINUE is not
// used where no earlier value exists, and inactive features stay IGNORE.
// Every sequence accepted here decodes without error once it holds a note.
class Grammar {
 public:
  Grammar(encoding::Scheme s, const encoding::FeatureVocab& v, const midi::TimeSignature& ts)
      : scheme_(s), v_(v), rv_(v) {
    midi::Piece probe;
    probe.time_signature = ts;
    probe.resolution = v.resolution;
    m_len_ = probe.measure_length();
    if (m_len_ > v.beat_positions) throw ConfigError("meter does not fit the beat vocabulary");
    for (auto f : {encoding::Feature::kInstrument, encoding::Feature::kPitch, encoding::Feature::kDuration,
                   encoding::Feature::kVelocity})
      if (v.active(f)) note_fields_.push_back(f);
  }

  encoding::Scheme scheme() const { return scheme_; }
  std::size_t width() const { return encoding::is_compound(scheme_) ? 8 : 1; }
  std::size_t tokens() const { return tokens_; }
  long notes() const { return notes_; }

  // Mask for slot j of the next token given its first j slots. `terminal`
  // asks for the closing token of an nb-pf sequence.
  SlotMask mask(std::size_t j, std::span<const int> prefix, bool terminal = false) const {
    using encoding::Scheme;
    switch (scheme_) {
      case Scheme::kNbMetricFirst: return nb_metric_side(j, prefix);
      case Scheme::kNbPitchFirst:
        if (j < 3) {
          if (tokens_ == 0) return ignore();
          return note_side(j + 5);
        }
        if (terminal) return ignore();
        return nb_metric_side(j - 3, prefix.subspan(3));
      case Scheme::kCp: return cp(j, prefix);
      case Scheme::kRemi: return remi();
    }
    return ignore();
  }

  // Checks `token` against the masks and advances the state.
  void push(std::span<const int> token, bool terminal = false) {
    if (token.size() != width()) throw DataError("grammar: token width mismatch");
    for (std::size_t j = 0; j < token.size(); ++j)
      if (!mask(j, token.first(j), terminal).allows(token[j]))
        throw DataError("token " + std::to_string(tokens_) + " slot " + std::to_string(j) + ": value " +
                        std::to_string(token[j]) + " is not allowed here");
    using encoding::Scheme;
    switch (scheme_) {
      case Scheme::kNbMetricFirst:
        advance_metric(token[0], token[1]);
        ++notes_;
        break;
      case Scheme::kNbPitchFirst:
        if (tokens_ > 0) ++notes_;
        if (!terminal) advance_metric(token[3], token[4]);
        closed_ = terminal;
        break;
      case Scheme::kCp:
        if (token[0] == encoding::kCpNote) {
          ++notes_;
          last_metric_ = false;
        } else {
          if (token[0] == encoding::kCpMetricBar) ++measure_;
          beat_ = token[1];
          last_metric_ = true;
        }
        break;
      case Scheme::kRemi: advance_remi(token[0]); break;
    }
    ++tokens_;
  }

  bool closed() const { return closed_; }

  // True when the stream can stop here and still decode.
  bool complete() const {
    using encoding::Scheme;
    switch (scheme_) {
      case Scheme::kNbMetricFirst: return notes_ > 0;
      case Scheme::kNbPitchFirst: return closed_ && notes_ > 0;
      case Scheme::kCp: return notes_ > 0 && !last_metric_;
      case Scheme::kRemi: return notes_ > 0 && remi_state_ == RemiState::kAfterNote;
    }
    return false;
  }

 private:
  enum class RemiState { kStart, kAfterBar, kAfterBeat, kAfterChord, kAfterTempo, kInNote, kAfterNote };

  static SlotMask ignore() { return {true, {}}; }
  SlotMask all(encoding::Feature f) const { return {false, std::vector<bool>(static_cast<std::size_t>(v_.size(f)), true)}; }
  SlotMask only(encoding::Feature f, std::initializer_list<int> values) const {
    SlotMask m{false, std::vector<bool>(static_cast<std::size_t>(v_.size(f)), false)};
    for (int x : values) m.allow[static_cast<std::size_t>(x)] = true;
    return m;
  }
  SlotMask beats(long after) const {
    SlotMask m{false, std::vector<bool>(static_cast<std::size_t>(v_.beat_positions), false)};
    for (long b = after + 1; b < m_len_; ++b) m.allow[static_cast<std::size_t>(b)] = true;
    return m;
  }
  bool can_advance_beat() const { return beat_ + 1 < m_len_; }

  // Pitch (5), duration (6), velocity (7) or instrument (4) in note-based slot numbering.
  SlotMask note_side(std::size_t mf_slot) const {
    using F = encoding::Feature;
    switch (mf_slot) {
      case 4: return v_.features.instrument ? all(F::kInstrument) : ignore();
      case 5: return all(F::kPitch);
      case 6: return all(F::kDuration);
      case 7: return v_.features.velocity ? all(F::kVelocity) : ignore();
    }
    return ignore();
  }

  // Slot j of a metric-first note token.
  SlotMask nb_metric_side(std::size_t j, std::span<const int> prefix) const {
    using F = encoding::Feature;
    const bool first = metric_tokens_ == 0;
    if (j == 0) {
      if (first) return only(F::kMetric, {encoding::kMetricSSS});
      auto m = only(F::kMetric, {encoding::kMetricNSS, encoding::kMetricNNN});
      if (can_advance_beat()) m.allow[encoding::kMetricNNS] = true;
      return m;
    }
    const int metric = prefix[0];
    if (j == 1) {
      if (metric == encoding::kMetricNNN) return only(F::kBeat, {static_cast<int>(beat_)});
      return beats(metric == encoding::kMetricNNS ? beat_ : -1);
    }
    if (j == 2 || j == 3) {
      const F f = j == 2 ? F::kChord : F::kTempo;
      if (!v_.active(f)) return ignore();
      if (metric == encoding::kMetricNNN) return only(f, {encoding::kContinue});
      auto m = all(f);
      if (first) m.allow[encoding::kContinue] = false;
      return m;
    }
    return note_side(j);
  }

  void advance_metric(int metric, int beat) {
    if (metric == encoding::kMetricSSS || metric == encoding::kMetricNSS) ++measure_;
    beat_ = beat;
    ++metric_tokens_;
  }

  SlotMask cp(std::size_t j, std::span<const int> prefix) const {
    using F = encoding::Feature;
    if (j == 0) {
      if (tokens_ == 0) return only(F::kType, {encoding::kCpMetricBar});
      if (last_metric_) return only(F::kType, {encoding::kCpNote});
      auto m = only(F::kType, {encoding::kCpNote, encoding::kCpMetricBar});
      if (can_advance_beat()) m.allow[encoding::kCpMetric] = true;
      return m;
    }
    const bool note = prefix[0] == encoding::kCpNote;
    if (j == 1) return note ? ignore() : beats(prefix[0] == encoding::kCpMetric ? beat_ : -1);
    if (j == 2 || j == 3) {
      const F f = j == 2 ? F::kChord : F::kTempo;
      if (note || !v_.active(f)) return ignore();
      auto m = all(f);
      if (tokens_ == 0) m.allow[encoding::kContinue] = false;
      return m;
    }
    return note ? note_side(j) : ignore();
  }

  SlotMask remi() const {
    using F = encoding::Feature;
    SlotMask m{false, std::vector<bool>(static_cast<std::size_t>(rv_.size()), false)};
    auto allow_feature = [&](F f) {
      if (!rv_.has(f)) return;
      const int lo = encoding::RemiVocab::uses_continue(f) ? 1 : 0;
      for (int i = lo; i < v_.size(f); ++i) m.allow[static_cast<std::size_t>(rv_.id(f, i))] = true;
    };
    auto allow_beats = [&](long after) {
      for (long b = after + 1; b < m_len_; ++b) m.allow[static_cast<std::size_t>(rv_.id(F::kBeat, static_cast<int>(b)))] = true;
    };
    auto allow_note_start = [&] { allow_feature(note_fields_.front()); };
    switch (remi_state_) {
      case RemiState::kStart: m.allow[encoding::RemiVocab::kBar] = true; break;
      case RemiState::kAfterBar: allow_beats(-1); break;
      case RemiState::kAfterBeat:
        allow_feature(F::kChord);
        allow_feature(F::kTempo);
        allow_note_start();
        break;
      case RemiState::kAfterChord:
        allow_feature(F::kTempo);
        allow_note_start();
        break;
      case RemiState::kAfterTempo: allow_note_start(); break;
      case RemiState::kInNote: allow_feature(note_fields_[next_field_]); break;
      case RemiState::kAfterNote:
        allow_note_start();
        allow_beats(beat_);
        m.allow[encoding::RemiVocab::kBar] = true;
        break;
    }
    return m;
  }

  void advance_remi(int id) {
    using F = encoding::Feature;
    if (id == encoding::RemiVocab::kBar) {
      ++measure_;
      beat_ = -1;
      remi_state_ = RemiState::kAfterBar;
      return;
    }
    const auto [f, index] = rv_.split(id);
    switch (f) {
      case F::kBeat:
        beat_ = index;
        remi_state_ = RemiState::kAfterBeat;
        return;
      case F::kChord: remi_state_ = RemiState::kAfterChord; return;
      case F::kTempo: remi_state_ = RemiState::kAfterTempo; return;
      default:
        if (++next_field_ == note_fields_.size()) {
          next_field_ = 0;
          ++notes_;
          remi_state_ = RemiState::kAfterNote;
        } else {
          remi_state_ = RemiState::kInNote;
        }
    }
  }

  encoding::Scheme scheme_;
  encoding::FeatureVocab v_;
  encoding::RemiVocab rv_;
  std::vector<encoding::Feature> note_fields_;
  long m_len_ = 0;
  std::size_t tokens_ = 0;
  std::size_t metric_tokens_ = 0;
  long notes_ = 0;
  long measure_ = -1;
  long beat_ = -1;
  bool last_metric_ = false;
  bool closed_ = false;
  RemiState remi_state_ = RemiState::kStart;
  std::size_t next_field_ = 0;
};

}  // namespace nmt::gen
