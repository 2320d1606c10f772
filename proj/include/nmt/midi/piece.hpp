#pragma once

#include <algorithm>
#include <compare>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "nmt/core/error.hpp"

namespace nmt::midi {

// General MIDI program plus the percussion-channel flag.
struct Instrument {
  int program = 0;
  bool is_drum = false;

  auto operator<=>(const Instrument&) const = default;
};

struct NoteEvent {
  long onset = 0;     // ticks (grid units once quantized)
  int pitch = 60;     // 0..127
  long duration = 1;  // >= 1
  int velocity = 64;  // 1..127
  Instrument instrument;

  bool operator==(const NoteEvent&) const = default;
};

// Canonical ordering: (onset, instrument, pitch), then the remaining fields.
inline bool note_less(const NoteEvent& a, const NoteEvent& b) {
  return std::tie(a.onset, a.instrument, a.pitch, a.duration, a.velocity) <
         std::tie(b.onset, b.instrument, b.pitch, b.duration, b.velocity);
}

struct TimeSignature {
  int numerator = 4;
  int denominator = 4;

  bool operator==(const TimeSignature&) const = default;
};

struct TempoChange {
  long tick = 0;
  int micros_per_beat = 500000;

  double bpm() const { return 60'000'000.0 / micros_per_beat; }
  bool operator==(const TempoChange&) const = default;
};

inline constexpr int kDefaultMicrosPerBeat = 500000;  // 120 BPM

// Chord qualities recognized by the template matcher.
enum class ChordQuality { kMajor, kMinor, kDiminished, kAugmented, kDominant7, kMajor7, kMinor7 };
inline constexpr int kNumChordQualities = 7;

// A chord label; root < 0 means no chord (NONE).
struct Chord {
  int root = -1;
  ChordQuality quality = ChordQuality::kMajor;

  bool is_none() const { return root < 0; }
  bool operator==(const Chord& o) const { return root == o.root && (root < 0 || quality == o.quality); }
  // 0 for NONE, 1 + root * 7 + quality otherwise.
  int index() const { return root < 0 ? 0 : 1 + root * kNumChordQualities + static_cast<int>(quality); }
  static Chord from_index(int i) {
    if (i <= 0) return {};
    return {(i - 1) / kNumChordQualities, static_cast<ChordQuality>((i - 1) % kNumChordQualities)};
  }
  std::string name() const {
    static const char* roots[] = {"C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B"};
    static const char* quals[] = {"maj", "min", "dim", "aug", "dom7", "maj7", "min7"};
    if (root < 0) return "NONE";
    return std::string(roots[root]) + ":" + quals[static_cast<int>(quality)];
  }
};

struct ChordEvent {
  long tick = 0;
  Chord chord;

  bool operator==(const ChordEvent&) const = default;
};

// A single-meter multi-instrument score.
//
// Equality compares the musical content (notes, meter, tempo map, resolution);
// `source_id`, `chords` and `time_signature_events` are annotations.
struct Piece {
  std::vector<NoteEvent> notes;
  TimeSignature time_signature;
  std::vector<TempoChange> tempo_changes;
  int resolution = 4;  // ticks per beat (grid units per beat once quantized)
  std::string source_id;
  std::vector<ChordEvent> chords;
  int time_signature_events = 1;  // distinct meters announced by the source file

  void sort_notes() { std::sort(notes.begin(), notes.end(), note_less); }

  // Measure length in ticks. A beat is a quarter note.
  long measure_length() const {
    const long num = static_cast<long>(time_signature.numerator) * resolution * 4;
    if (time_signature.denominator <= 0 || num % time_signature.denominator != 0)
      throw DataError("time signature " + std::to_string(time_signature.numerator) + "/" +
                      std::to_string(time_signature.denominator) + " does not fit resolution " +
                      std::to_string(resolution));
    return num / time_signature.denominator;
  }

  std::size_t instrument_count() const {
    std::set<Instrument> s;
    for (const auto& n : notes) s.insert(n.instrument);
    return s.size();
  }

  bool operator==(const Piece& o) const {
    return notes == o.notes && time_signature == o.time_signature && tempo_changes == o.tempo_changes &&
           resolution == o.resolution;
  }
};

}  // namespace nmt::midi
