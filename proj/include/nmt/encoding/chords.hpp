#pragma once

#include <algorithm>
#include <array>
#include <vector>

#include "nmt/midi/piece.hpp"

namespace nmt::encoding {

// Pitch-class sets of the seven chord qualities, rooted at C.
inline const std::array<std::vector<int>, midi::kNumChordQualities>& chord_intervals() {
  static const std::array<std::vector<int>, midi::kNumChordQualities> iv = {{
      {0, 4, 7}, {0, 3, 7}, {0, 3, 6}, {0, 4, 8}, {0, 4, 7, 10}, {0, 4, 7, 11}, {0, 3, 7, 10},
  }};
  return iv;
}

// Per grid tick of a piece: how many non-drum notes of each pitch class sound.
inline std::vector<std::array<int, 12>> sounding_pitch_classes(const midi::Piece& piece) {
  long end = 0;
  for (const auto& n : piece.notes) end = std::max(end, n.onset + n.duration);
  std::vector<std::array<int, 12>> grid(static_cast<std::size_t>(end), std::array<int, 12>{});
  for (const auto& n : piece.notes) {
    if (n.instrument.is_drum) continue;
    for (long t = n.onset; t < n.onset + n.duration; ++t) ++grid[static_cast<std::size_t>(t)][static_cast<std::size_t>(n.pitch % 12)];
  }
  return grid;
}

// Best template for a window's overlap-weighted pitch-class profile by cosine
// similarity. The profile norm is shared by all templates, so candidates are
// compared through dot^2 / |template| in exact integer arithmetic; ties keep
// the lowest chord index. NONE unless two pitch classes sound together at some
// tick of the window.
inline midi::Chord match_chord(const std::vector<std::array<int, 12>>& grid, long begin, long end) {
  std::array<long, 12> w{};
  bool simultaneous = false;
  for (long t = begin; t < std::min<long>(end, static_cast<long>(grid.size())); ++t) {
    int distinct = 0;
    for (std::size_t pc = 0; pc < 12; ++pc) {
      w[pc] += grid[static_cast<std::size_t>(t)][pc];
      distinct += grid[static_cast<std::size_t>(t)][pc] > 0;
    }
    simultaneous = simultaneous || distinct >= 2;
  }
  if (!simultaneous) return {};
  midi::Chord best;
  long long best_dot = -1, best_size = 1;
  for (int root = 0; root < 12; ++root)
    for (int q = 0; q < midi::kNumChordQualities; ++q) {
      const auto& iv = chord_intervals()[static_cast<std::size_t>(q)];
      long long dot = 0;
      for (int i : iv) dot += w[static_cast<std::size_t>((root + i) % 12)];
      const auto size = static_cast<long long>(iv.size());
      if (best_dot < 0 || dot * dot * best_size > best_dot * best_dot * size) {
        best_dot = dot;
        best_size = size;
        best = {root, static_cast<midi::ChordQuality>(q)};
      }
    }
  return best;
}

// Chord label per beat from a two-beat window starting at the beat; only changes
// are emitted, starting from an implicit NONE before the first beat.
inline std::vector<midi::ChordEvent> detect_chords(const midi::Piece& piece) {
  std::vector<midi::ChordEvent> out;
  const auto grid = sounding_pitch_classes(piece);
  const long end = static_cast<long>(grid.size());
  const long r = piece.resolution;
  midi::Chord prev;
  for (long beat = 0; beat * r < end; ++beat) {
    const midi::Chord c = match_chord(grid, beat * r, beat * r + 2 * r);
    if (!(c == prev)) out.push_back({beat * r, c});
    prev = c;
  }
  return out;
}

}  // namespace nmt::encoding
