#pragma once

#include <array>
#include <string>
#include <vector>

#include "nmt/core/error.hpp"
#include "nmt/midi/piece.hpp"

namespace nmt::encoding {

// General MIDI programs folded into 61 instrument classes: 59 pitched classes,
// one catch-all for the percussive and sound-effect programs (112..127), and
// the drum kit. The first program of each class is its representative.
struct InstrumentClass {
  const char* name;
  std::vector<int> programs;
};

inline const std::vector<InstrumentClass>& instrument_classes() {
  static const std::vector<InstrumentClass> classes = {
      {"piano", {0, 1, 2, 3}},
      {"electric-piano", {4, 5}},
      {"harpsichord", {6}},
      {"clavinet", {7}},
      {"celesta", {8, 10}},
      {"glockenspiel", {9}},
      {"vibraphone", {11}},
      {"marimba", {12, 108}},
      {"xylophone", {13}},
      {"tubular-bells", {14}},
      {"dulcimer", {15}},
      {"organ", {16, 17, 18, 20}},
      {"church-organ", {19}},
      {"accordion", {21, 23}},
      {"harmonica", {22}},
      {"nylon-guitar", {24}},
      {"steel-guitar", {25}},
      {"electric-guitar", {26, 27, 28, 31}},
      {"distortion-guitar", {29, 30}},
      {"bass", {32}},
      {"electric-bass", {33, 34}},
      {"fretless-bass", {35}},
      {"slap-bass", {36, 37}},
      {"synth-bass", {38, 39}},
      {"violin", {40, 110}},
      {"viola", {41}},
      {"cello", {42}},
      {"contrabass", {43}},
      {"strings", {48, 44, 45, 49}},
      {"harp", {46}},
      {"timpani", {47}},
      {"synth-strings", {50, 51}},
      {"choir", {52, 53}},
      {"synth-voice", {54}},
      {"orchestra-hit", {55}},
      {"trumpet", {56, 59}},
      {"trombone", {57}},
      {"tuba", {58}},
      {"horn", {60}},
      {"brass-section", {61}},
      {"synth-brass", {62, 63}},
      {"soprano-sax", {64}},
      {"alto-sax", {65}},
      {"tenor-sax", {66}},
      {"baritone-sax", {67}},
      {"oboe", {68}},
      {"english-horn", {69}},
      {"bassoon", {70}},
      {"clarinet", {71}},
      {"piccolo", {72}},
      {"flute", {73}},
      {"recorder", {74}},
      {"pan-flute", {75, 76, 77, 78, 79}},
      {"synth-lead", {80, 81, 82, 83, 84, 85, 86, 87}},
      {"synth-pad", {88, 89, 90, 91, 92, 93, 94, 95}},
      {"synth-effects", {96, 97, 98, 99, 100, 101, 102, 103}},
      {"sitar", {104}},
      {"banjo", {105, 106, 107}},
      {"bagpipe", {109, 111}},
      {"percussion", {112, 113, 114, 115, 116, 117, 118, 119, 120, 121, 122, 123, 124, 125, 126, 127}},
      {"drums", {}},
  };
  return classes;
}

inline constexpr int kNumInstrumentClasses = 61;
inline constexpr int kDrumClass = 60;

inline int instrument_class(const midi::Instrument& inst) {
  static const std::array<int, 128> table = [] {
    std::array<int, 128> t{};
    t.fill(-1);
    const auto& cls = instrument_classes();
    for (std::size_t c = 0; c < cls.size(); ++c)
      for (int p : cls[c].programs) t[static_cast<std::size_t>(p)] = static_cast<int>(c);
    return t;
  }();
  if (inst.is_drum) return kDrumClass;
  if (inst.program < 0 || inst.program > 127) throw DataError("program " + std::to_string(inst.program) + " out of range");
  return table[static_cast<std::size_t>(inst.program)];
}

inline midi::Instrument class_instrument(int cls) {
  if (cls == kDrumClass) return {0, true};
  if (cls < 0 || cls >= kNumInstrumentClasses) throw DataError("instrument class " + std::to_string(cls) + " out of range");
  return {instrument_classes()[static_cast<std::size_t>(cls)].programs.front(), false};
}

}  // namespace nmt::encoding
