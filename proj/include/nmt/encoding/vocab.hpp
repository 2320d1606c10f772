#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nmt/core/error.hpp"
#include "nmt/encoding/instruments.hpp"
#include "nmt/midi/piece.hpp"

namespace nmt::encoding {

enum class Feature { kMetric, kType, kBeat, kChord, kTempo, kInstrument, kPitch, kDuration, kVelocity };
inline constexpr int kNumFeatures = 9;

inline const char* feature_name(Feature f) {
  static const char* names[] = {"metric", "type", "beat", "chord", "tempo", "instrument", "pitch", "duration", "velocity"};
  return names[static_cast<int>(f)];
}

inline Feature feature_from_name(const std::string& s) {
  for (int i = 0; i < kNumFeatures; ++i)
    if (s == feature_name(static_cast<Feature>(i))) return static_cast<Feature>(i);
  throw ConfigError("unknown feature '" + s + "'");
}

// Sentinels stored in token slots. Neither owns an embedding row or a loss term.
inline constexpr int kIgnore = -1;  // feature not present in this token
inline constexpr int kPad = -2;     // batch padding
// Index 0 of the chord and tempo vocabularies: value unchanged since the last position.
inline constexpr int kContinue = 0;

enum Metric { kMetricSSS = 0, kMetricNSS = 1, kMetricNNS = 2, kMetricNNN = 3 };
enum CpType { kCpMetricBar = 0, kCpMetric = 1, kCpNote = 2 };

// Optional features; metric, beat, pitch and duration are always present.
struct FeatureConfig {
  bool instrument = true;
  bool chord = true;
  bool tempo = true;
  bool velocity = true;

  bool operator==(const FeatureConfig&) const = default;
};

inline constexpr int kTempoBins = 24;
inline constexpr double kTempoMinBpm = 30.0;
inline constexpr double kTempoMaxBpm = 240.0;
inline constexpr int kVelocityBins = 32;
inline constexpr int kDefaultVelocity = 64;

// Geometric tempo bin edges: kTempoBins + 1 values from kTempoMinBpm to kTempoMaxBpm.
inline double tempo_edge(int k) { return kTempoMinBpm * std::pow(kTempoMaxBpm / kTempoMinBpm, double(k) / kTempoBins); }

// Bin of a tempo in BPM; sets *clamped when it lies outside [30, 240).
inline int tempo_bin(double bpm, bool* clamped = nullptr) {
  const double x = std::floor(kTempoBins * std::log(bpm / kTempoMinBpm) / std::log(kTempoMaxBpm / kTempoMinBpm));
  const int b = std::clamp(static_cast<int>(std::clamp(x, -1.0, double(kTempoBins))), 0, kTempoBins - 1);
  if (clamped) *clamped = x < 0 || x >= kTempoBins;
  return b;
}

// Representative tempo of a bin (geometric center) in integer microseconds per beat.
inline int tempo_bin_micros(int b) {
  const double bpm = kTempoMinBpm * std::pow(kTempoMaxBpm / kTempoMinBpm, (b + 0.5) / kTempoBins);
  return static_cast<int>(std::lround(60'000'000.0 / bpm));
}

inline int velocity_bin(int v) { return std::min(kVelocityBins - 1, (std::clamp(v, 1, 127) - 1) * kVelocityBins / 127); }
inline int velocity_bin_value(int b) { return static_cast<int>(std::lround(1.0 + (b + 0.5) * 127.0 / kVelocityBins)); }

// Per-feature value tables for one corpus.
struct FeatureVocab {
  int resolution = 4;
  long beat_positions = 16;  // longest measure in grid units
  long duration_cap = 64;    // four of the longest measures
  FeatureConfig features;

  bool active(Feature f) const {
    switch (f) {
      case Feature::kInstrument: return features.instrument;
      case Feature::kChord: return features.chord;
      case Feature::kTempo: return features.tempo;
      case Feature::kVelocity: return features.velocity;
      default: return true;
    }
  }

  // Number of indices in a feature's vocabulary, specials included.
  int size(Feature f) const {
    switch (f) {
      case Feature::kMetric: return 4;
      case Feature::kType: return 3;
      case Feature::kBeat: return static_cast<int>(beat_positions);
      case Feature::kChord: return 2 + 12 * midi::kNumChordQualities;
      case Feature::kTempo: return 1 + kTempoBins;
      case Feature::kInstrument: return kNumInstrumentClasses;
      case Feature::kPitch: return 128;
      case Feature::kDuration: return static_cast<int>(duration_cap);
      case Feature::kVelocity: return kVelocityBins;
    }
    return 0;
  }

  // Human-readable value name for index `i` of feature `f`.
  std::string value_name(Feature f, int i) const {
    if (i == kIgnore) return "-";
    if (i == kPad) return "PAD";
    if (i < 0 || i >= size(f)) throw DataError(std::string(feature_name(f)) + " index " + std::to_string(i) + " out of range");
    char buf[64];
    switch (f) {
      case Feature::kMetric: {
        static const char* n[] = {"SSS", "NSS", "NNS", "NNN"};
        return n[i];
      }
      case Feature::kType: {
        static const char* n[] = {"Metric-Bar", "Metric", "Note"};
        return n[i];
      }
      case Feature::kBeat: return "beat:" + std::to_string(i);
      case Feature::kChord: return i == kContinue ? "CONTINUE" : "chord:" + midi::Chord::from_index(i - 1).name();
      case Feature::kTempo:
        if (i == kContinue) return "CONTINUE";
        std::snprintf(buf, sizeof buf, "tempo:%.1f-%.1f", tempo_edge(i - 1), tempo_edge(i));
        return buf;
      case Feature::kInstrument: return std::string("inst:") + instrument_classes()[static_cast<std::size_t>(i)].name;
      case Feature::kPitch: return "pitch:" + std::to_string(i);
      case Feature::kDuration: return "dur:" + std::to_string(i + 1);
      case Feature::kVelocity: return "vel:" + std::to_string(velocity_bin_value(i));
    }
    return "?";
  }

  std::vector<std::string> values(Feature f) const {
    std::vector<std::string> out;
    for (int i = 0; i < size(f); ++i) out.push_back(value_name(f, i));
    return out;
  }

  bool operator==(const FeatureVocab&) const = default;
};

// Vocabulary for a quantized corpus. All pieces must share one resolution.
inline FeatureVocab build_vocab(const std::vector<midi::Piece>& corpus, const FeatureConfig& features) {
  if (corpus.empty()) throw DataError("build_vocab: empty corpus");
  FeatureVocab v;
  v.features = features;
  v.resolution = corpus.front().resolution;
  v.beat_positions = 0;
  for (const auto& p : corpus) {
    if (p.resolution != v.resolution)
      throw DataError("build_vocab: mixed resolutions " + std::to_string(v.resolution) + " and " +
                      std::to_string(p.resolution) + " (piece '" + p.source_id + "')");
    v.beat_positions = std::max(v.beat_positions, p.measure_length());
  }
  v.duration_cap = 4 * v.beat_positions;
  return v;
}

inline nlohmann::json to_json(const FeatureVocab& v) {
  nlohmann::json j;
  j["resolution"] = v.resolution;
  j["beat_positions"] = v.beat_positions;
  j["duration_cap"] = v.duration_cap;
  j["features"] = {{"instrument", v.features.instrument},
                   {"chord", v.features.chord},
                   {"tempo", v.features.tempo},
                   {"velocity", v.features.velocity}};
  j["specials"] = {{"IGNORE", kIgnore}, {"PAD", kPad}, {"CONTINUE", kContinue}, {"BOS", "learned model row"}};
  for (int f = 0; f < kNumFeatures; ++f) j["values"][feature_name(static_cast<Feature>(f))] = v.values(static_cast<Feature>(f));
  return j;
}

// Parses a vocabulary file and checks every listed value against the rebuilt tables.
inline FeatureVocab vocab_from_json(const nlohmann::json& j) {
  FeatureVocab v;
  try {
    v.resolution = j.at("resolution").get<int>();
    v.beat_positions = j.at("beat_positions").get<long>();
    v.duration_cap = j.at("duration_cap").get<long>();
    const auto& f = j.at("features");
    v.features = {f.at("instrument").get<bool>(), f.at("chord").get<bool>(), f.at("tempo").get<bool>(),
                  f.at("velocity").get<bool>()};
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("vocabulary file: ") + e.what());
  }
  if (v.resolution <= 0 || v.beat_positions <= 0 || v.duration_cap <= 0) throw DataError("vocabulary file: nonpositive size");
  if (j.contains("values"))
    for (int f = 0; f < kNumFeatures; ++f) {
      const auto name = feature_name(static_cast<Feature>(f));
      if (j["values"].contains(name) && j["values"][name].get<std::vector<std::string>>() != v.values(static_cast<Feature>(f)))
        throw DataError(std::string("vocabulary file: value list for '") + name + "' does not match");
    }
  return v;
}

}  // namespace nmt::encoding
