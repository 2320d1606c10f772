#pragma once

#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nmt/encoding/vocab.hpp"

namespace nmt::encoding {

enum class Scheme { kRemi, kCp, kNbMetricFirst, kNbPitchFirst };

inline const char* scheme_name(Scheme s) {
  static const char* names[] = {"remi", "cp", "nb-mf", "nb-pf"};
  return names[static_cast<int>(s)];
}

inline Scheme scheme_from_name(const std::string& s) {
  for (int i = 0; i < 4; ++i)
    if (s == scheme_name(static_cast<Scheme>(i))) return static_cast<Scheme>(i);
  throw ConfigError("unknown scheme '" + s + "' (expected remi, cp, nb-mf or nb-pf)");
}

inline bool is_compound(Scheme s) { return s != Scheme::kRemi; }

// Feature carried by each slot of a compound token.
inline const std::vector<Feature>& scheme_slots(Scheme s) {
  using F = Feature;
  static const std::vector<Feature> nb_mf{F::kMetric, F::kBeat, F::kChord, F::kTempo,
                                          F::kInstrument, F::kPitch, F::kDuration, F::kVelocity};
  static const std::vector<Feature> nb_pf{F::kPitch, F::kDuration, F::kVelocity, F::kMetric,
                                          F::kBeat, F::kChord, F::kTempo, F::kInstrument};
  static const std::vector<Feature> cp{F::kType, F::kBeat, F::kChord, F::kTempo,
                                       F::kInstrument, F::kPitch, F::kDuration, F::kVelocity};
  static const std::vector<Feature> remi{};
  switch (s) {
    case Scheme::kNbMetricFirst: return nb_mf;
    case Scheme::kNbPitchFirst: return nb_pf;
    case Scheme::kCp: return cp;
    case Scheme::kRemi: return remi;
  }
  return remi;
}

// Flat vocabulary of the REMI stream: Bar, then the musical values of each
// active feature (CONTINUE excluded) in the order beat, chord, tempo,
// instrument, pitch, duration, velocity.
class RemiVocab {
 public:
  static constexpr int kBar = 0;

  explicit RemiVocab(const FeatureVocab& v) : vocab_(v) {
    int next = 1;
    for (Feature f : kOrder) {
      offset_[static_cast<int>(f)] = -1;
      if (!v.active(f)) continue;
      offset_[static_cast<int>(f)] = next;
      next += musical_size(f);
    }
    size_ = next;
  }

  int size() const { return size_; }
  bool has(Feature f) const { return offset_[static_cast<int>(f)] >= 0; }

  // REMI id of a feature-vocabulary index (CONTINUE has no REMI id).
  int id(Feature f, int index) const {
    const int base = offset_[static_cast<int>(f)];
    const int k = uses_continue(f) ? index - 1 : index;
    if (base < 0 || k < 0 || k >= musical_size(f))
      throw DataError(std::string("no REMI token for ") + feature_name(f) + " index " + std::to_string(index));
    return base + k;
  }

  // Inverse of id(): the feature and feature-vocabulary index; Bar reports kMetric/SSS.
  std::pair<Feature, int> split(int id) const {
    if (id == kBar) return {Feature::kMetric, kMetricSSS};
    for (Feature f : kOrder) {
      const int base = offset_[static_cast<int>(f)];
      if (base >= 0 && id >= base && id < base + musical_size(f))
        return {f, uses_continue(f) ? id - base + 1 : id - base};
    }
    throw DataError("REMI id " + std::to_string(id) + " out of range [0, " + std::to_string(size_) + ")");
  }

  std::string name(int id) const {
    if (id == kBar) return "Bar";
    const auto [f, i] = split(id);
    return vocab_.value_name(f, i);
  }

  static bool uses_continue(Feature f) { return f == Feature::kChord || f == Feature::kTempo; }

 private:
  static constexpr Feature kOrder[] = {Feature::kBeat, Feature::kChord, Feature::kTempo, Feature::kInstrument,
                                       Feature::kPitch, Feature::kDuration, Feature::kVelocity};
  int musical_size(Feature f) const { return vocab_.size(f) - (uses_continue(f) ? 1 : 0); }

  FeatureVocab vocab_;
  int offset_[kNumFeatures]{};
  int size_ = 0;
};

// An encoded piece: `width` slots per token (1 for REMI), row-major.
struct TokenSequence {
  Scheme scheme = Scheme::kNbMetricFirst;
  int width = 8;
  std::vector<int> data;
  midi::TimeSignature time_signature;
  int resolution = 4;
  std::string source_id;

  std::size_t size() const { return width == 0 ? 0 : data.size() / static_cast<std::size_t>(width); }
  std::span<const int> token(std::size_t i) const { return {data.data() + i * width, static_cast<std::size_t>(width)}; }
  std::span<int> token(std::size_t i) { return {data.data() + i * width, static_cast<std::size_t>(width)}; }
  void push(std::span<const int> t) { data.insert(data.end(), t.begin(), t.end()); }

  bool operator==(const TokenSequence&) const = default;
};

inline nlohmann::json to_json(const TokenSequence& s) {
  return {{"scheme", scheme_name(s.scheme)},
          {"width", s.width},
          {"time_signature", {s.time_signature.numerator, s.time_signature.denominator}},
          {"resolution", s.resolution},
          {"source_id", s.source_id},
          {"tokens", s.data}};
}

inline TokenSequence token_sequence_from_json(const nlohmann::json& j) {
  TokenSequence s;
  try {
    s.scheme = scheme_from_name(j.at("scheme").get<std::string>());
    s.width = j.at("width").get<int>();
    s.time_signature = {j.at("time_signature").at(0).get<int>(), j.at("time_signature").at(1).get<int>()};
    s.resolution = j.at("resolution").get<int>();
    s.source_id = j.value("source_id", "");
    s.data = j.at("tokens").get<std::vector<int>>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("token file: ") + e.what());
  }
  if (s.width != (is_compound(s.scheme) ? 8 : 1) || s.data.size() % static_cast<std::size_t>(s.width) != 0)
    throw DataError("token file: width " + std::to_string(s.width) + " does not fit scheme " + scheme_name(s.scheme));
  return s;
}

// Debugging dump: one line per token, slot names joined by '|'.
inline std::string token_dump(const TokenSequence& s, const FeatureVocab& v) {
  std::string out;
  if (s.scheme == Scheme::kRemi) {
    const RemiVocab rv(v);
    for (int id : s.data) out += rv.name(id) + "\n";
    return out;
  }
  const auto& slots = scheme_slots(s.scheme);
  for (std::size_t i = 0; i < s.size(); ++i) {
    const auto t = s.token(i);
    for (std::size_t k = 0; k < slots.size(); ++k) {
      if (k) out += '|';
      out += v.value_name(slots[k], t[k]);
    }
    out += '\n';
  }
  return out;
}

}  // namespace nmt::encoding
