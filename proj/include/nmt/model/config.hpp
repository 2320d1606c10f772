#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nmt/core/error.hpp"

namespace nmt::model {

enum class SubDecoderKind { kParallel, kFeedForward, kRnn, kSelfAttention, kCrossAttention, kNmt };

inline const char* kind_name(SubDecoderKind k) {
  static const char* names[] = {"parallel", "ff", "rnn", "selfattn", "crossattn", "nmt"};
  return names[static_cast<int>(k)];
}

inline SubDecoderKind kind_from_name(const std::string& s) {
  for (int i = 0; i < 6; ++i)
    if (s == kind_name(static_cast<SubDecoderKind>(i))) return static_cast<SubDecoderKind>(i);
  throw ConfigError("unknown sub-decoder '" + s + "' (expected parallel, ff, rnn, selfattn, crossattn or nmt)");
}

struct ModelConfig {
  std::size_t dim = 512;
  std::size_t heads = 8;
  std::size_t main_layers = 12;
  std::size_t sub_layers = 1;
  std::size_t enricher_layers = 1;
  std::size_t window = 16;
  std::size_t max_sequence_length = 1024;
  std::size_t ff_mult = 4;
  std::vector<int> vocab_sizes;  // one entry per predicted feature, in scheme order
  std::vector<std::string> feature_names;
  SubDecoderKind kind = SubDecoderKind::kNmt;
  double dropout = 0.1;
  // Experiment switch: residual around intra-token cross-attention taken from
  // the key/value stream instead of the query stream.
  bool key_residual = false;

  std::size_t num_features() const { return vocab_sizes.size(); }

  void validate() const {
    if (dim == 0 || heads == 0 || dim % heads != 0)
      throw ConfigError("model_dim " + std::to_string(dim) + " must be a positive multiple of heads (" +
                        std::to_string(heads) + ")");
    if (window < 1) throw ConfigError("enricher window must be >= 1");
    if (vocab_sizes.empty()) throw ConfigError("model needs at least one feature");
    for (int v : vocab_sizes)
      if (v < 1) throw ConfigError("feature vocabulary sizes must be positive");
    if (!feature_names.empty() && feature_names.size() != vocab_sizes.size())
      throw ConfigError("feature_names and vocab_sizes differ in length");
    if (max_sequence_length < 1) throw ConfigError("max_sequence_length must be >= 1");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must lie in [0, 1)");
    if (ff_mult < 1) throw ConfigError("ff_mult must be >= 1");
  }

  bool operator==(const ModelConfig&) const = default;
};

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"model_dim", c.dim},
          {"heads", c.heads},
          {"main_layers", c.main_layers},
          {"subdecoder_layers", c.sub_layers},
          {"enricher_layers", c.enricher_layers},
          {"enricher_window", c.window},
          {"max_sequence_length", c.max_sequence_length},
          {"ff_mult", c.ff_mult},
          {"vocab_sizes", c.vocab_sizes},
          {"feature_names", c.feature_names},
          {"subdecoder", kind_name(c.kind)},
          {"dropout", c.dropout},
          {"key_residual", c.key_residual}};
}

// Reads the keys present in `j` over the values already in `c`.
inline ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig c = {}) {
  static const std::vector<std::string> known{"model_dim",   "heads",       "main_layers",  "subdecoder_layers",
                                              "enricher_layers", "enricher_window", "max_sequence_length",
                                              "ff_mult",     "vocab_sizes", "feature_names", "subdecoder",
                                              "dropout",     "key_residual"};
  for (const auto& [k, v] : j.items())
    if (std::find(known.begin(), known.end(), k) == known.end()) throw ConfigError("unknown model key '" + k + "'");
  try {
    c.dim = j.value("model_dim", c.dim);
    c.heads = j.value("heads", c.heads);
    c.main_layers = j.value("main_layers", c.main_layers);
    c.sub_layers = j.value("subdecoder_layers", c.sub_layers);
    c.enricher_layers = j.value("enricher_layers", c.enricher_layers);
    c.window = j.value("enricher_window", c.window);
    c.max_sequence_length = j.value("max_sequence_length", c.max_sequence_length);
    c.ff_mult = j.value("ff_mult", c.ff_mult);
    c.vocab_sizes = j.value("vocab_sizes", c.vocab_sizes);
    c.feature_names = j.value("feature_names", c.feature_names);
    if (j.contains("subdecoder")) c.kind = kind_from_name(j["subdecoder"].get<std::string>());
    c.dropout = j.value("dropout", c.dropout);
    c.key_residual = j.value("key_residual", c.key_residual);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  return c;
}

}  // namespace nmt::model
