#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "nmt/core/rng.hpp"

namespace nmt::gen {

inline constexpr double kMaskedLogit = -std::numeric_limits<double>::infinity();
// Temperatures searched for listening samples.
inline constexpr double kTemperatureRange[2] = {1.0, 1.3};

struct SamplerConfig {
  double top_p = 0.99;
  double temperature = 1.1;  // 0 selects greedy decoding
  std::size_t max_tokens = 1024;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(top_p > 0.0 && top_p <= 1.0)) throw ConfigError("sampler.top_p must lie in (0, 1]");
    if (!(temperature >= 0.0) || !std::isfinite(temperature)) throw ConfigError("sampler.temperature must be >= 0");
    if (max_tokens == 0) throw ConfigError("sampler.max_tokens must be positive");
  }
  bool operator==(const SamplerConfig&) const = default;
};

inline nlohmann::json to_json(const SamplerConfig& c) {
  return {{"top_p", c.top_p}, {"temperature", c.temperature}, {"max_tokens", c.max_tokens}, {"seed", c.seed}};
}

inline SamplerConfig sampler_config_from_json(const nlohmann::json& j, SamplerConfig c = {}) {
  for (const auto& [k, v] : j.items())
    if (k != "top_p" && k != "temperature" && k != "max_tokens" && k != "seed")
      throw ConfigError("unknown sampler key '" + k + "'");
  try {
    c.top_p = j.value("top_p", c.top_p);
    c.temperature = j.value("temperature", c.temperature);
    c.max_tokens = j.value("max_tokens", c.max_tokens);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("sampler config: ") + e.what());
  }
  return c;
}

// Probabilities nucleus sampling draws from: softmax(logits / temperature),
// restricted to the most probable values whose mass first reaches top_p,
// renormalized. Masked logits (-inf) get probability zero.
inline std::vector<double> nucleus_distribution(std::span<const double> logits, double top_p, double temperature) {
  if (logits.empty()) throw ConfigError("nucleus_sample: empty logits");
  double mx = kMaskedLogit;
  for (double l : logits) {
    if (std::isnan(l) || l == std::numeric_limits<double>::infinity()) throw DataError("nucleus_sample: non-finite logit");
    mx = std::max(mx, l);
  }
  if (mx == kMaskedLogit) throw RuntimeFailure("nucleus_sample: every value is masked");
  std::vector<double> p(logits.size(), 0.0);
  if (temperature == 0.0) {
    p[static_cast<std::size_t>(std::max_element(logits.begin(), logits.end()) - logits.begin())] = 1.0;
    return p;
  }
  double total = 0;
  for (std::size_t i = 0; i < p.size(); ++i) total += p[i] = logits[i] == kMaskedLogit ? 0.0 : std::exp((logits[i] - mx) / temperature);
  for (double& x : p) x /= total;
  std::vector<std::size_t> order(p.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p[a] > p[b]; });
  double kept = 0;
  std::size_t n = 0;
  while (n < order.size() && p[order[n]] > 0.0) {
    kept += p[order[n++]];
    if (kept >= top_p * (1.0 - 1e-12)) break;
  }
  std::vector<double> out(p.size(), 0.0);
  for (std::size_t k = 0; k < n; ++k) out[order[k]] = p[order[k]] / kept;
  return out;
}

inline std::size_t nucleus_sample(std::span<const double> logits, double top_p, double temperature, Rng& rng) {
  const auto p = nucleus_distribution(logits, top_p, temperature);
  if (temperature == 0.0) return static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
  return rng.categorical(p);
}

}  // namespace nmt::gen
