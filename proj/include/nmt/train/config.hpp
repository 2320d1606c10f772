#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nmt/core/error.hpp"

namespace nmt::train {

struct TrainConfig {
  long steps = 100000;
  std::size_t batch_size = 8;
  long warmup_steps = 2000;
  double lr_max = 1e-4;
  std::optional<double> lr_min;  // lr_max / 10 when unset
  double beta1 = 0.9;
  double beta2 = 0.95;
  double weight_decay = 0.01;
  double clip = 1.0;
  std::uint64_t seed = 0;
  long validate_every = 1000;
  long checkpoint_every = 1000;
  std::size_t segment_length = 512;
  bool augment = true;

  double min_lr() const { return lr_min.value_or(lr_max / 10.0); }

  void validate() const {
    auto fail = [](const std::string& key, const std::string& why) { throw ConfigError("train." + key + ": " + why); };
    if (steps <= 0) fail("steps", "must be positive");
    if (warmup_steps < 0 || warmup_steps >= steps) fail("warmup_steps", "must satisfy 0 <= warmup_steps < steps");
    if (batch_size < 1) fail("batch_size", "must be at least 1");
    if (!(lr_max > 0)) fail("lr_max", "must be positive");
    if (min_lr() < 0 || min_lr() > lr_max) fail("lr_min", "must lie in [0, lr_max]");
    if (beta1 < 0 || beta1 >= 1) fail("beta1", "must lie in [0, 1)");
    if (beta2 < 0 || beta2 >= 1) fail("beta2", "must lie in [0, 1)");
    if (!(clip > 0)) fail("clip", "must be positive");
    if (validate_every < 1) fail("validate_every", "must be at least 1");
    if (checkpoint_every < 1) fail("checkpoint_every", "must be at least 1");
    if (segment_length < 1) fail("segment_length", "must be at least 1");
  }

  bool operator==(const TrainConfig&) const = default;
};

// Linear warmup from 0 to lr_max, then cosine decay to lr_min at `steps`.
inline double lr_schedule(const TrainConfig& c, long step) {
  const double lo = c.min_lr();
  if (step <= 0) return 0.0;
  if (step >= c.steps) return lo;
  if (step <= c.warmup_steps) return c.lr_max * static_cast<double>(step) / static_cast<double>(c.warmup_steps);
  const double progress = static_cast<double>(step - c.warmup_steps) / static_cast<double>(c.steps - c.warmup_steps);
  return 0.5 * (c.lr_max + lo) + 0.5 * (c.lr_max - lo) * std::cos(std::numbers::pi * progress);
}

inline nlohmann::json to_json(const TrainConfig& c) {
  nlohmann::json j{{"steps", c.steps},
                   {"batch_size", c.batch_size},
                   {"warmup_steps", c.warmup_steps},
                   {"lr_max", c.lr_max},
                   {"beta1", c.beta1},
                   {"beta2", c.beta2},
                   {"weight_decay", c.weight_decay},
                   {"clip", c.clip},
                   {"seed", c.seed},
                   {"validate_every", c.validate_every},
                   {"checkpoint_every", c.checkpoint_every},
                   {"segment_length", c.segment_length},
                   {"augment", c.augment}};
  if (c.lr_min) j["lr_min"] = *c.lr_min;
  return j;
}

inline TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c = {}) {
  static const std::vector<std::string> known{"steps", "batch_size", "warmup_steps", "lr_max", "lr_min",
                                              "beta1", "beta2", "weight_decay", "clip", "seed",
                                              "validate_every", "checkpoint_every", "segment_length", "augment"};
  for (const auto& [k, v] : j.items())
    if (std::find(known.begin(), known.end(), k) == known.end()) throw ConfigError("unknown train key '" + k + "'");
  try {
    c.steps = j.value("steps", c.steps);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
    c.lr_max = j.value("lr_max", c.lr_max);
    if (j.contains("lr_min")) c.lr_min = j["lr_min"].get<double>();
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.clip = j.value("clip", c.clip);
    c.seed = j.value("seed", c.seed);
    c.validate_every = j.value("validate_every", c.validate_every);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    c.segment_length = j.value("segment_length", c.segment_length);
    c.augment = j.value("augment", c.augment);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  return c;
}

}  // namespace nmt::train
