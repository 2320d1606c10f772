#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nmt/core/error.hpp"
#include "nmt/core/rng.hpp"

namespace nmt::synth {

enum class Dependency { kIndependent, kIntra, kInter };

inline const char* dependency_name(Dependency d) {
  static const char* n[] = {"independent", "intra", "inter"};
  return n[static_cast<int>(d)];
}

inline Dependency dependency_from_name(const std::string& s) {
  for (int i = 0; i < 3; ++i)
    if (s == dependency_name(static_cast<Dependency>(i))) return static_cast<Dependency>(i);
  throw ConfigError("unknown dependency mode '" + s + "' (expected independent, intra or inter)");
}

inline constexpr double kMaxStates = 1e6;

// Generating distribution over compound tokens. Every sub-token has an
// explicit conditional distribution given the earlier sub-tokens of its
// token and the previous token:
//   independent  f_j ~ Zipf(V_j), no dependencies
//   intra        f_0 ~ Zipf(V_0); f_1 = f_0 mod V_1; f_j = f_{j-1} + e (mod V_j) for j >= 2
//   inter        f_j = f_j' + e (mod V_j), where f' is the previous token; the
//                first token is uniform
// with e drawn from a fixed three-point noise {0: 0.7, 1: 0.2, 2: 0.1}.
class SynthDistribution {
 public:
  SynthDistribution(std::vector<int> vocab, Dependency dep) : vocab_(std::move(vocab)), dep_(dep) {
    if (vocab_.empty()) throw ConfigError("synth: at least one feature is required");
    double states = 1;
    for (int v : vocab_) {
      if (v < 3) throw ConfigError("synth: every vocabulary needs at least 3 values");
      states *= v;
    }
    if (dep_ == Dependency::kIntra && vocab_.size() < 2) throw ConfigError("synth: intra mode needs two features");
    if (states > kMaxStates)
      throw ConfigError("synth: " + std::to_string(static_cast<long long>(states)) +
                        " states per token exceed the 1e6 exact-enumeration limit");
  }

  const std::vector<int>& vocab() const { return vocab_; }
  Dependency dependency() const { return dep_; }

  static constexpr double kNoise[3] = {0.7, 0.2, 0.1};

  // P(f_j = . | prefix of this token, previous token or nullopt).
  std::vector<double> conditional(std::size_t j, std::span<const int> prefix,
                                  std::optional<std::span<const int>> prev) const {
    const int V = vocab_[j];
    std::vector<double> p(static_cast<std::size_t>(V), 0.0);
    auto noisy = [&](long base) {
      for (int e = 0; e < 3; ++e) p[static_cast<std::size_t>(((base + e) % V + V) % V)] += kNoise[e];
    };
    switch (dep_) {
      case Dependency::kIndependent: return zipf(V);
      case Dependency::kIntra:
        if (j == 0) return zipf(V);
        if (j == 1) {
          p[static_cast<std::size_t>(prefix[0] % V)] = 1.0;
          return p;
        }
        noisy(prefix[j - 1]);
        return p;
      case Dependency::kInter:
        if (!prev) return std::vector<double>(static_cast<std::size_t>(V), 1.0 / V);
        noisy((*prev)[j]);
        return p;
    }
    return p;
  }

  std::vector<int> sample_sequence(std::size_t length, Rng& rng) const {
    const std::size_t J = vocab_.size();
    std::vector<int> out;
    out.reserve(length * J);
    for (std::size_t t = 0; t < length; ++t) {
      std::vector<int> token;
      std::optional<std::span<const int>> prev;
      if (t > 0) prev = std::span<const int>(out.data() + (t - 1) * J, J);
      for (std::size_t j = 0; j < J; ++j) token.push_back(static_cast<int>(rng.categorical(conditional(j, token, prev))));
      out.insert(out.end(), token.begin(), token.end());
    }
    return out;
  }

  // Exact per-feature conditional entropies H(f_j | f_<j, previous token), by
  // enumerating every token value given `prev` (nullopt: the first token).
  std::vector<double> feature_entropy(std::optional<std::span<const int>> prev) const {
    const std::size_t J = vocab_.size();
    std::vector<double> h(J, 0.0);
    std::vector<int> token;
    auto rec = [&](auto&& self, std::size_t j, double mass) -> void {
      if (j == J) return;
      const auto p = conditional(j, token, prev);
      for (std::size_t x = 0; x < p.size(); ++x) {
        if (p[x] == 0.0) continue;
        h[j] -= mass * p[x] * std::log(p[x]);
        token.push_back(static_cast<int>(x));
        self(self, j + 1, mass * p[x]);
        token.pop_back();
      }
    };
    rec(rec, 0, 1.0);
    return h;
  }

  // Expected per-feature NLL of the true distribution averaged over the
  // positions of a sequence of `length` tokens. The conditional entropy of
  // later tokens does not depend on the previous token's value (every
  // dependency is a shift mod V), so it is enumerated once at a zero context.
  std::vector<double> expected_nll(std::size_t length) const {
    const auto first = feature_entropy(std::nullopt);
    const std::vector<int> zero(vocab_.size(), 0);
    const auto later = feature_entropy(std::span<const int>(zero));
    std::vector<double> out(vocab_.size());
    for (std::size_t j = 0; j < out.size(); ++j)
      out[j] = (first[j] + static_cast<double>(length - 1) * later[j]) / static_cast<double>(length);
    return out;
  }

  // Entropy of f_j alone (no conditioning) on the first token; used to bound
  // heads that cannot see the rest of the token.
  double marginal_entropy(std::size_t j) const {
    std::vector<double> m(static_cast<std::size_t>(vocab_[j]), 0.0);
    std::vector<int> token;
    auto rec = [&](auto&& self, std::size_t k, double mass) -> void {
      const auto p = conditional(k, token, std::nullopt);
      for (std::size_t x = 0; x < p.size(); ++x) {
        if (p[x] == 0.0) continue;
        if (k == j) {
          m[x] += mass * p[x];
          continue;
        }
        token.push_back(static_cast<int>(x));
        self(self, k + 1, mass * p[x]);
        token.pop_back();
      }
    };
    rec(rec, 0, 1.0);
    double h = 0;
    for (double x : m)
      if (x > 0) h -= x * std::log(x);
    return h;
  }

 private:
  static std::vector<double> zipf(int V) {
    std::vector<double> p(static_cast<std::size_t>(V));
    double z = 0;
    for (int k = 0; k < V; ++k) z += p[static_cast<std::size_t>(k)] = 1.0 / (k + 1);
    for (auto& x : p) x /= z;
    return p;
  }

  std::vector<int> vocab_;
  Dependency dep_;
};

struct SynthCorpus {
  std::vector<int> vocab;
  Dependency dependency = Dependency::kIndependent;
  std::size_t length = 0;
  std::uint64_t seed = 0;
  std::vector<std::vector<int>> sequences;
  std::vector<double> feature_entropy;  // expected per-feature NLL of the true distribution
  double entropy = 0;                   // mean over features

  std::vector<std::string> feature_names() const {
    std::vector<std::string> n;
    for (std::size_t j = 0; j < vocab.size(); ++j) n.push_back("f" + std::to_string(j));
    return n;
  }
};

inline SynthCorpus synth_corpus(std::vector<int> vocab, Dependency dep, std::size_t sequences, std::size_t length,
                                std::uint64_t seed) {
  if (length == 0 || sequences == 0) throw ConfigError("synth: need at least one sequence of one token");
  const SynthDistribution dist(vocab, dep);
  SynthCorpus c;
  c.vocab = std::move(vocab);
  c.dependency = dep;
  c.length = length;
  c.seed = seed;
  for (std::size_t s = 0; s < sequences; ++s) {
    Rng rng(derive_seed(seed, s));
    c.sequences.push_back(dist.sample_sequence(length, rng));
  }
  c.feature_entropy = dist.expected_nll(length);
  for (double h : c.feature_entropy) c.entropy += h / static_cast<double>(c.feature_entropy.size());
  return c;
}

inline nlohmann::json to_json(const SynthCorpus& c) {
  return {{"vocab_sizes", c.vocab},      {"dependency", dependency_name(c.dependency)},
          {"length", c.length},          {"seed", c.seed},
          {"feature_entropy", c.feature_entropy}, {"entropy", c.entropy},
          {"sequences", c.sequences}};
}

inline SynthCorpus synth_corpus_from_json(const nlohmann::json& j) {
  SynthCorpus c;
  try {
    c.vocab = j.at("vocab_sizes").get<std::vector<int>>();
    c.dependency = dependency_from_name(j.at("dependency").get<std::string>());
    c.length = j.at("length").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.feature_entropy = j.at("feature_entropy").get<std::vector<double>>();
    c.entropy = j.at("entropy").get<double>();
    c.sequences = j.at("sequences").get<std::vector<std::vector<int>>>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("synth corpus file: ") + e.what());
  }
  for (const auto& s : c.sequences)
    if (s.size() != c.length * c.vocab.size()) throw DataError("synth corpus file: sequence length mismatch");
  return c;
}

}  // namespace nmt::synth
