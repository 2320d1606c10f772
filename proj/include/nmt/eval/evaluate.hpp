#pragma once

#include <cmath>
#include <cstdio>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nmt/encoding/codec.hpp"
#include "nmt/model/model.hpp"
#include "nmt/train/batches.hpp"

namespace nmt::eval {

inline constexpr double kUnscored = std::numeric_limits<double>::quiet_NaN();

// One evaluation window over token positions [begin, end); positions in
// [score_begin, end) are scored in it.
struct Window {
  std::size_t begin = 0, end = 0, score_begin = 0;
  bool operator==(const Window&) const = default;
};

// The first window scores everything it holds; each later window advances
// `stride` positions and scores only the newly covered ones, so every
// position is scored exactly once with at least window - stride tokens of
// context (except inside the first window).
inline std::vector<Window> moving_windows(std::size_t length, std::size_t window, std::size_t stride) {
  if (window == 0 || stride == 0 || stride > window)
    throw ConfigError("moving window needs 1 <= stride <= window (got window " + std::to_string(window) + ", stride " +
                      std::to_string(stride) + ")");
  std::vector<Window> out;
  if (length == 0) return out;
  std::size_t covered = std::min(length, window);
  out.push_back({0, covered, 0});
  while (covered < length) {
    const std::size_t end = std::min(covered + stride, length);
    out.push_back({end - window, end, covered});
    covered = end;
  }
  return out;
}

// Log-probability of every sub-token (token * width + slot) of one sequence;
// kUnscored for IGNORE and PAD slots.
struct SequenceLogProbs {
  std::vector<double> logp;
  bool short_sequence = false;  // shorter than the window
};

class Scorer {
 public:
  virtual ~Scorer() = default;
  virtual SequenceLogProbs score(const encoding::TokenSequence& seq) const = 0;
};

// Teacher-forced log-probabilities of a token stream under `m`, scored with
// moving windows.
template <class T>
SequenceLogProbs moving_window_nll(const model::Model<T>& m, std::span<const int> tokens, std::size_t width,
                                   std::size_t window, std::size_t stride) {
  if (width != m.config().num_features())
    throw ConfigError("sequence has " + std::to_string(width) + " slots per token, model expects " +
                      std::to_string(m.config().num_features()));
  tensor::NoGradGuard no_grad;
  const std::size_t n = tokens.size() / width;
  SequenceLogProbs out;
  out.logp.assign(tokens.size(), kUnscored);
  out.short_sequence = n < window;
  std::vector<T> lp;
  for (const auto& w : moving_windows(n, window, stride)) {
    model::Batch b{1, w.end - w.begin, width,
                   std::vector<int>(tokens.begin() + static_cast<long>(w.begin * width),
                                    tokens.begin() + static_cast<long>(w.end * width))};
    const auto logits = m.subtoken_logits(m.hidden(b), b);
    for (std::size_t j = 0; j < width; ++j) {
      const std::size_t V = logits[j].cols();
      lp.resize(V);
      for (std::size_t i = w.score_begin; i < w.end; ++i) {
        const int target = tokens[i * width + j];
        if (target < 0) continue;
        tensor::log_softmax_row<T>(logits[j].values().subspan((i - w.begin) * V, V), lp);
        out.logp[i * width + j] = static_cast<double>(lp[static_cast<std::size_t>(target)]);
      }
    }
  }
  return out;
}

template <class T>
class ModelScorer : public Scorer {
 public:
  ModelScorer(const model::Model<T>& m, encoding::Scheme scheme, const encoding::FeatureVocab& v, std::size_t window,
              std::size_t stride)
      : model_(m), scheme_(scheme), window_(window), stride_(stride) {
    const auto [sizes, names] = train::scheme_vocab(scheme, v);
    if (sizes != m.config().vocab_sizes)
      throw ConfigError(std::string("model vocabulary does not match scheme ") + encoding::scheme_name(scheme) +
                        " under this corpus vocabulary");
    if (window > m.config().max_sequence_length) throw ConfigError("eval window exceeds model max_sequence_length");
    moving_windows(1, window, stride);
  }

  SequenceLogProbs score(const encoding::TokenSequence& seq) const override {
    if (seq.scheme != scheme_)
      throw ConfigError(std::string("sequence scheme ") + encoding::scheme_name(seq.scheme) + " differs from model scheme " +
                        encoding::scheme_name(scheme_));
    return moving_window_nll(model_, seq.data, static_cast<std::size_t>(seq.width), window_, stride_);
  }

 private:
  const model::Model<T>& model_;
  encoding::Scheme scheme_;
  std::size_t window_, stride_;
};

// Report columns: REMI-comparable token kinds. Bar covers the metric and type slots.
inline const std::vector<std::string>& report_columns() {
  static const std::vector<std::string> c{"bar", "beat", "chord", "tempo", "instrument", "pitch", "duration", "velocity"};
  return c;
}

inline int report_column(encoding::Feature f) {
  using F = encoding::Feature;
  switch (f) {
    case F::kMetric:
    case F::kType: return 0;
    case F::kBeat: return 1;
    case F::kChord: return 2;
    case F::kTempo: return 3;
    case F::kInstrument: return 4;
    case F::kPitch: return 5;
    case F::kDuration: return 6;
    case F::kVelocity: return 7;
  }
  return 0;
}

// One REMI-comparable log-probability per REMI token, with its report column.
struct ComparableLogProbs {
  std::vector<double> logp;
  std::vector<int> column;
  bool leftover = false;  // trailing omitted mass folded into the last matched token
};

// Moves the log-probability of every omitted sub-token into the next matched
// sub-token, in prediction order. The total is unchanged.
inline ComparableLogProbs adjust_compound_nll(std::span<const double> logp, const encoding::RemiAlignment& a,
                                              std::span<const int> slot_columns) {
  if (logp.size() != a.remi_index.size()) throw ShapeError("adjust_compound_nll: alignment does not match the sequence");
  const std::size_t width = slot_columns.size();
  ComparableLogProbs out;
  out.logp.assign(a.matched, 0.0);
  out.column.assign(a.matched, 0);
  double pending = 0.0;
  for (std::size_t k = 0; k < logp.size(); ++k) {
    const int r = a.remi_index[k];
    if (r == encoding::RemiAlignment::kAbsent) continue;
    if (std::isnan(logp[k])) throw DataError("adjust_compound_nll: sub-token " + std::to_string(k) + " was not scored");
    if (r == encoding::RemiAlignment::kOmitted) {
      pending += logp[k];
      continue;
    }
    out.logp[static_cast<std::size_t>(r)] = logp[k] + pending;
    out.column[static_cast<std::size_t>(r)] = slot_columns[k % width];
    pending = 0.0;
  }
  if (pending != 0.0) {
    if (out.logp.empty()) throw DataError("adjust_compound_nll: sequence has no REMI-comparable token");
    out.logp.back() += pending;
    out.leftover = true;
  }
  return out;
}

// REMI-comparable log-probabilities of one sequence in any scheme.
inline ComparableLogProbs comparable_log_probs(const encoding::TokenSequence& seq, const SequenceLogProbs& lp,
                                               const encoding::FeatureVocab& v) {
  if (!encoding::is_compound(seq.scheme)) {
    const encoding::RemiVocab rv(v);
    ComparableLogProbs out;
    out.logp = lp.logp;
    for (int id : seq.data) out.column.push_back(report_column(rv.split(id).first));
    return out;
  }
  std::vector<int> columns;
  for (auto f : encoding::scheme_slots(seq.scheme)) columns.push_back(report_column(f));
  return adjust_compound_nll(lp.logp, encoding::align_to_remi(seq, v), columns);
}

struct NllReport {
  std::string scheme;
  std::size_t window = 0, stride = 0;
  std::vector<std::string> columns = report_columns();
  std::vector<double> nll_sum = std::vector<double>(8, 0.0);  // REMI-comparable, per column
  std::vector<double> count = std::vector<double>(8, 0.0);
  std::vector<std::string> slots;       // raw model slots
  std::vector<double> raw_nll_sum, raw_count;
  std::size_t sequences = 0, short_sequences = 0, leftover_sequences = 0;

  double feature_nll(std::size_t c) const { return count[c] > 0 ? nll_sum[c] / count[c] : kUnscored; }
  double raw_feature_nll(std::size_t s) const { return raw_count[s] > 0 ? raw_nll_sum[s] / raw_count[s] : kUnscored; }
  double total_count() const {
    double n = 0;
    for (double c : count) n += c;
    return n;
  }
  // Mean over all REMI-comparable predictions (token-weighted).
  double mean_over_tokens() const {
    double s = 0;
    for (double x : nll_sum) s += x;
    return s / total_count();
  }
  // Unweighted mean of the per-column values that have tokens.
  double mean_over_features() const {
    double s = 0;
    int n = 0;
    for (std::size_t c = 0; c < count.size(); ++c)
      if (count[c] > 0) s += feature_nll(c), ++n;
    return n ? s / n : kUnscored;
  }

  // Adds one scored sequence with weight `w` (1 for ordinary corpora).
  void add(const SequenceLogProbs& lp, const ComparableLogProbs& cmp, std::size_t width, double w = 1.0) {
    ++sequences;
    short_sequences += lp.short_sequence;
    leftover_sequences += cmp.leftover;
    for (std::size_t r = 0; r < cmp.logp.size(); ++r) {
      nll_sum[static_cast<std::size_t>(cmp.column[r])] -= w * cmp.logp[r];
      count[static_cast<std::size_t>(cmp.column[r])] += w;
    }
    raw_nll_sum.resize(width, 0.0);
    raw_count.resize(width, 0.0);
    for (std::size_t k = 0; k < lp.logp.size(); ++k)
      if (!std::isnan(lp.logp[k])) {
        raw_nll_sum[k % width] -= w * lp.logp[k];
        raw_count[k % width] += w;
      }
  }
};

// Scores every sequence, adjusts compound schemes to REMI-comparable
// probabilities and tallies the report. `weights` (optional) scales each
// sequence's contribution.
inline NllReport evaluate_corpus(const Scorer& scorer, const std::vector<encoding::TokenSequence>& seqs,
                                 const encoding::FeatureVocab& v, std::size_t window = 0, std::size_t stride = 0,
                                 std::span<const double> weights = {}) {
  if (seqs.empty()) throw DataError("evaluate_corpus: empty split");
  if (!weights.empty() && weights.size() != seqs.size()) throw ConfigError("evaluate_corpus: one weight per sequence");
  NllReport rep;
  rep.scheme = encoding::scheme_name(seqs.front().scheme);
  rep.window = window;
  rep.stride = stride;
  for (const auto& f : encoding::scheme_slots(seqs.front().scheme)) rep.slots.emplace_back(encoding::feature_name(f));
  if (rep.slots.empty()) rep.slots.emplace_back("remi");
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    if (seqs[i].scheme != seqs.front().scheme) throw DataError("evaluate_corpus: mixed schemes in one split");
    const auto lp = scorer.score(seqs[i]);
    rep.add(lp, comparable_log_probs(seqs[i], lp, v), static_cast<std::size_t>(seqs[i].width),
            weights.empty() ? 1.0 : weights[i]);
  }
  return rep;
}

inline nlohmann::json to_json(const NllReport& r) {
  auto num = [](double x) { return std::isfinite(x) ? nlohmann::json(x) : nlohmann::json(nullptr); };
  nlohmann::json features = nlohmann::json::object(), raw = nlohmann::json::object();
  for (std::size_t c = 0; c < r.columns.size(); ++c)
    if (r.count[c] > 0) features[r.columns[c]] = {{"nll", num(r.feature_nll(c))}, {"count", r.count[c]}};
  for (std::size_t s = 0; s < r.raw_count.size(); ++s)
    raw[r.slots[s]] = {{"nll", num(r.raw_feature_nll(s))}, {"count", r.raw_count[s]}};
  return {{"scheme", r.scheme},
          {"window", r.window},
          {"stride", r.stride},
          {"sequences", r.sequences},
          {"short_sequences", r.short_sequences},
          {"leftover_sequences", r.leftover_sequences},
          {"mean_over_tokens", num(r.mean_over_tokens())},
          {"mean_over_features", num(r.mean_over_features())},
          {"features", features},
          {"raw_slots", raw}};
}

// kind,name,nll,count with kind one of feature, raw, mean.
inline std::string to_csv(const NllReport& r) {
  auto num = [](double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", x);
    return std::string(buf);
  };
  std::string s = "kind,name,nll,count\n";
  for (std::size_t c = 0; c < r.columns.size(); ++c)
    if (r.count[c] > 0) s += "feature," + r.columns[c] + "," + num(r.feature_nll(c)) + "," + num(r.count[c]) + "\n";
  for (std::size_t k = 0; k < r.raw_count.size(); ++k)
    s += "raw," + r.slots[k] + "," + num(r.raw_feature_nll(k)) + "," + num(r.raw_count[k]) + "\n";
  s += "mean,over_tokens," + num(r.mean_over_tokens()) + "," + num(r.total_count()) + "\n";
  s += "mean,over_features," + num(r.mean_over_features()) + "," + num(r.total_count()) + "\n";
  return s;
}

}  // namespace nmt::eval
