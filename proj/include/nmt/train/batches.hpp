#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <utility>
#include <vector>

#include "nmt/core/rng.hpp"
#include "nmt/encoding/codec.hpp"
#include "nmt/midi/preprocess.hpp"
#include "nmt/model/model.hpp"

namespace nmt::train {

// Token sequences a batch stream draws segments from. Each sequence is
// row-major with width() slots per token.
class SegmentSource {
 public:
  virtual ~SegmentSource() = default;
  virtual std::size_t size() const = 0;
  virtual std::size_t width() const = 0;
  virtual bool augmentable() const { return false; }
  // Tokens of sequence `i`, transposed by `shift` semitones when augmentable.
  virtual std::span<const int> tokens(std::size_t i, int shift) const = 0;
  std::size_t length(std::size_t i, int shift = 0) const { return tokens(i, shift).size() / width(); }
};

// Already encoded sequences; shifts are ignored.
class FixedSource : public SegmentSource {
 public:
  FixedSource(std::size_t width, std::vector<std::vector<int>> sequences)
      : width_(width), sequences_(std::move(sequences)) {
    for (const auto& s : sequences_)
      if (width_ == 0 || s.size() % width_ != 0) throw DataError("sequence length is not a multiple of the token width");
  }
  std::size_t size() const override { return sequences_.size(); }
  std::size_t width() const override { return width_; }
  std::span<const int> tokens(std::size_t i, int) const override { return sequences_.at(i); }

 private:
  std::size_t width_;
  std::vector<std::vector<int>> sequences_;
};

// Quantized pieces encoded on demand; each (piece, shift) encoding is cached.
class PieceSource : public SegmentSource {
 public:
  PieceSource(std::vector<midi::Piece> pieces, encoding::FeatureVocab vocab, encoding::Scheme scheme)
      : pieces_(std::move(pieces)), vocab_(std::move(vocab)), scheme_(scheme) {}

  std::size_t size() const override { return pieces_.size(); }
  std::size_t width() const override { return encoding::is_compound(scheme_) ? 8 : 1; }
  bool augmentable() const override { return true; }

  std::span<const int> tokens(std::size_t i, int shift) const override {
    std::lock_guard lock(mutex_);
    auto [it, fresh] = cache_.try_emplace({i, shift});
    if (fresh) it->second = encoding::encode(midi::augment_pitch(pieces_.at(i), shift), vocab_, scheme_).data;
    return it->second;
  }

 private:
  std::vector<midi::Piece> pieces_;
  encoding::FeatureVocab vocab_;
  encoding::Scheme scheme_;
  mutable std::mutex mutex_;
  mutable std::map<std::pair<std::size_t, int>, std::vector<int>> cache_;
};

// Model vocabulary sizes and names for one encoding scheme.
inline std::pair<std::vector<int>, std::vector<std::string>> scheme_vocab(encoding::Scheme s,
                                                                          const encoding::FeatureVocab& v) {
  if (!encoding::is_compound(s)) return {{encoding::RemiVocab(v).size()}, {"remi"}};
  std::vector<int> sizes;
  std::vector<std::string> names;
  for (auto f : encoding::scheme_slots(s)) {
    sizes.push_back(v.size(f));
    names.emplace_back(encoding::feature_name(f));
  }
  return {sizes, names};
}

struct BatchConfig {
  std::size_t batch_size = 8;
  std::size_t segment_length = 512;
  bool augment = true;
  std::uint64_t seed = 0;
};

struct TrainBatch {
  model::Batch batch;
  std::vector<std::size_t> pieces;
  std::vector<std::size_t> offsets;
  std::vector<int> shifts;
};

// Epoch-based segment sampler. Batch `step` is a pure function of (config,
// source, step): epoch e visits every sequence once in an order shuffled under
// derive_seed(seed, e), each visit drawing a pitch shift in [-5, 6] and a
// uniformly placed segment. Shorter sequences become one padded segment.
class BatchStream {
 public:
  BatchStream(const SegmentSource& source, BatchConfig config) : source_(source), cfg_(config) {
    if (source_.size() == 0) throw DataError("make_batches: empty split");
    if (cfg_.batch_size == 0 || cfg_.segment_length == 0) throw ConfigError("make_batches: zero batch size or segment length");
  }

  TrainBatch at(long step) const {
    const std::size_t n = source_.size(), B = cfg_.batch_size, L = cfg_.segment_length, W = source_.width();
    TrainBatch out;
    out.batch = model::Batch{B, L, W, std::vector<int>(B * L * W, model::kPad)};
    for (std::size_t b = 0; b < B; ++b) {
      const std::size_t g = static_cast<std::size_t>(step) * B + b;
      const std::size_t epoch = g / n, k = g % n;
      const std::size_t piece = order(epoch)[k];
      Rng rng(derive_seed(derive_seed(cfg_.seed, epoch), k));
      const int shift = cfg_.augment && source_.augmentable()
                            ? static_cast<int>(rng.uniform_int(midi::kMinPitchShift, midi::kMaxPitchShift))
                            : 0;
      const auto tokens = source_.tokens(piece, shift);
      const std::size_t len = tokens.size() / W;
      const std::size_t offset = len > L ? static_cast<std::size_t>(rng.uniform_int(0, static_cast<long>(len - L))) : 0;
      const std::size_t take = std::min(len, L);
      std::copy_n(tokens.begin() + static_cast<long>(offset * W), take * W,
                  out.batch.tokens.begin() + static_cast<long>(b * L * W));
      out.pieces.push_back(piece);
      out.offsets.push_back(offset);
      out.shifts.push_back(shift);
    }
    return out;
  }

 private:
  const std::vector<std::size_t>& order(std::size_t epoch) const {
    std::lock_guard lock(mutex_);
    if (epoch != cached_epoch_ || cached_order_.empty()) {
      cached_order_.resize(source_.size());
      for (std::size_t i = 0; i < cached_order_.size(); ++i) cached_order_[i] = i;
      Rng rng(derive_seed(cfg_.seed ^ 0x5eedULL, epoch));
      rng.shuffle(cached_order_);
      cached_epoch_ = epoch;
    }
    return cached_order_;
  }

  const SegmentSource& source_;
  BatchConfig cfg_;
  mutable std::mutex mutex_;
  mutable std::size_t cached_epoch_ = 0;
  mutable std::vector<std::size_t> cached_order_;
};

// Fixed evaluation batches: every sequence cut into consecutive segments of
// `segment_length` tokens (last one padded), grouped `batch_size` at a time.
inline std::vector<model::Batch> evaluation_batches(const SegmentSource& source, std::size_t segment_length,
                                                    std::size_t batch_size) {
  const std::size_t W = source.width(), L = segment_length;
  std::vector<std::vector<int>> segments;
  for (std::size_t i = 0; i < source.size(); ++i) {
    const auto tokens = source.tokens(i, 0);
    const std::size_t len = tokens.size() / W;
    for (std::size_t start = 0; start < len; start += L) {
      std::vector<int> seg(L * W, model::kPad);
      const std::size_t take = std::min(L, len - start);
      std::copy_n(tokens.begin() + static_cast<long>(start * W), take * W, seg.begin());
      if (std::any_of(seg.begin(), seg.end(), [](int t) { return t >= 0; })) segments.push_back(std::move(seg));
    }
  }
  std::vector<model::Batch> out;
  for (std::size_t s = 0; s < segments.size(); s += batch_size) {
    const std::size_t B = std::min(batch_size, segments.size() - s);
    model::Batch b{B, L, W, {}};
    for (std::size_t k = 0; k < B; ++k) b.tokens.insert(b.tokens.end(), segments[s + k].begin(), segments[s + k].end());
    out.push_back(std::move(b));
  }
  return out;
}

}  // namespace nmt::train
