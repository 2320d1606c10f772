#pragma once

#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "nmt/model/config.hpp"
#include "nmt/tensor/layers.hpp"

namespace nmt::model {

using tensor::AttentionPattern;
using tensor::ForwardContext;
using tensor::Tensor;

inline constexpr int kIgnore = -1;
inline constexpr int kPad = -2;

// B sequences of L compound tokens with J sub-tokens each, row-major (b, i, j).
// Slots hold a feature index, kIgnore (feature absent) or kPad (padding).
struct Batch {
  std::size_t batch = 0, length = 0, features = 0;
  std::vector<int> tokens;

  int at(std::size_t b, std::size_t i, std::size_t j) const { return tokens[(b * length + i) * features + j]; }
  std::size_t rows() const { return batch * length; }
};

// One transformer block, pre-norm: x + Attn(LN(x)), then x + FF(LN(x)).
template <class T>
struct SelfAttentionBlock {
  tensor::LayerNorm<T> ln1, ln2;
  tensor::MultiHeadAttention<T> attn;
  tensor::FeedForward<T> ff;

  SelfAttentionBlock(tensor::ParameterStore<T>& s, const std::string& name, const ModelConfig& c)
      : ln1(s, name + ".ln1", c.dim),
        ln2(s, name + ".ln2", c.dim),
        attn(s, name + ".attn", c.dim, c.heads),
        ff(s, name + ".ff", c.dim, c.ff_mult * c.dim) {}

  Tensor<T> operator()(const Tensor<T>& x, const std::shared_ptr<const AttentionPattern>& pattern,
                       const ForwardContext& ctx) const {
    const auto n = ln1(x);
    auto y = add(x, tensor::maybe_dropout(attn(n, n, pattern), ctx));
    return add(y, tensor::maybe_dropout(ff(ln2(y), ctx), ctx));
  }
};

// Cross-attention block: queries attend a separate key/value stream; the
// residual runs along the query stream (or the key stream when `key_residual`).
template <class T>
struct CrossAttentionBlock {
  tensor::LayerNorm<T> ln_q, ln_kv, ln_ff;
  tensor::MultiHeadAttention<T> attn;
  tensor::FeedForward<T> ff;

  CrossAttentionBlock(tensor::ParameterStore<T>& s, const std::string& name, const ModelConfig& c)
      : ln_q(s, name + ".ln_q", c.dim),
        ln_kv(s, name + ".ln_kv", c.dim),
        ln_ff(s, name + ".ln_ff", c.dim),
        attn(s, name + ".attn", c.dim, c.heads),
        ff(s, name + ".ff", c.dim, c.ff_mult * c.dim) {}

  Tensor<T> operator()(const Tensor<T>& q, const Tensor<T>& kv, const std::shared_ptr<const AttentionPattern>& pattern,
                       const ForwardContext& ctx, const Tensor<T>* residual = nullptr) const {
    auto y = add(residual ? *residual : q, tensor::maybe_dropout(attn(ln_q(q), ln_kv(kv), pattern), ctx));
    return add(y, tensor::maybe_dropout(ff(ln_ff(y), ctx), ctx));
  }
};

// Per-feature log-likelihood bookkeeping from a teacher-forced pass.
template <class T>
struct ForwardResult {
  Tensor<T> loss;                    // mean over features of per-feature mean NLL
  std::vector<double> feature_nll;   // mean NLL per feature (NaN when no targets)
  std::vector<std::size_t> counts;   // scored targets per feature
  std::vector<Tensor<T>> logits;     // per feature, rows() x V_j
};

template <class T>
class Model {
 public:
  Model(ModelConfig config, std::uint64_t seed) : cfg_(std::move(config)), store_(seed) {
    cfg_.validate();
    const std::size_t d = cfg_.dim, J = cfg_.num_features();
    for (std::size_t j = 0; j < J; ++j) {
      emb_.push_back(store_.add("emb." + std::to_string(j), static_cast<std::size_t>(cfg_.vocab_sizes[j]), d,
                                tensor::Init::kNormal, false));
      heads_.emplace_back(store_, "logits." + std::to_string(j), d, static_cast<std::size_t>(cfg_.vocab_sizes[j]));
    }
    pos_ = store_.add("pos", cfg_.max_sequence_length, d, tensor::Init::kNormal, false);
    bos_ = store_.add("bos", 1, d, tensor::Init::kNormal, false);
    for (std::size_t l = 0; l < cfg_.main_layers; ++l) main_.emplace_back(store_, "main." + std::to_string(l), cfg_);
    final_ln_ = tensor::LayerNorm<T>(store_, "main.ln_f", d);
    switch (cfg_.kind) {
      case SubDecoderKind::kParallel: break;
      case SubDecoderKind::kFeedForward: ff_step_ = tensor::Linear<T>(store_, "sub.ff", 2 * d, d); break;
      case SubDecoderKind::kRnn: gru_ = tensor::GruCell<T>(store_, "sub.gru", d, d); break;
      case SubDecoderKind::kSelfAttention:
        sub_bos_ = store_.add("sub.bos", 1, d, tensor::Init::kNormal, false);
        sub_pos_ = store_.add("sub.pos", J + 1, d, tensor::Init::kNormal, false);
        for (std::size_t l = 0; l < cfg_.sub_layers; ++l) sub_self_.emplace_back(store_, "sub." + std::to_string(l), cfg_);
        sub_ln_ = tensor::LayerNorm<T>(store_, "sub.ln_f", d);
        break;
      case SubDecoderKind::kCrossAttention:
      case SubDecoderKind::kNmt:
        sub_bos_ = store_.add("sub.bos", 1, d, tensor::Init::kNormal, false);
        sub_pos_ = store_.add("sub.pos", J, d, tensor::Init::kNormal, false);
        for (std::size_t l = 0; l < cfg_.sub_layers; ++l) sub_cross_.emplace_back(store_, "sub." + std::to_string(l), cfg_);
        sub_ln_ = tensor::LayerNorm<T>(store_, "sub.ln_f", d);
        if (cfg_.kind == SubDecoderKind::kNmt) {
          ctx_bos_ = store_.add("enricher.bos", 1, d, tensor::Init::kNormal, false);
          for (std::size_t l = 0; l < cfg_.enricher_layers; ++l)
            enricher_.emplace_back(store_, "enricher." + std::to_string(l), cfg_);
        }
        break;
    }
  }

  const ModelConfig& config() const { return cfg_; }
  std::vector<tensor::Parameter<T>*> parameters() { return store_.parameters(); }
  std::size_t parameter_count() const { return store_.count(); }

  // Sum of the sub-token embeddings of each token row plus its position row.
  // `ids` holds rows x J indices; kIgnore and kPad contribute zero vectors.
  Tensor<T> embed_compound(std::span<const int> ids) const {
    const std::size_t J = cfg_.num_features(), rows = ids.size() / J;
    check_length(rows);
    std::vector<int> positions(rows);
    std::iota(positions.begin(), positions.end(), 0);
    Tensor<T> x = gather_rows(pos_, std::span<const int>(positions));
    for (std::size_t j = 0; j < J; ++j) x = add(x, embedding_lookup(emb_[j], column(ids, j, J, 0, rows)));
    return x;
  }

  // h for every row of the batch. Row (b, i) sees the sequence BOS and tokens < i.
  Tensor<T> hidden(const Batch& batch, const ForwardContext& ctx = {}) const {
    check_batch(batch);
    const std::size_t J = cfg_.num_features(), L = batch.length, N = batch.rows();
    std::vector<int> positions(N), bos_index(N);
    for (std::size_t r = 0; r < N; ++r) {
      positions[r] = static_cast<int>(r % L);
      bos_index[r] = r % L == 0 ? 0 : kIgnore;
    }
    Tensor<T> x = add(gather_rows(pos_, std::span<const int>(positions)), gather_rows(bos_, std::span<const int>(bos_index)));
    for (std::size_t j = 0; j < J; ++j) {
      std::vector<int> ids(N, kIgnore);
      for (std::size_t r = 0; r < N; ++r)
        if (r % L != 0) ids[r] = clean(batch.tokens[(r - 1) * J + j]);
      x = add(x, embedding_lookup(emb_[j], std::span<const int>(ids)));
    }
    x = tensor::maybe_dropout(x, ctx);
    const auto pattern = std::make_shared<const AttentionPattern>(AttentionPattern::grouped_causal(batch.batch, L, L, 0));
    for (const auto& block : main_) x = block(x, pattern, ctx);
    return final_ln_(x);
  }

  // Teacher-forced logits for every row and feature given hidden states h
  // (rows() x dim) and the batch's ground-truth sub-tokens.
  std::vector<Tensor<T>> subtoken_logits(const Tensor<T>& h, const Batch& batch, const ForwardContext& ctx = {}) const {
    const std::size_t J = cfg_.num_features(), N = batch.rows();
    if (h.rows() != N || h.cols() != cfg_.dim) throw ShapeError("subtoken_logits: hidden " + h.shape().str());
    // Ground-truth sub-token embeddings per feature (zero rows for IGNORE/PAD).
    auto truth = [&](std::size_t j) { return embedding_lookup(emb_[j], column(batch.tokens, j, J, 0, N)); };
    std::vector<Tensor<T>> logits;
    switch (cfg_.kind) {
      case SubDecoderKind::kParallel:
        for (std::size_t j = 0; j < J; ++j) logits.push_back(heads_[j](h));
        break;
      case SubDecoderKind::kFeedForward: {
        Tensor<T> state = h;
        for (std::size_t j = 0; j < J; ++j) {
          logits.push_back(heads_[j](state));
          if (j + 1 < J) state = ff_step_(concat_cols(std::vector<Tensor<T>>{state, truth(j)}));
        }
        break;
      }
      case SubDecoderKind::kRnn: {
        Tensor<T> state = h, input = h;
        for (std::size_t j = 0; j < J; ++j) {
          state = gru_(input, state);
          logits.push_back(heads_[j](state));
          if (j + 1 < J) input = truth(j);
        }
        break;
      }
      case SubDecoderKind::kSelfAttention: {
        // Per row: [h, BOS, E(s^0), ..., E(s^{J-2})], causal, logits_j read at slot j + 1.
        std::vector<Tensor<T>> slots{h, repeat(sub_bos_, N)};
        for (std::size_t j = 0; j + 1 < J; ++j) slots.push_back(truth(j));
        Tensor<T> x = add(interleave(slots, N), tiled_rows(sub_pos_, N, J + 1));
        const auto pattern = std::make_shared<const AttentionPattern>(AttentionPattern::grouped_causal(N, J + 1, J + 1, 0));
        for (const auto& block : sub_self_) x = block(x, pattern, ctx);
        x = sub_ln_(x);
        for (std::size_t j = 0; j < J; ++j) logits.push_back(heads_[j](pick(x, N, J + 1, j + 1)));
        break;
      }
      case SubDecoderKind::kCrossAttention:
      case SubDecoderKind::kNmt: {
        std::vector<Tensor<T>> kv_slots{repeat(sub_bos_, N)};
        std::vector<Tensor<T>> emb_slots;
        for (std::size_t j = 0; j + 1 < J; ++j) emb_slots.push_back(truth(j));
        if (cfg_.kind == SubDecoderKind::kNmt && !emb_slots.empty()) emb_slots = enrich(emb_slots, h, batch, ctx);
        kv_slots.insert(kv_slots.end(), emb_slots.begin(), emb_slots.end());
        const Tensor<T> kv = interleave(kv_slots, N);
        Tensor<T> q = add(interleave(std::vector<Tensor<T>>(J, h), N), tiled_rows(sub_pos_, N, J));
        const auto pattern = std::make_shared<const AttentionPattern>(AttentionPattern::grouped_causal(N, J, J, 0));
        for (std::size_t l = 0; l < sub_cross_.size(); ++l)
          q = sub_cross_[l](q, kv, pattern, ctx, cfg_.key_residual && l == 0 ? &kv : nullptr);
        q = sub_ln_(q);
        for (std::size_t j = 0; j < J; ++j) logits.push_back(heads_[j](pick(q, N, J, j)));
        break;
      }
    }
    return logits;
  }

  // Loss and per-feature NLL with teacher forcing. PAD and IGNORE targets are skipped.
  ForwardResult<T> forward(const Batch& batch, const ForwardContext& ctx = {}) const {
    const std::size_t J = cfg_.num_features(), N = batch.rows();
    ForwardResult<T> out;
    out.logits = subtoken_logits(hidden(batch, ctx), batch, ctx);
    std::vector<Tensor<T>> terms;
    for (std::size_t j = 0; j < J; ++j) {
      const auto targets = column(batch.tokens, j, J, 0, N);
      const std::size_t count =
          static_cast<std::size_t>(std::count_if(targets.begin(), targets.end(), [](int t) { return t >= 0; }));
      out.counts.push_back(count);
      if (count == 0) {
        out.feature_nll.push_back(std::numeric_limits<double>::quiet_NaN());
        continue;
      }
      auto nll = softmax_cross_entropy(out.logits[j], std::span<const int>(targets));
      out.feature_nll.push_back(static_cast<double>(nll.item()));
      terms.push_back(nll);
    }
    if (terms.empty()) throw DataError("forward: batch has no scored targets");
    Tensor<T> total = terms.front();
    for (std::size_t k = 1; k < terms.size(); ++k) total = add(total, terms[k]);
    out.loss = scale(total, T(1) / static_cast<T>(terms.size()));
    return out;
  }

  // Incremental path: logits of feature j = prefix.size() for row `row`, given
  // the sub-tokens already chosen for that token. Recomputed from scratch.
  std::vector<T> step_logits(const Tensor<T>& h, const Batch& batch, std::size_t row, std::span<const int> prefix) const {
    tensor::NoGradGuard no_grad;
    const std::size_t J = cfg_.num_features(), j = prefix.size();
    if (j >= J) throw ConfigError("step_logits: feature index " + std::to_string(j) + " out of order (J = " + std::to_string(J) + ")");
    const Tensor<T> hr = slice_rows(h, row, row + 1);
    auto e = [&](std::size_t k) {
      const int id = clean(prefix[k]);
      return embedding_lookup(emb_[k], std::span<const int>(&id, 1));
    };
    Tensor<T> out;
    switch (cfg_.kind) {
      case SubDecoderKind::kParallel: out = heads_[j](hr); break;
      case SubDecoderKind::kFeedForward: {
        Tensor<T> state = hr;
        for (std::size_t k = 0; k < j; ++k) state = ff_step_(concat_cols(std::vector<Tensor<T>>{state, e(k)}));
        out = heads_[j](state);
        break;
      }
      case SubDecoderKind::kRnn: {
        Tensor<T> state = gru_(hr, hr);
        for (std::size_t k = 0; k < j; ++k) state = gru_(e(k), state);
        out = heads_[j](state);
        break;
      }
      case SubDecoderKind::kSelfAttention: {
        std::vector<Tensor<T>> seq{hr, sub_bos_};
        for (std::size_t k = 0; k < j; ++k) seq.push_back(e(k));
        Tensor<T> x = add(concat_rows(seq), slice_rows(sub_pos_, 0, j + 2));
        const auto pattern = std::make_shared<const AttentionPattern>(AttentionPattern::causal(j + 2));
        for (const auto& block : sub_self_) x = block(x, pattern, {});
        out = heads_[j](slice_rows(sub_ln_(x), j + 1, j + 2));
        break;
      }
      case SubDecoderKind::kCrossAttention:
      case SubDecoderKind::kNmt: {
        std::vector<Tensor<T>> kv_rows{sub_bos_};
        if (j > 0) {
          std::vector<Tensor<T>> embs;
          for (std::size_t k = 0; k < j; ++k) embs.push_back(e(k));
          Tensor<T> stacked = concat_rows(embs);
          if (cfg_.kind == SubDecoderKind::kNmt) stacked = enrich_rows(stacked, h, batch, row);
          kv_rows.push_back(stacked);
        }
        const Tensor<T> kv = concat_rows(kv_rows);
        Tensor<T> q = add(hr, slice_rows(sub_pos_, j, j + 1));
        AttentionPattern all;
        all.num_keys = j + 1;
        std::vector<std::uint32_t> keys(j + 1);
        std::iota(keys.begin(), keys.end(), 0u);
        all.add_row(keys);
        const auto pattern = std::make_shared<const AttentionPattern>(all);
        const Tensor<T> kv_j = slice_rows(kv, j, j + 1);
        for (std::size_t l = 0; l < sub_cross_.size(); ++l)
          q = sub_cross_[l](q, kv, pattern, {}, cfg_.key_residual && l == 0 ? &kv_j : nullptr);
        out = heads_[j](sub_ln_(q));
        break;
      }
    }
    return std::vector<T>(out.values().begin(), out.values().end());
  }

  // Enricher context rows seen by token row `row`: BOS plus h of the last
  // `window` positions of the same sequence (fewer near the start).
  std::vector<std::size_t> context_rows(const Batch& batch, std::size_t row) const {
    const std::size_t L = batch.length, i = row % L, first = i + 1 >= cfg_.window ? i + 1 - cfg_.window : 0;
    std::vector<std::size_t> rows;
    for (std::size_t q = first; q <= i; ++q) rows.push_back(row - i + q);
    return rows;
  }

 private:
  static int clean(int id) { return id < 0 ? kIgnore : id; }

  void check_length(std::size_t L) const {
    if (L > cfg_.max_sequence_length)
      throw ConfigError("sequence of " + std::to_string(L) + " tokens exceeds max_sequence_length " +
                        std::to_string(cfg_.max_sequence_length));
  }

  void check_batch(const Batch& b) const {
    check_length(b.length);
    if (b.features != cfg_.num_features() || b.tokens.size() != b.rows() * b.features || b.rows() == 0)
      throw ShapeError("batch of " + std::to_string(b.batch) + "x" + std::to_string(b.length) + "x" +
                       std::to_string(b.features) + " does not fit a " + std::to_string(cfg_.num_features()) +
                       "-feature model");
    for (std::size_t r = 0; r < b.rows(); ++r)
      for (std::size_t j = 0; j < b.features; ++j) {
        const int t = b.tokens[r * b.features + j];
        if (t >= cfg_.vocab_sizes[j] || t < kPad)
          throw DataError("token value " + std::to_string(t) + " outside feature " + std::to_string(j) + " vocabulary of " +
                          std::to_string(cfg_.vocab_sizes[j]));
      }
  }

  // Feature j of rows [begin, end), with PAD mapped to IGNORE.
  static std::vector<int> column(std::span<const int> ids, std::size_t j, std::size_t J, std::size_t begin, std::size_t end) {
    std::vector<int> out;
    out.reserve(end - begin);
    for (std::size_t r = begin; r < end; ++r) out.push_back(clean(ids[r * J + j]));
    return out;
  }

  static Tensor<T> repeat(const Tensor<T>& row, std::size_t n) {
    const std::vector<int> idx(n, 0);
    return gather_rows(row, std::span<const int>(idx));
  }

  // Row n * S + s of the result is row n of slots[s].
  static Tensor<T> interleave(const std::vector<Tensor<T>>& slots, std::size_t n) {
    const std::size_t S = slots.size();
    const Tensor<T> stacked = concat_rows(slots);
    std::vector<int> idx(n * S);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t s = 0; s < S; ++s) idx[r * S + s] = static_cast<int>(s * n + r);
    return gather_rows(stacked, std::span<const int>(idx));
  }

  // Rows of `table` repeated for each of n groups of S slots.
  static Tensor<T> tiled_rows(const Tensor<T>& table, std::size_t n, std::size_t S) {
    std::vector<int> idx(n * S);
    for (std::size_t r = 0; r < n * S; ++r) idx[r] = static_cast<int>(r % S);
    return gather_rows(table, std::span<const int>(idx));
  }

  // Slot s of each group of S rows.
  static Tensor<T> pick(const Tensor<T>& x, std::size_t n, std::size_t S, std::size_t s) {
    std::vector<int> idx(n);
    for (std::size_t r = 0; r < n; ++r) idx[r] = static_cast<int>(r * S + s);
    return gather_rows(x, std::span<const int>(idx));
  }

  // Embedding Enricher over slot-major sub-token embeddings (one N-row block per slot).
  std::vector<Tensor<T>> enrich(const std::vector<Tensor<T>>& slots, const Tensor<T>& h, const Batch& batch,
                                const ForwardContext& ctx) const {
    const std::size_t N = batch.rows(), S = slots.size();
    const Tensor<T> context = concat_rows(std::vector<Tensor<T>>{ctx_bos_, h});
    AttentionPattern p;
    p.num_keys = N + 1;
    for (std::size_t s = 0; s < S; ++s)
      for (std::size_t r = 0; r < N; ++r) {
        std::vector<std::uint32_t> keys{0};
        for (std::size_t q : context_rows(batch, r)) keys.push_back(static_cast<std::uint32_t>(q + 1));
        p.add_row(keys);
      }
    const auto pattern = std::make_shared<const AttentionPattern>(std::move(p));
    Tensor<T> x = concat_rows(slots);
    for (const auto& block : enricher_) x = block(x, context, pattern, ctx);
    std::vector<Tensor<T>> out;
    for (std::size_t s = 0; s < S; ++s) out.push_back(slice_rows(x, s * N, (s + 1) * N));
    return out;
  }

  // Enricher for the incremental path: `embs` rows all belong to token row `row`.
  Tensor<T> enrich_rows(const Tensor<T>& embs, const Tensor<T>& h, const Batch& batch, std::size_t row) const {
    std::vector<Tensor<T>> ctx_rows{ctx_bos_};
    for (std::size_t q : context_rows(batch, row)) ctx_rows.push_back(slice_rows(h, q, q + 1));
    const Tensor<T> context = concat_rows(ctx_rows);
    AttentionPattern p;
    p.num_keys = context.rows();
    std::vector<std::uint32_t> keys(context.rows());
    std::iota(keys.begin(), keys.end(), 0u);
    for (std::size_t r = 0; r < embs.rows(); ++r) p.add_row(keys);
    const auto pattern = std::make_shared<const AttentionPattern>(std::move(p));
    Tensor<T> x = embs;
    for (const auto& block : enricher_) x = block(x, context, pattern, {});
    return x;
  }

  ModelConfig cfg_;
  tensor::ParameterStore<T> store_;
  std::vector<Tensor<T>> emb_;
  std::vector<tensor::Linear<T>> heads_;
  Tensor<T> pos_, bos_;
  std::vector<SelfAttentionBlock<T>> main_;
  tensor::LayerNorm<T> final_ln_;
  tensor::Linear<T> ff_step_;
  tensor::GruCell<T> gru_;
  Tensor<T> sub_bos_, sub_pos_, ctx_bos_;
  std::vector<SelfAttentionBlock<T>> sub_self_;
  std::vector<CrossAttentionBlock<T>> sub_cross_;
  tensor::LayerNorm<T> sub_ln_;
  std::vector<CrossAttentionBlock<T>> enricher_;
};

}  // namespace nmt::model
