#pragma once

#include <deque>
#include <memory>
#include <string>
#include <vector>

#include "nmt/core/rng.hpp"
#include "nmt/tensor/attention.hpp"
#include "nmt/tensor/ops.hpp"
#include "nmt/tensor/optim.hpp"

namespace nmt::tensor {

enum class Init { kNormal, kZeros, kOnes };

// Owns every Parameter of a model; addresses stay stable as parameters are added.
template <class T>
class ParameterStore {
 public:
  explicit ParameterStore(std::uint64_t seed = 0, double init_std = 0.02) : rng_(seed), init_std_(init_std) {}

  Tensor<T> add(const std::string& name, std::size_t rows, std::size_t cols, Init init, bool decay) {
    auto t = Tensor<T>::zeros(rows, cols, true);
    if (init == Init::kOnes) std::fill(t.values().begin(), t.values().end(), T(1));
    if (init == Init::kNormal)
      for (auto& v : t.values()) v = static_cast<T>(rng_.normal(0.0, init_std_));
    params_.emplace_back(name, t, decay);
    return t;
  }

  std::vector<Parameter<T>*> parameters() {
    std::vector<Parameter<T>*> out;
    for (auto& p : params_) out.push_back(&p);
    return out;
  }

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

 private:
  std::deque<Parameter<T>> params_;
  Rng rng_;
  double init_std_;
};

// Forward-pass switches shared by every layer.
struct ForwardContext {
  bool train = false;
  double dropout = 0.0;
  Rng* rng = nullptr;
};

template <class T>
Tensor<T> maybe_dropout(const Tensor<T>& x, const ForwardContext& ctx) {
  if (!ctx.train || ctx.dropout == 0.0 || ctx.rng == nullptr) return x;
  return dropout(x, ctx.dropout, true, *ctx.rng);
}

template <class T>
struct Linear {
  Tensor<T> weight;  // in x out
  Tensor<T> bias;    // 1 x out

  Linear() = default;
  Linear(ParameterStore<T>& store, const std::string& name, std::size_t in, std::size_t out)
      : weight(store.add(name + ".weight", in, out, Init::kNormal, true)),
        bias(store.add(name + ".bias", 1, out, Init::kZeros, false)) {}

  Tensor<T> operator()(const Tensor<T>& x) const { return linear(x, weight, bias); }
};

template <class T>
struct LayerNorm {
  Tensor<T> gain;
  Tensor<T> bias;

  LayerNorm() = default;
  LayerNorm(ParameterStore<T>& store, const std::string& name, std::size_t dim)
      : gain(store.add(name + ".gain", 1, dim, Init::kOnes, false)),
        bias(store.add(name + ".bias", 1, dim, Init::kZeros, false)) {}

  Tensor<T> operator()(const Tensor<T>& x) const { return layer_norm(x, gain, bias); }
};

template <class T>
struct FeedForward {
  Linear<T> up;
  Linear<T> down;

  FeedForward() = default;
  FeedForward(ParameterStore<T>& store, const std::string& name, std::size_t dim, std::size_t hidden)
      : up(store, name + ".up", dim, hidden), down(store, name + ".down", hidden, dim) {}

  Tensor<T> operator()(const Tensor<T>& x, const ForwardContext& ctx = {}) const {
    return down(maybe_dropout(gelu(up(x)), ctx));
  }
};

// Projected multi-head attention: queries come from `query_src`, keys and
// values from `kv_src`; `pattern` states which keys each query sees.
template <class T>
struct MultiHeadAttention {
  Linear<T> wq, wk, wv, wo;
  std::size_t heads = 1;

  MultiHeadAttention() = default;
  MultiHeadAttention(ParameterStore<T>& store, const std::string& name, std::size_t dim, std::size_t num_heads)
      : wq(store, name + ".q", dim, dim),
        wk(store, name + ".k", dim, dim),
        wv(store, name + ".v", dim, dim),
        wo(store, name + ".o", dim, dim),
        heads(num_heads) {
    if (num_heads == 0 || dim % num_heads != 0)
      throw ConfigError("model dimension " + std::to_string(dim) + " not divisible by " +
                        std::to_string(num_heads) + " heads");
  }

  Tensor<T> operator()(const Tensor<T>& query_src, const Tensor<T>& kv_src,
                       const std::shared_ptr<const AttentionPattern>& pattern) const {
    return wo(attend(wq(query_src), wk(kv_src), wv(kv_src), pattern, heads));
  }

  // Boolean-mask form, mask[q][k] = true when query q may attend key k.
  Tensor<T> operator()(const Tensor<T>& query, const Tensor<T>& key_value,
                       const std::vector<std::vector<bool>>& mask) const {
    return (*this)(query, key_value,
                   std::make_shared<const AttentionPattern>(AttentionPattern::from_mask(mask, key_value.rows())));
  }
};

// Single-layer gated recurrent unit:
//   r = sigmoid(x Wir + bir + h Whr + bhr)
//   z = sigmoid(x Wiz + biz + h Whz + bhz)
//   n = tanh(x Win + bin + r * (h Whn + bhn))
//   h' = (1 - z) * n + z * h
template <class T>
struct GruCell {
  Linear<T> ir, iz, in, hr, hz, hn;

  GruCell() = default;
  GruCell(ParameterStore<T>& store, const std::string& name, std::size_t input_dim, std::size_t hidden_dim)
      : ir(store, name + ".ir", input_dim, hidden_dim),
        iz(store, name + ".iz", input_dim, hidden_dim),
        in(store, name + ".in", input_dim, hidden_dim),
        hr(store, name + ".hr", hidden_dim, hidden_dim),
        hz(store, name + ".hz", hidden_dim, hidden_dim),
        hn(store, name + ".hn", hidden_dim, hidden_dim) {}

  Tensor<T> operator()(const Tensor<T>& x, const Tensor<T>& h) const {
    if (x.rows() != h.rows() || x.cols() != ir.weight.rows() || h.cols() != hr.weight.rows())
      throw ShapeError("gru_cell: incompatible shapes " + x.shape().str() + " and " + h.shape().str());
    auto r = sigmoid(add(ir(x), hr(h)));
    auto z = sigmoid(add(iz(x), hz(h)));
    auto n = tanh(add(in(x), mul(r, hn(h))));
    return add(n, mul(z, sub(h, n)));
  }
};

}  // namespace nmt::tensor
