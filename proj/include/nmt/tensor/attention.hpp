#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "nmt/tensor/ops.hpp"

namespace nmt::tensor {

// Which keys each query may attend to, stored as compressed rows. A key that
// is absent from a query's list is excluded exactly (the -inf limit of an
// additive mask), so masked inputs can never leak into the output.
struct AttentionPattern {
  std::size_t num_queries = 0;
  std::size_t num_keys = 0;
  std::vector<std::uint32_t> offsets{0};
  std::vector<std::uint32_t> keys;

  void add_row(const std::vector<std::uint32_t>& row) {
    keys.insert(keys.end(), row.begin(), row.end());
    offsets.push_back(static_cast<std::uint32_t>(keys.size()));
    ++num_queries;
  }

  std::size_t row_begin(std::size_t q) const { return offsets[q]; }
  std::size_t row_end(std::size_t q) const { return offsets[q + 1]; }

  // Throws when a query row has no attendable key or references a missing key.
  void validate() const {
    if (offsets.size() != num_queries + 1) throw ShapeError("AttentionPattern: offsets/query count mismatch");
    for (std::size_t q = 0; q < num_queries; ++q) {
      if (row_begin(q) == row_end(q))
        throw ShapeError("attention: query row " + std::to_string(q) + " is fully masked");
      for (std::size_t i = row_begin(q); i < row_end(q); ++i)
        if (keys[i] >= num_keys) throw ShapeError("AttentionPattern: key index out of range");
    }
  }

  // Boolean mask, true = attend. Shape (queries, keys).
  static AttentionPattern from_mask(const std::vector<std::vector<bool>>& mask, std::size_t num_keys) {
    AttentionPattern p;
    p.num_keys = num_keys;
    for (const auto& row : mask) {
      if (row.size() != num_keys) throw ShapeError("attention mask row length differs from key count");
      std::vector<std::uint32_t> r;
      for (std::size_t k = 0; k < num_keys; ++k)
        if (row[k]) r.push_back(static_cast<std::uint32_t>(k));
      p.add_row(r);
    }
    return p;
  }

  // Query t attends keys 0..t.
  static AttentionPattern causal(std::size_t n) { return grouped_causal(1, n, n, 0); }

  // `groups` independent blocks laid out contiguously: query t of block g
  // attends keys 0..t+extra of the same block.
  static AttentionPattern grouped_causal(std::size_t groups, std::size_t queries_per_group,
                                         std::size_t keys_per_group, std::size_t extra) {
    AttentionPattern p;
    p.num_keys = groups * keys_per_group;
    p.offsets.reserve(groups * queries_per_group + 1);
    for (std::size_t g = 0; g < groups; ++g)
      for (std::size_t t = 0; t < queries_per_group; ++t) {
        const std::size_t last = std::min(t + extra, keys_per_group - 1);
        for (std::size_t k = 0; k <= last; ++k) p.keys.push_back(static_cast<std::uint32_t>(g * keys_per_group + k));
        p.offsets.push_back(static_cast<std::uint32_t>(p.keys.size()));
        ++p.num_queries;
      }
    return p;
  }
};

// Multi-head scaled dot-product attention over already projected q/k/v.
// q: (Nq x d), k and v: (Nk x d); heads split the d columns evenly.
template <class T>
Tensor<T> attend(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                 std::shared_ptr<const AttentionPattern> pattern_ptr, std::size_t heads) {
  const AttentionPattern& pattern = *pattern_ptr;
  const std::size_t d = q.cols();
  if (heads == 0 || d % heads != 0) throw ShapeError("attention: model dimension not divisible by heads");
  detail::shape_check(k.cols() == d && v.cols() == d && k.rows() == v.rows(), "attention", q.shape(), k.shape());
  if (pattern.num_queries != q.rows() || pattern.num_keys != k.rows())
    throw ShapeError("attention: pattern " + Shape{pattern.num_queries, pattern.num_keys}.str() +
                     " does not match queries " + q.shape().str() + " / keys " + k.shape().str());
  pattern.validate();
  const std::size_t dh = d / heads;
  const T scale_factor = T(1) / std::sqrt(T(dh));
  auto out = detail::make_result<T>({q.rows(), d}, {&q, &k, &v});
  // probabilities per (pattern entry, head)
  std::vector<T> probs(pattern.keys.size() * heads);
  const T* Q = q.data();
  const T* K = k.data();
  const T* V = v.data();
  T* O = out.data();
  for (std::size_t r = 0; r < pattern.num_queries; ++r) {
    const std::size_t b = pattern.row_begin(r), e = pattern.row_end(r);
    for (std::size_t h = 0; h < heads; ++h) {
      const T* qh = Q + r * d + h * dh;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t i = b; i < e; ++i) {
        const T* kh = K + pattern.keys[i] * d + h * dh;
        T s = 0;
        for (std::size_t c = 0; c < dh; ++c) s += qh[c] * kh[c];
        s *= scale_factor;
        probs[i * heads + h] = s;
        mx = std::max(mx, s);
      }
      T total = 0;
      for (std::size_t i = b; i < e; ++i) total += (probs[i * heads + h] = std::exp(probs[i * heads + h] - mx));
      T* oh = O + r * d + h * dh;
      for (std::size_t i = b; i < e; ++i) {
        const T p = (probs[i * heads + h] /= total);
        const T* vh = V + pattern.keys[i] * d + h * dh;
        for (std::size_t c = 0; c < dh; ++c) oh[c] += p * vh[c];
      }
    }
  }
  if (out.requires_grad()) {
    out.node()->backward_fn = [pattern_ptr, heads, d, dh, scale_factor, probs = std::move(probs)](Node<T>& self) {
      const AttentionPattern& pattern = *pattern_ptr;
      Node<T>& pq = *self.parents[0];
      Node<T>& pk = *self.parents[1];
      Node<T>& pv = *self.parents[2];
      std::vector<T> dscore;
      for (std::size_t r = 0; r < pattern.num_queries; ++r) {
        const std::size_t b = pattern.row_begin(r), e = pattern.row_end(r);
        dscore.assign(e - b, T(0));
        for (std::size_t h = 0; h < heads; ++h) {
          const T* go = self.grad.data() + r * d + h * dh;
          T dot = 0;
          for (std::size_t i = b; i < e; ++i) {
            const std::size_t key = pattern.keys[i];
            const T p = probs[i * heads + h];
            const T* vh = pv.value.data() + key * d + h * dh;
            T dp = 0;
            for (std::size_t c = 0; c < dh; ++c) dp += go[c] * vh[c];
            dscore[i - b] = dp;
            dot += p * dp;
            if (pv.requires_grad) {
              T* gv = pv.grad.data() + key * d + h * dh;
              for (std::size_t c = 0; c < dh; ++c) gv[c] += p * go[c];
            }
          }
          const T* qh = pq.value.data() + r * d + h * dh;
          for (std::size_t i = b; i < e; ++i) {
            const std::size_t key = pattern.keys[i];
            const T ds = probs[i * heads + h] * (dscore[i - b] - dot) * scale_factor;
            if (pq.requires_grad) {
              const T* kh = pk.value.data() + key * d + h * dh;
              T* gq = pq.grad.data() + r * d + h * dh;
              for (std::size_t c = 0; c < dh; ++c) gq[c] += ds * kh[c];
            }
            if (pk.requires_grad) {
              T* gk = pk.grad.data() + key * d + h * dh;
              for (std::size_t c = 0; c < dh; ++c) gk[c] += ds * qh[c];
            }
          }
        }
      }
    };
  }
  return out;
}

template <class T>
Tensor<T> attend(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, const AttentionPattern& pattern,
                 std::size_t heads) {
  return attend(q, k, v, std::make_shared<const AttentionPattern>(pattern), heads);
}

}  // namespace nmt::tensor
