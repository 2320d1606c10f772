#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "nmt/core/rng.hpp"
#include "nmt/tensor/tensor.hpp"

namespace nmt::tensor {

// Sentinel for "no token here": zero embedding row, no loss contribution.
inline constexpr int kIgnoreIndex = -1;

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::shape_check(a.cols() == b.rows(), "matmul", a.shape(), b.shape());
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  auto out = detail::make_result<T>({m, n}, {&a, &b});
  const T* A = a.data();
  const T* B = b.data();
  T* C = out.data();
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = C + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = A[i * k + p];
      const T* brow = B + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  if (out.requires_grad()) {
    out.node()->backward_fn = [m, k, n](Node<T>& self) {
      Node<T>& pa = *self.parents[0];
      Node<T>& pb = *self.parents[1];
      const T* G = self.grad.data();
      if (pa.requires_grad) {
        const T* B = pb.value.data();
        T* GA = pa.grad.data();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            T acc = 0;
            const T* g = G + i * n;
            const T* brow = B + p * n;
            for (std::size_t j = 0; j < n; ++j) acc += g[j] * brow[j];
            GA[i * k + p] += acc;
          }
      }
      if (pb.requires_grad) {
        const T* A = pa.value.data();
        T* GB = pb.grad.data();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            const T av = A[i * k + p];
            const T* g = G + i * n;
            T* gb = GB + p * n;
            for (std::size_t j = 0; j < n; ++j) gb[j] += av * g[j];
          }
      }
    };
  }
  return out;
}

// Elementwise sum. `b` may also be a single row broadcast over the rows of `a`.
template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  const bool broadcast = b.rows() == 1 && a.rows() != 1 && b.cols() == a.cols();
  detail::shape_check(a.shape() == b.shape() || broadcast, "add", a.shape(), b.shape());
  const std::size_t rows = a.rows(), cols = a.cols();
  auto out = detail::make_result<T>(a.shape(), {&a, &b});
  T* o = out.data();
  const T* x = a.data();
  const T* y = b.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c)
      o[r * cols + c] = x[r * cols + c] + y[(broadcast ? 0 : r) * cols + c];
  if (out.requires_grad()) {
    out.node()->backward_fn = [rows, cols, broadcast](Node<T>& self) {
      Node<T>& pa = *self.parents[0];
      Node<T>& pb = *self.parents[1];
      const T* g = self.grad.data();
      if (pa.requires_grad)
        for (std::size_t i = 0; i < rows * cols; ++i) pa.grad[i] += g[i];
      if (pb.requires_grad)
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < cols; ++c) pb.grad[(broadcast ? 0 : r) * cols + c] += g[r * cols + c];
    };
  }
  return out;
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::shape_check(a.shape() == b.shape(), "sub", a.shape(), b.shape());
  auto out = detail::make_result<T>(a.shape(), {&a, &b});
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] - b.data()[i];
  if (out.requires_grad()) {
    out.node()->backward_fn = [](Node<T>& self) {
      Node<T>& pa = *self.parents[0];
      Node<T>& pb = *self.parents[1];
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        if (pa.requires_grad) pa.grad[i] += self.grad[i];
        if (pb.requires_grad) pb.grad[i] -= self.grad[i];
      }
    };
  }
  return out;
}

// Hadamard product.
template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::shape_check(a.shape() == b.shape(), "mul", a.shape(), b.shape());
  auto out = detail::make_result<T>(a.shape(), {&a, &b});
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
  if (out.requires_grad()) {
    out.node()->backward_fn = [](Node<T>& self) {
      Node<T>& pa = *self.parents[0];
      Node<T>& pb = *self.parents[1];
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        if (pa.requires_grad) pa.grad[i] += self.grad[i] * pb.value[i];
        if (pb.requires_grad) pb.grad[i] += self.grad[i] * pa.value[i];
      }
    };
  }
  return out;
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  auto out = detail::make_result<T>(a.shape(), {&a});
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * s;
  if (out.requires_grad()) {
    out.node()->backward_fn = [s](Node<T>& self) {
      Node<T>& pa = *self.parents[0];
      for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i] * s;
    };
  }
  return out;
}

// Sum of all entries as a 1 x 1 tensor.
template <class T>
Tensor<T> sum(const Tensor<T>& a) {
  auto out = detail::make_result<T>({1, 1}, {&a});
  T acc = 0;
  for (T v : a.values()) acc += v;
  out.data()[0] = acc;
  if (out.requires_grad()) {
    out.node()->backward_fn = [](Node<T>& self) {
      Node<T>& pa = *self.parents[0];
      for (auto& g : pa.grad) g += self.grad[0];
    };
  }
  return out;
}

namespace detail {

template <class T, class F, class D>
Tensor<T> unary(const Tensor<T>& a, F f, D dfdx_from_xy) {
  auto out = make_result<T>(a.shape(), {&a});
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = f(a.data()[i]);
  if (out.requires_grad()) {
    out.node()->backward_fn = [dfdx_from_xy](Node<T>& self) {
      Node<T>& pa = *self.parents[0];
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        pa.grad[i] += self.grad[i] * dfdx_from_xy(pa.value[i], self.value[i]);
    };
  }
  return out;
}

}  // namespace detail

template <class T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  return detail::unary(
      a, [](T x) { return T(1) / (T(1) + std::exp(-x)); }, [](T, T y) { return y * (T(1) - y); });
}

template <class T>
Tensor<T> tanh(const Tensor<T>& a) {
  return detail::unary(
      a, [](T x) { return std::tanh(x); }, [](T, T y) { return T(1) - y * y; });
}

// tanh approximation of GELU.
template <class T>
Tensor<T> gelu(const Tensor<T>& a) {
  constexpr T kC = T(0.7978845608028654);  // sqrt(2/pi)
  constexpr T kA = T(0.044715);
  return detail::unary(
      a,
      [](T x) { return T(0.5) * x * (T(1) + std::tanh(kC * (x + kA * x * x * x))); },
      [](T x, T) {
        const T u = kC * (x + kA * x * x * x);
        const T t = std::tanh(u);
        const T du = kC * (T(1) + T(3) * kA * x * x);
        return T(0.5) * (T(1) + t) + T(0.5) * x * (T(1) - t * t) * du;
      });
}

// Row-wise softmax.
template <class T>
Tensor<T> softmax(const Tensor<T>& a) {
  const std::size_t rows = a.rows(), cols = a.cols();
  auto out = detail::make_result<T>(a.shape(), {&a});
  for (std::size_t r = 0; r < rows; ++r) {
    const T* x = a.data() + r * cols;
    T* y = out.data() + r * cols;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t c = 0; c < cols; ++c) mx = std::max(mx, x[c]);
    T total = 0;
    for (std::size_t c = 0; c < cols; ++c) total += (y[c] = std::exp(x[c] - mx));
    for (std::size_t c = 0; c < cols; ++c) y[c] /= total;
  }
  if (out.requires_grad()) {
    out.node()->backward_fn = [rows, cols](Node<T>& self) {
      Node<T>& pa = *self.parents[0];
      for (std::size_t r = 0; r < rows; ++r) {
        const T* y = self.value.data() + r * cols;
        const T* g = self.grad.data() + r * cols;
        T dot = 0;
        for (std::size_t c = 0; c < cols; ++c) dot += y[c] * g[c];
        for (std::size_t c = 0; c < cols; ++c) pa.grad[r * cols + c] += y[c] * (g[c] - dot);
      }
    };
  }
  return out;
}

template <class T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t cols = parts.front().cols();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    detail::shape_check(p.cols() == cols, "concat_rows", parts.front().shape(), p.shape());
    rows += p.rows();
  }
  auto out = detail::make_result<T>({rows, cols}, parts);
  T* o = out.data();
  for (const auto& p : parts) o = std::copy(p.values().begin(), p.values().end(), o);
  if (out.requires_grad()) {
    out.node()->backward_fn = [](Node<T>& self) {
      std::size_t offset = 0;
      for (auto& p : self.parents) {
        if (p->requires_grad)
          for (std::size_t i = 0; i < p->value.size(); ++i) p->grad[i] += self.grad[offset + i];
        offset += p->value.size();
      }
    };
  }
  return out;
}

template <class T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t rows = parts.front().rows();
  std::size_t cols = 0;
  for (const auto& p : parts) {
    detail::shape_check(p.rows() == rows, "concat_cols", parts.front().shape(), p.shape());
    cols += p.cols();
  }
  auto out = detail::make_result<T>({rows, cols}, parts);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < p.cols(); ++c) out.at(r, offset + c) = p.at(r, c);
    offset += p.cols();
  }
  if (out.requires_grad()) {
    out.node()->backward_fn = [rows, cols](Node<T>& self) {
      std::size_t offset = 0;
      for (auto& p : self.parents) {
        const std::size_t pc = p->shape.cols;
        if (p->requires_grad)
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < pc; ++c) p->grad[r * pc + c] += self.grad[r * cols + offset + c];
        offset += pc;
      }
    };
  }
  return out;
}

// Rows [begin, end).
template <class T>
Tensor<T> slice_rows(const Tensor<T>& a, std::size_t begin, std::size_t end) {
  if (begin > end || end > a.rows())
    throw ShapeError("slice_rows: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") outside " + a.shape().str());
  const std::size_t cols = a.cols();
  auto out = detail::make_result<T>({end - begin, cols}, {&a});
  std::copy(a.data() + begin * cols, a.data() + end * cols, out.data());
  if (out.requires_grad()) {
    out.node()->backward_fn = [begin, cols](Node<T>& self) {
      Node<T>& pa = *self.parents[0];
      for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[begin * cols + i] += self.grad[i];
    };
  }
  return out;
}

// out[i] = a[index[i]]; a negative index yields a zero row.
template <class T>
Tensor<T> gather_rows(const Tensor<T>& a, std::span<const int> index) {
  const std::size_t cols = a.cols();
  for (int ix : index)
    if (ix >= static_cast<int>(a.rows()))
      throw ShapeError("gather_rows: index " + std::to_string(ix) + " outside " + a.shape().str());
  auto out = detail::make_result<T>({index.size(), cols}, {&a});
  for (std::size_t i = 0; i < index.size(); ++i)
    if (index[i] >= 0)
      std::copy(a.data() + index[i] * cols, a.data() + (index[i] + 1) * cols, out.data() + i * cols);
  if (out.requires_grad()) {
    std::vector<int> idx(index.begin(), index.end());
    out.node()->backward_fn = [idx = std::move(idx), cols](Node<T>& self) {
      Node<T>& pa = *self.parents[0];
      for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0) continue;
        T* g = pa.grad.data() + idx[i] * cols;
        const T* s = self.grad.data() + i * cols;
        for (std::size_t c = 0; c < cols; ++c) g[c] += s[c];
      }
    };
  }
  return out;
}

// Embedding table lookup; kIgnoreIndex rows are zero vectors.
template <class T>
Tensor<T> embedding_lookup(const Tensor<T>& table, std::span<const int> ids) {
  for (int id : ids)
    if (id < kIgnoreIndex || id >= static_cast<int>(table.rows()))
      throw ShapeError("embedding_lookup: id " + std::to_string(id) + " outside table " +
                       table.shape().str());
  return gather_rows(table, ids);
}

template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  return add(matmul(x, weight), bias);
}

// Per-row normalization over columns with affine gain/bias (both 1 x cols).
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps = T(1e-5)) {
  const std::size_t rows = x.rows(), cols = x.cols();
  detail::shape_check(gain.rows() == 1 && gain.cols() == cols, "layer_norm", x.shape(), gain.shape());
  detail::shape_check(bias.rows() == 1 && bias.cols() == cols, "layer_norm", x.shape(), bias.shape());
  auto out = detail::make_result<T>(x.shape(), {&x, &gain, &bias});
  std::vector<T> xhat(rows * cols), inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* v = x.data() + r * cols;
    T mean = 0;
    for (std::size_t c = 0; c < cols; ++c) mean += v[c];
    mean /= T(cols);
    T var = 0;
    for (std::size_t c = 0; c < cols; ++c) var += (v[c] - mean) * (v[c] - mean);
    var /= T(cols);
    inv_std[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t c = 0; c < cols; ++c) {
      xhat[r * cols + c] = (v[c] - mean) * inv_std[r];
      out.data()[r * cols + c] = xhat[r * cols + c] * gain.data()[c] + bias.data()[c];
    }
  }
  if (out.requires_grad()) {
    out.node()->backward_fn = [rows, cols, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& self) {
      Node<T>& px = *self.parents[0];
      Node<T>& pg = *self.parents[1];
      Node<T>& pb = *self.parents[2];
      for (std::size_t r = 0; r < rows; ++r) {
        const T* g = self.grad.data() + r * cols;
        const T* xh = xhat.data() + r * cols;
        T sum_dy = 0, sum_dy_xh = 0;
        for (std::size_t c = 0; c < cols; ++c) {
          const T dy = g[c] * pg.value[c];
          sum_dy += dy;
          sum_dy_xh += dy * xh[c];
          if (pg.requires_grad) pg.grad[c] += g[c] * xh[c];
          if (pb.requires_grad) pb.grad[c] += g[c];
        }
        if (px.requires_grad)
          for (std::size_t c = 0; c < cols; ++c) {
            const T dy = g[c] * pg.value[c];
            px.grad[r * cols + c] += inv_std[r] * (dy - sum_dy / T(cols) - xh[c] * sum_dy_xh / T(cols));
          }
      }
    };
  }
  return out;
}

// Inverted dropout. With train == false the input handle itself is returned.
template <class T>
Tensor<T> dropout(const Tensor<T>& x, double rate, bool train, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout rate must lie in [0, 1)");
  if (!train || rate == 0.0) return x;
  std::vector<T> mask(x.size());
  const T keep_scale = T(1.0 / (1.0 - rate));
  for (auto& m : mask) m = rng.uniform() < rate ? T(0) : keep_scale;
  auto out = detail::make_result<T>(x.shape(), {&x});
  for (std::size_t i = 0; i < x.size(); ++i) out.data()[i] = x.data()[i] * mask[i];
  if (out.requires_grad()) {
    out.node()->backward_fn = [mask = std::move(mask)](Node<T>& self) {
      Node<T>& px = *self.parents[0];
      for (std::size_t i = 0; i < mask.size(); ++i) px.grad[i] += self.grad[i] * mask[i];
    };
  }
  return out;
}

enum class Reduction { kMean, kSum };

// Log-softmax of one row of raw values.
template <class T>
void log_softmax_row(std::span<const T> logits, std::span<T> out) {
  T mx = -std::numeric_limits<T>::infinity();
  for (T v : logits) mx = std::max(mx, v);
  T total = 0;
  for (T v : logits) total += std::exp(v - mx);
  const T log_z = mx + std::log(total);
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - log_z;
}

// -log softmax(logits)[target] per row, reduced over rows whose target is not
// `ignore_index`. An all-ignored input reduces to 0 under kSum and throws under kMean.
template <class T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> targets,
                                int ignore_index = kIgnoreIndex, Reduction reduction = Reduction::kMean) {
  const std::size_t rows = logits.rows(), cols = logits.cols();
  if (targets.size() != rows)
    throw ShapeError("softmax_cross_entropy: " + std::to_string(targets.size()) + " targets for logits " +
                     logits.shape().str());
  std::size_t count = 0;
  for (int t : targets) {
    if (t == ignore_index) continue;
    if (t < 0 || t >= static_cast<int>(cols))
      throw DataError("softmax_cross_entropy: target " + std::to_string(t) + " outside vocabulary of " +
                      std::to_string(cols));
    ++count;
  }
  if (reduction == Reduction::kMean && count == 0)
    throw DataError("softmax_cross_entropy: every target is ignored");
  const T norm = reduction == Reduction::kMean ? T(1) / T(count) : T(1);
  auto out = detail::make_result<T>({1, 1}, {&logits});
  std::vector<T> probs(rows * cols, T(0));
  T loss = 0;
  std::vector<T> lp(cols);
  for (std::size_t r = 0; r < rows; ++r) {
    if (targets[r] == ignore_index) continue;
    log_softmax_row<T>({logits.data() + r * cols, cols}, lp);
    loss -= lp[targets[r]];
    for (std::size_t c = 0; c < cols; ++c) probs[r * cols + c] = std::exp(lp[c]);
  }
  out.data()[0] = loss * norm;
  if (out.requires_grad()) {
    std::vector<int> tg(targets.begin(), targets.end());
    out.node()->backward_fn = [rows, cols, norm, ignore_index, tg = std::move(tg),
                               probs = std::move(probs)](Node<T>& self) {
      Node<T>& pl = *self.parents[0];
      const T g = self.grad[0] * norm;
      for (std::size_t r = 0; r < rows; ++r) {
        if (tg[r] == ignore_index) continue;
        for (std::size_t c = 0; c < cols; ++c) pl.grad[r * cols + c] += g * probs[r * cols + c];
        pl.grad[r * cols + tg[r]] -= g;
      }
    };
  }
  return out;
}

}  // namespace nmt::tensor
