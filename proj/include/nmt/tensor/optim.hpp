#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "nmt/tensor/tensor.hpp"

namespace nmt::tensor {

// A trainable tensor plus its AdamW state.
template <class T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  std::vector<T> first_moment;
  std::vector<T> second_moment;
  bool decay = true;  // decoupled weight decay applies

  Parameter() = default;
  Parameter(std::string n, Tensor<T> v, bool apply_decay)
      : name(std::move(n)), value(std::move(v)), first_moment(value.size(), T(0)),
        second_moment(value.size(), T(0)), decay(apply_decay) {
    value.set_requires_grad(true);
  }
};

struct AdamWConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

template <class T>
class AdamW {
 public:
  explicit AdamW(AdamWConfig config = {}) : config_(config) {}

  long step_count() const { return step_; }
  void set_step_count(long s) { step_ = s; }
  long rejected_steps() const { return rejected_; }
  void set_rejected_steps(long r) { rejected_ = r; }
  const AdamWConfig& config() const { return config_; }

  // Applies one update at learning rate `lr` using the gradients currently
  // stored on the parameters. A non-finite gradient anywhere rejects the
  // whole step. Returns whether the step was applied.
  bool step(std::vector<Parameter<T>*>& params, double lr) {
    for (auto* p : params) {
      if (!p->value.has_grad()) continue;
      for (T g : p->value.grad())
        if (!std::isfinite(static_cast<double>(g))) {
          ++rejected_;
          return false;
        }
    }
    ++step_;
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
    for (auto* p : params) {
      if (!p->value.has_grad()) continue;
      auto w = p->value.values();
      auto g = p->value.grad();
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = static_cast<double>(g[i]);
        double m = config_.beta1 * static_cast<double>(p->first_moment[i]) + (1.0 - config_.beta1) * gi;
        double v = config_.beta2 * static_cast<double>(p->second_moment[i]) + (1.0 - config_.beta2) * gi * gi;
        p->first_moment[i] = static_cast<T>(m);
        p->second_moment[i] = static_cast<T>(v);
        double wi = static_cast<double>(w[i]);
        if (p->decay) wi -= lr * config_.weight_decay * wi;
        wi -= lr * (m / bc1) / (std::sqrt(v / bc2) + config_.eps);
        w[i] = static_cast<T>(wi);
      }
    }
    return true;
  }

 private:
  AdamWConfig config_;
  long step_ = 0;
  long rejected_ = 0;
};

template <class T>
double global_grad_norm(const std::vector<Parameter<T>*>& params) {
  double total = 0.0;
  for (const auto* p : params) {
    if (!p->value.has_grad()) continue;
    for (T g : p->value.grad()) total += static_cast<double>(g) * static_cast<double>(g);
  }
  return std::sqrt(total);
}

// Rescales every gradient by threshold/norm when the global L2 norm exceeds
// the threshold. Returns the norm measured before clipping.
template <class T>
double clip_global_norm(std::vector<Parameter<T>*>& params, double threshold) {
  const double norm = global_grad_norm(params);
  if (norm > threshold && std::isfinite(norm)) {
    const T factor = static_cast<T>(threshold / norm);
    for (auto* p : params)
      if (p->value.has_grad())
        for (auto& g : p->value.grad()) g *= factor;
  }
  return norm;
}

template <class T>
void zero_grads(std::vector<Parameter<T>*>& params) {
  for (auto* p : params) p->value.zero_grad();
}

}  // namespace nmt::tensor
