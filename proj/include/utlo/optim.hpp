#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "utlo/rng.hpp"
#include "utlo/tensor.hpp"

namespace utlo {

template <class S>
struct Parameter {
  Tensor<S> tensor;
  std::string name;
  std::vector<S> adam_m, adam_v;
  int64_t step_count = 0;

  Parameter() = default;
  Parameter(Tensor<S> t, std::string n) : tensor(std::move(t)), name(std::move(n)) {
    tensor.set_requires_grad(true);
    adam_m.assign(tensor.size(), S(0));
    adam_v.assign(tensor.size(), S(0));
  }
};

struct AdamConfig {
  double lr = 2e-3;
  double beta1 = 0.0;
  double beta2 = 0.99;
  double eps = 1e-8;
};

template <class S>
inline void zero_grads(const std::vector<Parameter<S>*>& params) {
  for (auto* p : params) p->tensor.zero_grad();
}

// Standard Adam with bias correction; gradients are consumed (zeroed).
template <class S>
inline void adam_step(const std::vector<Parameter<S>*>& params, const AdamConfig& cfg) {
  for (auto* p : params) {
    if (!p->tensor.has_grad())
      throw ContractError("adam_step: parameter '" + p->name + "' has no gradient");
    p->step_count += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(p->step_count));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(p->step_count));
    S* w = p->tensor.data();
    S* g = p->tensor.grad_vec().data();
    for (int64_t i = 0; i < p->tensor.size(); ++i) {
      p->adam_m[i] = static_cast<S>(cfg.beta1 * p->adam_m[i] + (1.0 - cfg.beta1) * g[i]);
      p->adam_v[i] = static_cast<S>(cfg.beta2 * p->adam_v[i] + (1.0 - cfg.beta2) * g[i] * g[i]);
      const double mhat = p->adam_m[i] / bc1;
      const double vhat = p->adam_v[i] / bc2;
      w[i] = static_cast<S>(w[i] - cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
    }
    p->tensor.zero_grad();
  }
}

// He-style normal init, std = gain / sqrt(fan_in)
template <class S>
inline Tensor<S> normal_init(Rng& rng, Shape shape, double std_dev) {
  auto t = Tensor<S>::zeros(std::move(shape));
  for (int64_t i = 0; i < t.size(); ++i) t.data()[i] = static_cast<S>(rng.normal() * std_dev);
  return t;
}

template <class S>
inline Tensor<S> he_init(Rng& rng, Shape shape, int fan_in, double gain = 1.0) {
  return normal_init<S>(rng, std::move(shape), gain / std::sqrt(static_cast<double>(fan_in)));
}

}  // namespace utlo
