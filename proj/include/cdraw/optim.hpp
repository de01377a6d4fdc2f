#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "cdraw/graph.hpp"
#include "cdraw/rng.hpp"
#include "cdraw/tensor.hpp"

namespace cdraw {

// Ordered, named parameter collection. unique_ptr keeps Param addresses
// stable across growth, so graphs can hold raw Param*.
struct ParamSet {
  std::vector<std::pair<std::string, std::unique_ptr<Param>>> items;

  Param& add(const std::string& name, Shape shape) {
    for (auto& [n, p] : items)
      if (n == name) throw std::invalid_argument("ParamSet: duplicate name " + name);
    items.emplace_back(name, std::make_unique<Param>());
    items.back().second->value = Tensor::zeros(std::move(shape));
    return *items.back().second;
  }

  Param* find(const std::string& name) {
    for (auto& [n, p] : items)
      if (n == name) return p.get();
    return nullptr;
  }

  void zero_grads() {
    for (auto& [n, p] : items) p->zero_grad();
  }

  int64_t total_size() const {
    int64_t n = 0;
    for (auto& [name, p] : items) n += p->value.size();
    return n;
  }
};

inline void init_uniform(Tensor& t, float bound, Rng& rng) {
  for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-bound, bound);
}

inline void init_glorot(Tensor& t, int64_t fan_in, int64_t fan_out, Rng& rng) {
  init_uniform(t, std::sqrt(6.0f / (float)(fan_in + fan_out)), rng);
}

// Adam with bias correction; step counts the number of updates applied.
struct AdamState {
  int64_t step = 0;
  float lr = 1e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
  std::vector<Tensor> m, v;
};

inline AdamState adam_init(const ParamSet& params, float lr) {
  AdamState s;
  s.lr = lr;
  for (auto& [name, p] : params.items) {
    s.m.push_back(Tensor::zeros(p->value.shape()));
    s.v.push_back(Tensor::zeros(p->value.shape()));
  }
  return s;
}

// One update from the gradients accumulated in `params`. Throws on
// non-finite gradients so training aborts with a diagnostic instead of
// silently corrupting parameters.
inline void adam_step(AdamState& s, ParamSet& params) {
  if (s.m.size() != params.items.size())
    throw std::invalid_argument("adam_step: state does not match parameter set");
  s.step += 1;
  float c1 = 1.0f - std::pow(s.beta1, (float)s.step);
  float c2 = 1.0f - std::pow(s.beta2, (float)s.step);
  for (size_t idx = 0; idx < params.items.size(); ++idx) {
    Param& p = *params.items[idx].second;
    p.ensure_grad();
    Tensor& m = s.m[idx];
    Tensor& v = s.v[idx];
    if (!m.same_shape(p.value))
      throw std::invalid_argument("adam_step: shape drift on " + params.items[idx].first);
    for (int64_t i = 0; i < p.value.size(); ++i) {
      float g = p.grad[i];
      if (!float_finite(g))
        throw std::runtime_error("adam_step: non-finite gradient in " +
                                 params.items[idx].first);
      m[i] = s.beta1 * m[i] + (1.0f - s.beta1) * g;
      v[i] = s.beta2 * v[i] + (1.0f - s.beta2) * g * g;
      float mh = m[i] / c1;
      float vh = v[i] / c2;
      p.value[i] -= s.lr * mh / (std::sqrt(vh) + s.eps);
    }
  }
}

}  // namespace cdraw
