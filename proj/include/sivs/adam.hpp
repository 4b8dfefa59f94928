#ifndef SIVS_ADAM_HPP
#define SIVS_ADAM_HPP

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "sivs/tensor.hpp"

namespace sivs {

// Named parameter registry. Models expose their leaves through collect();
// the optimizer and checkpoint code iterate it in insertion order, so the
// order is part of a model's deterministic behavior.
template <typename T>
struct ParamMap {
  std::vector<std::pair<std::string, Tensor<T>*>> items;

  void add(const std::string& name, Tensor<T>& t) {
    if (!t.has_grad()) throw Error("ParamMap: " + name + " is not a leaf parameter");
    items.emplace_back(name, &t);
  }

  Tensor<T>* find(const std::string& name) const {
    for (const auto& [n, p] : items)
      if (n == name) return p;
    return nullptr;
  }

  void zero_grad() {
    for (auto& [n, p] : items) p->zero_grad();
  }

  std::int64_t count() const {
    std::int64_t n = 0;
    for (const auto& [name, p] : items) n += p->size();
    return n;
  }
};

// Adam with bias correction and decoupled weight decay (the decay term is
// applied directly to the parameter, not mixed into the gradient moments).
template <typename T>
struct Adam {
  T lr;
  T beta1;
  T beta2;
  T eps = T(1e-8);
  T weight_decay = T(0);
  std::int64_t t = 0;
  std::map<std::string, std::pair<std::vector<T>, std::vector<T>>> moments;  // name -> (m, v)

  Adam(T lr_, T beta1_, T beta2_, T weight_decay_ = T(0))
      : lr(lr_), beta1(beta1_), beta2(beta2_), weight_decay(weight_decay_) {}

  void step(ParamMap<T>& params) {
    ++t;
    const T bc1 = T(1) - std::pow(beta1, static_cast<T>(t));
    const T bc2 = T(1) - std::pow(beta2, static_cast<T>(t));
    for (auto& [name, p] : params.items) {
      const T* g = p->grad();
      const std::int64_t n = p->size();
      for (std::int64_t i = 0; i < n; ++i)
        if (!std::isfinite(g[i]))
          throw NumericError("adam: non-finite gradient in parameter '" + name + "'");
      auto& [m, v] = moments[name];
      if (m.empty()) {
        m.assign(n, T(0));
        v.assign(n, T(0));
      }
      T* x = p->data();
      for (std::int64_t i = 0; i < n; ++i) {
        m[i] = beta1 * m[i] + (T(1) - beta1) * g[i];
        v[i] = beta2 * v[i] + (T(1) - beta2) * g[i] * g[i];
        const T mhat = m[i] / bc1;
        const T vhat = v[i] / bc2;
        x[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * x[i]);
      }
    }
  }
};

}  // namespace sivs

#endif
