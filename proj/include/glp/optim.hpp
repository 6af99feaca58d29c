#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "glp/tensor.hpp"

namespace glp::nn {

/// A learnable tensor plus its SGD momentum buffer.
template <class T>
struct Parameter {
  Tensor<T> tensor;
  std::vector<T> velocity;
  bool frozen = false;

  Parameter() = default;
  explicit Parameter(Tensor<T> t)
      : tensor(std::move(t)), velocity(tensor.numel(), T(0)) {
    tensor.set_requires_grad(true);
    tensor.mark_parameter();
  }

  void freeze() {
    frozen = true;
    tensor.set_requires_grad(false);
    tensor.zero_grad();
  }
  void unfreeze() {
    frozen = false;
    tensor.set_requires_grad(true);
  }
};

template <class T>
Parameter<T> kaiming_parameter(Dims shape, std::size_t fan_in,
                               std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  std::vector<T> v(numel_of(shape));
  for (T& x : v) x = static_cast<T>(dist(rng));
  return Parameter<T>(Tensor<T>::from(std::move(shape), std::move(v)));
}

template <class T>
Parameter<T> constant_parameter(Dims shape, T value) {
  return Parameter<T>(Tensor<T>::full(std::move(shape), value));
}

/// v <- momentum * v + grad; p <- p - lr * v; then clears the gradient.
/// Frozen parameters are skipped.
template <class T>
void sgd_momentum_step(const std::vector<Parameter<T>*>& params, double lr,
                       double momentum = 0.9) {
  for (Parameter<T>* p : params) {
    if (p->frozen) continue;
    if (!p->tensor.has_grad()) {
      throw UsageError("sgd_momentum_step: parameter has no gradient");
    }
  }
  const T mom = static_cast<T>(momentum);
  const T rate = static_cast<T>(lr);
  for (Parameter<T>* p : params) {
    if (p->frozen) continue;
    auto values = p->tensor.values();
    auto grad = p->tensor.grad();
    for (std::size_t i = 0; i < values.size(); ++i) {
      p->velocity[i] = mom * p->velocity[i] + grad[i];
      values[i] -= rate * p->velocity[i];
    }
    p->tensor.zero_grad();
  }
}

}  // namespace glp::nn
