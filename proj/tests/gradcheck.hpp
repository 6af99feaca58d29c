#pragma once

// Central finite-difference check of the reverse-mode gradients.

#include <functional>
#include <random>
#include <vector>

#include "glp/ops.hpp"
#include "oracles.hpp"

namespace gradcheck {

using Tensor = glp::nn::Tensor<double>;

inline Tensor random_tensor(glp::nn::Dims shape, std::mt19937_64& rng, double lo = -1.0,
                            double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(glp::nn::numel_of(shape));
  for (double& x : v) x = u(rng);
  return Tensor::from(std::move(shape), std::move(v), true);
}

/// Reduces a tensor to a scalar with fixed random weights so every output
/// element contributes a distinct coefficient.
inline Tensor project(const Tensor& y, std::uint64_t seed = 17) {
  std::mt19937_64 rng(seed);
  auto r = random_tensor(y.shape(), rng);
  r.set_requires_grad(false);
  return glp::nn::sum(glp::nn::mul(y, r));
}

/// Largest relative error between analytic and numeric gradients over all
/// elements of `inputs`. `loss` must rebuild the graph from the current values.
inline double max_rel_error(const std::function<Tensor()>& loss, std::vector<Tensor> inputs,
                            double h = 1e-5) {
  for (auto& t : inputs) t.zero_grad();
  glp::nn::backward(loss());
  double worst = 0.0;
  for (auto& t : inputs) {
    std::vector<double> analytic(t.grad().begin(), t.grad().end());
    if (analytic.empty()) analytic.assign(t.numel(), 0.0);
    auto vals = t.values();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double numeric = oracle::central_difference(
          [&] {
            glp::nn::NoGradGuard ng;
            return loss().item();
          },
          vals[i], h);
      worst = std::max(worst, oracle::rel_error(analytic[i], numeric));
    }
  }
  return worst;
}

}  // namespace gradcheck
