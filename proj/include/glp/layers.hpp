#pragma once

// Parameterized layers built on the differentiable ops.

#include <random>
#include <vector>

#include "glp/ops.hpp"
#include "glp/optim.hpp"

namespace glp::nn {

template <class T>
struct Conv2d {
  Parameter<T> weight;  // [K, C, kh, kw]
  Parameter<T> bias;    // [K]
  std::size_t stride = 1;
  std::size_t pad = 0;

  Conv2d() = default;
  Conv2d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t pad_,
         std::mt19937_64& rng)
      : weight(kaiming_parameter<T>({out, in, kernel, kernel}, in * kernel * kernel, rng)),
        bias(constant_parameter<T>({out}, T(0))),
        pad(pad_) {}

  std::size_t out_channels() const { return weight.tensor.dim(0); }
  std::size_t kernel() const { return weight.tensor.dim(2); }
  std::size_t out_extent(std::size_t in) const {
    return (in + 2 * pad - kernel()) / stride + 1;
  }

  Tensor<T> operator()(const Tensor<T>& x) const {
    return conv2d(x, weight.tensor, bias.tensor, stride, pad);
  }

  void collect(std::vector<Parameter<T>*>& out) { out.push_back(&weight), out.push_back(&bias); }
};

template <class T>
struct Linear {
  Parameter<T> weight;  // [K, D]
  Parameter<T> bias;    // [K]

  Linear() = default;
  Linear(std::size_t in, std::size_t out, std::mt19937_64& rng)
      : weight(kaiming_parameter<T>({out, in}, in, rng)),
        bias(constant_parameter<T>({out}, T(0))) {}

  std::size_t in_features() const { return weight.tensor.dim(1); }
  std::size_t out_features() const { return weight.tensor.dim(0); }

  Tensor<T> operator()(const Tensor<T>& x) const {
    return linear(x, weight.tensor, bias.tensor);
  }

  void collect(std::vector<Parameter<T>*>& out) { out.push_back(&weight), out.push_back(&bias); }
};

template <class T>
struct BatchNorm2d {
  Parameter<T> gamma;
  Parameter<T> beta;
  BatchNormStats<T> running;

  BatchNorm2d() = default;
  explicit BatchNorm2d(std::size_t channels)
      : gamma(constant_parameter<T>({channels}, T(1))),
        beta(constant_parameter<T>({channels}, T(0))),
        running{std::vector<T>(channels, T(0)), std::vector<T>(channels, T(1))} {}

  Tensor<T> train(const Tensor<T>& x) {
    return batchnorm2d(x, gamma.tensor, beta.tensor, running, Mode::train);
  }
  Tensor<T> eval(const Tensor<T>& x) const {
    auto stats = running;
    return batchnorm2d(x, gamma.tensor, beta.tensor, stats, Mode::eval);
  }

  void collect(std::vector<Parameter<T>*>& out) { out.push_back(&gamma), out.push_back(&beta); }
};

}  // namespace glp::nn
