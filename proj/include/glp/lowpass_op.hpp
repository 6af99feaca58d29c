#pragma once

// Differentiable Gaussian low-pass over [N, C, H, W] tensors.
//
// The cutoff of each sample is a constant of the graph: `smart_lowpass`
// picks it by entropy maximization on every forward call and gradients flow
// through the filter at that fixed cutoff. The Gaussian gain is real and even
// in frequency, so the filter is self-adjoint and its backward pass is the
// same filter applied to the (clamp-masked) upstream gradient.

#include <optional>
#include <span>
#include <vector>

#include "glp/imaging.hpp"
#include "glp/spectral.hpp"
#include "glp/tensor.hpp"

namespace glp::nn {

namespace detail {

template <class T>
Image chw_plane_image(std::span<const T> chw, std::size_t c, std::size_t h,
                      std::size_t w) {
  Image img(h, w, c);
  const std::size_t n = h * w;
  auto dst = img.data();
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < n; ++i) {
      dst[i * c + ch] = static_cast<double>(chw[ch * n + i]);
    }
  }
  return img;
}

}  // namespace detail

/// Filters sample i of x at cutoff alphas[i] and clamps to [0, 1].
template <class T>
Tensor<T> lowpass(const Tensor<T>& x, std::span<const double> alphas) {
  if (x.rank() != 4) throw ShapeError("lowpass expects [N, C, H, W]");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (alphas.size() != n) throw ShapeError("lowpass: one cutoff per sample");
  const std::size_t plane = h * w;
  const PlaneLowpass& lp = plane_lowpass(h, w);
  std::vector<T> out(x.numel());
  std::vector<unsigned char> pass(x.numel());
  std::vector<double> in(plane), filtered(plane);
  const T* xv = x.values().data();
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t off = (s * c + ch) * plane;
      for (std::size_t i = 0; i < plane; ++i) in[i] = static_cast<double>(xv[off + i]);
      lp.apply(in, alphas[s], filtered);
      for (std::size_t i = 0; i < plane; ++i) {
        const double u = filtered[i];
        pass[off + i] = u >= 0.0 && u <= 1.0;
        out[off + i] = static_cast<T>(std::clamp(u, 0.0, 1.0));
      }
    }
  }
  std::vector<double> a(alphas.begin(), alphas.end());
  return make_result<T>(x.shape(), std::move(out), {&x},
                        [n, c, h, w, a = std::move(a), pass = std::move(pass)](Node<T>& self) {
    const std::size_t plane = h * w;
    const PlaneLowpass& lp = plane_lowpass(h, w);
    std::vector<double> g(plane), back(plane);
    auto dst = self.parents[0]->grad_buffer();
    for (std::size_t s = 0; s < n; ++s) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        const std::size_t off = (s * c + ch) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          g[i] = pass[off + i] ? static_cast<double>(self.grad[off + i]) : 0.0;
        }
        lp.apply(g, a[s], back);
        for (std::size_t i = 0; i < plane; ++i) dst[off + i] += static_cast<T>(back[i]);
      }
    }
  });
}

/// Entropy-maximizing cutoff of every sample of x (no gradient).
template <class T>
std::vector<double> smart_cutoffs(const Tensor<T>& x,
                                  const std::optional<std::vector<double>>& grid = std::nullopt) {
  if (x.rank() != 4) throw ShapeError("smart_cutoffs expects [N, C, H, W]");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t per = c * h * w;
  std::vector<double> alphas(n);
  for (std::size_t s = 0; s < n; ++s) {
    const Image img = detail::chw_plane_image<T>(x.values().subspan(s * per, per), c, h, w);
    alphas[s] = smart_filter(img, grid).profile.alpha_star;
  }
  return alphas;
}

/// The smart filter as a graph op: cutoffs are re-selected on each call.
template <class T>
Tensor<T> smart_lowpass(const Tensor<T>& x, std::vector<double>* cutoffs = nullptr) {
  const auto alphas = smart_cutoffs(x);
  if (cutoffs) *cutoffs = alphas;
  return lowpass(x, std::span<const double>(alphas));
}

}  // namespace glp::nn
