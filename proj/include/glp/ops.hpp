#pragma once

// Differentiable operations. Image tensors are N x C x H x W.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "glp/gemm.hpp"
#include "glp/tensor.hpp"

namespace glp::nn {

namespace detail {

template <class T>
void require_rank(const Tensor<T>& t, std::size_t rank, const char* op) {
  if (!t.defined() || t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected a rank-" +
                     std::to_string(rank) + " tensor, got " +
                     (t.defined() ? dims_str(t.shape()) : "undefined"));
  }
}

template <class T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + dims_str(a.shape()) +
                     " vs " + dims_str(b.shape()));
  }
}

template <class T>
void add_into(std::span<T> dst, std::span<const T> src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace detail

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<T> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a[i] + b[i];
  return make_result<T>(a.shape(), std::move(v), {&a, &b}, [](Node<T>& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (self.parent_needs_grad[p]) {
        detail::add_into<T>(self.parents[p]->grad_buffer(), self.grad);
      }
    }
  });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<T> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a[i] * b[i];
  return make_result<T>(a.shape(), std::move(v), {&a, &b}, [](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (self.parent_needs_grad[0]) {
      auto g = pa.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.value[i];
    }
    if (self.parent_needs_grad[1]) {
      auto g = pb.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.value[i];
    }
  });
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  std::vector<T> v(a.values().begin(), a.values().end());
  for (T& x : v) x *= s;
  return make_result<T>(a.shape(), std::move(v), {&a}, [s](Node<T>& self) {
    auto g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
  });
}

template <class T>
Tensor<T> sum(const Tensor<T>& a) {
  T s = T(0);
  for (T x : a.values()) s += x;
  return make_result<T>({1}, {s}, {&a}, [](Node<T>& self) {
    auto g = self.parents[0]->grad_buffer();
    for (T& x : g) x += self.grad[0];
  });
}

/// Scalar a[i] (flat index), e.g. one class score out of a logits tensor.
template <class T>
Tensor<T> pick(const Tensor<T>& a, std::size_t index) {
  if (index >= a.numel()) throw ShapeError("pick: index out of range");
  return make_result<T>({1}, {a[index]}, {&a}, [index](Node<T>& self) {
    self.parents[0]->grad_buffer()[index] += self.grad[0];
  });
}

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
  std::vector<T> v(x.values().begin(), x.values().end());
  for (T& e : v) e = e > T(0) ? e : T(0);
  return make_result<T>(x.shape(), std::move(v), {&x}, [](Node<T>& self) {
    auto g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (self.value[i] > T(0)) g[i] += self.grad[i];
    }
  });
}

/// [N, ...] -> [N, prod(...)]
template <class T>
Tensor<T> flatten(const Tensor<T>& x) {
  if (!x.defined() || x.rank() < 1) throw ShapeError("flatten: empty tensor");
  const std::size_t n = x.dim(0);
  const std::size_t rest = n == 0 ? 0 : x.numel() / n;
  std::vector<T> v(x.values().begin(), x.values().end());
  return make_result<T>({n, rest}, std::move(v), {&x}, [](Node<T>& self) {
    detail::add_into<T>(self.parents[0]->grad_buffer(), self.grad);
  });
}

/// Concatenates [N, A] and [N, B] into [N, A + B] (first operand first).
template <class T>
Tensor<T> concat_features(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_rank(a, 2, "concat_features");
  detail::require_rank(b, 2, "concat_features");
  if (a.dim(0) != b.dim(0)) throw ShapeError("concat_features: batch mismatch");
  const std::size_t n = a.dim(0), da = a.dim(1), db = b.dim(1);
  std::vector<T> v(n * (da + db));
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(a.values().data() + i * da, da, v.data() + i * (da + db));
    std::copy_n(b.values().data() + i * db, db, v.data() + i * (da + db) + da);
  }
  return make_result<T>({n, da + db}, std::move(v), {&a, &b},
                        [n, da, db](Node<T>& self) {
    const T* g = self.grad.data();
    if (self.parent_needs_grad[0]) {
      auto ga = self.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < da; ++j) ga[i * da + j] += g[i * (da + db) + j];
    }
    if (self.parent_needs_grad[1]) {
      auto gb = self.parents[1]->grad_buffer();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < db; ++j)
          gb[i * db + j] += g[i * (da + db) + da + j];
    }
  });
}

namespace detail {

struct ConvGeometry {
  std::size_t c, h, w, k, kh, kw, stride, pad, ho, wo;
  std::size_t col_rows() const { return c * kh * kw; }
  std::size_t col_cols() const { return ho * wo; }
};

template <class T>
void im2col(const T* x, const ConvGeometry& g, T* col) {
  const std::size_t cols = g.col_cols();
  for (std::size_t c = 0; c < g.c; ++c) {
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        T* row = col + ((c * g.kh + ky) * g.kw + kx) * cols;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                          static_cast<std::ptrdiff_t>(g.pad);
          T* dst = row + oy * g.wo;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) {
            std::fill_n(dst, g.wo, T(0));
            continue;
          }
          const T* src = x + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                            static_cast<std::ptrdiff_t>(g.pad);
            dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w))
                          ? T(0)
                          : src[ix];
          }
        }
      }
    }
  }
}

template <class T>
void col2im_add(const T* col, const ConvGeometry& g, T* x) {
  const std::size_t cols = g.col_cols();
  for (std::size_t c = 0; c < g.c; ++c) {
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const T* row = col + ((c * g.kh + ky) * g.kw + kx) * cols;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                          static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          T* dst = x + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                            static_cast<std::ptrdiff_t>(g.pad);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.w)) {
              dst[ix] += row[oy * g.wo + ox];
            }
          }
        }
      }
    }
  }
}

}  // namespace detail

/// Cross-correlation of x[N,C,H,W] with w[K,C,kh,kw] plus bias b[K].
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                 std::size_t stride = 1, std::size_t pad = 0) {
  detail::require_rank(x, 4, "conv2d input");
  detail::require_rank(w, 4, "conv2d weight");
  detail::require_rank(b, 1, "conv2d bias");
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");
  const std::size_t n = x.dim(0);
  detail::ConvGeometry g{x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(2),
                         w.dim(3), stride, pad, 0, 0};
  if (w.dim(1) != g.c) {
    throw ShapeError("conv2d: weight expects " + std::to_string(w.dim(1)) +
                     " input channels, input has " + std::to_string(g.c));
  }
  if (b.dim(0) != g.k) throw ShapeError("conv2d: bias length mismatch");
  const std::size_t ph = g.h + 2 * pad, pw = g.w + 2 * pad;
  if (ph < g.kh || pw < g.kw || (ph - g.kh) % stride != 0 ||
      (pw - g.kw) % stride != 0) {
    throw ShapeError("conv2d: kernel/stride/pad do not tile input " +
                     dims_str(x.shape()));
  }
  g.ho = (ph - g.kh) / stride + 1;
  g.wo = (pw - g.kw) / stride + 1;

  const std::size_t rows = g.col_rows(), cols = g.col_cols();
  const std::size_t in_sz = g.c * g.h * g.w, out_sz = g.k * cols;
  std::vector<T> out(n * out_sz);
  std::vector<T> col(rows * cols);
  for (std::size_t s = 0; s < n; ++s) {
    detail::im2col(x.values().data() + s * in_sz, g, col.data());
    T* o = out.data() + s * out_sz;
    for (std::size_t k = 0; k < g.k; ++k) std::fill_n(o + k * cols, cols, b[k]);
    detail::gemm_nn(g.k, cols, rows, w.values().data(), col.data(), o);
  }
  return make_result<T>({n, g.k, g.ho, g.wo}, std::move(out), {&x, &w, &b},
                        [g, n](Node<T>& self) {
    const auto& xv = self.parents[0]->value;
    const auto& wv = self.parents[1]->value;
    const std::size_t rows = g.col_rows(), cols = g.col_cols();
    const std::size_t in_sz = g.c * g.h * g.w, out_sz = g.k * cols;
    std::vector<T> col(rows * cols);
    std::vector<T> dcol;
    T* gx = self.parent_needs_grad[0] ? self.parents[0]->grad_buffer().data() : nullptr;
    T* gw = self.parent_needs_grad[1] ? self.parents[1]->grad_buffer().data() : nullptr;
    T* gb = self.parent_needs_grad[2] ? self.parents[2]->grad_buffer().data() : nullptr;
    if (gx) dcol.resize(rows * cols);
    for (std::size_t s = 0; s < n; ++s) {
      const T* go = self.grad.data() + s * out_sz;
      if (gb) {
        for (std::size_t k = 0; k < g.k; ++k) {
          T acc = T(0);
          for (std::size_t j = 0; j < cols; ++j) acc += go[k * cols + j];
          gb[k] += acc;
        }
      }
      if (gw) {
        detail::im2col(xv.data() + s * in_sz, g, col.data());
        detail::gemm_nt(g.k, rows, cols, go, col.data(), gw);
      }
      if (gx) {
        std::fill(dcol.begin(), dcol.end(), T(0));
        detail::gemm_tn(rows, cols, g.k, wv.data(), go, dcol.data());
        detail::col2im_add(dcol.data(), g, gx + s * in_sz);
      }
    }
  });
}

/// 2x2 max pooling with stride 2; odd trailing rows/columns are dropped.
template <class T>
Tensor<T> maxpool2(const Tensor<T>& x) {
  detail::require_rank(x, 4, "maxpool2");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t ho = h / 2, wo = w / 2;
  if (ho == 0 || wo == 0) throw ShapeError("maxpool2: input smaller than 2x2");
  std::vector<T> out(n * c * ho * wo);
  std::vector<std::size_t> arg(out.size());
  const T* xv = x.values().data();
  for (std::size_t p = 0; p < n * c; ++p) {
    const T* plane = xv + p * h * w;
    for (std::size_t oy = 0; oy < ho; ++oy) {
      for (std::size_t ox = 0; ox < wo; ++ox) {
        std::size_t best = (2 * oy) * w + 2 * ox;
        for (std::size_t dy = 0; dy < 2; ++dy) {
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = (2 * oy + dy) * w + 2 * ox + dx;
            if (plane[idx] > plane[best]) best = idx;
          }
        }
        const std::size_t o = (p * ho + oy) * wo + ox;
        out[o] = plane[best];
        arg[o] = p * h * w + best;
      }
    }
  }
  return make_result<T>({n, c, ho, wo}, std::move(out), {&x},
                        [arg = std::move(arg)](Node<T>& self) {
    auto g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < arg.size(); ++i) g[arg[i]] += self.grad[i];
  });
}

enum class Mode { train, eval };

template <class T>
struct BatchNormStats {
  std::vector<T> mean;
  std::vector<T> var;
};

inline constexpr double kBatchNormMomentum = 0.1;
inline constexpr double kBatchNormEps = 1e-5;

/// Per-channel batch normalization of x[N,C,H,W]. Train mode normalizes with
/// the biased batch statistics and folds them (unbiased variance) into
/// `running`; eval mode applies the running statistics as a fixed affine map.
template <class T>
Tensor<T> batchnorm2d(const Tensor<T>& x, const Tensor<T>& gamma,
                      const Tensor<T>& beta, BatchNormStats<T>& running,
                      Mode mode) {
  detail::require_rank(x, 4, "batchnorm2d");
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (gamma.numel() != c || beta.numel() != c || running.mean.size() != c ||
      running.var.size() != c) {
    throw ShapeError("batchnorm2d: parameter length does not match channels");
  }
  const std::size_t m = n * hw;
  if (mode == Mode::train && m < 2) {
    throw ShapeError("batchnorm2d: train mode needs more than one value per channel");
  }
  const T eps = static_cast<T>(kBatchNormEps);
  std::vector<T> mean(c), inv_std(c), xhat(x.numel()), out(x.numel());
  const T* xv = x.values().data();
  for (std::size_t ch = 0; ch < c; ++ch) {
    T mu, var;
    if (mode == Mode::train) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < hw; ++j) s += xv[(i * c + ch) * hw + j];
      mu = static_cast<T>(s / static_cast<double>(m));
      double ss = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < hw; ++j) {
          const double d = xv[(i * c + ch) * hw + j] - mu;
          ss += d * d;
        }
      }
      var = static_cast<T>(ss / static_cast<double>(m));
      const T mom = static_cast<T>(kBatchNormMomentum);
      running.mean[ch] = (T(1) - mom) * running.mean[ch] + mom * mu;
      running.var[ch] = (T(1) - mom) * running.var[ch] +
                        mom * static_cast<T>(ss / static_cast<double>(m - 1));
    } else {
      mu = running.mean[ch];
      var = running.var[ch];
    }
    mean[ch] = mu;
    inv_std[ch] = T(1) / std::sqrt(var + eps);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < hw; ++j) {
        const std::size_t idx = (i * c + ch) * hw + j;
        xhat[idx] = (xv[idx] - mu) * inv_std[ch];
        out[idx] = gamma[ch] * xhat[idx] + beta[ch];
      }
    }
  }
  const bool batch_stats = mode == Mode::train;
  return make_result<T>(x.shape(), std::move(out), {&x, &gamma, &beta},
                        [n, c, hw, m, batch_stats, inv_std, xhat = std::move(xhat)](
                            Node<T>& self) {
    const auto& gv = self.parents[1]->value;
    const T* go = self.grad.data();
    T* gx = self.parent_needs_grad[0] ? self.parents[0]->grad_buffer().data() : nullptr;
    T* gg = self.parent_needs_grad[1] ? self.parents[1]->grad_buffer().data() : nullptr;
    T* gbeta = self.parent_needs_grad[2] ? self.parents[2]->grad_buffer().data() : nullptr;
    for (std::size_t ch = 0; ch < c; ++ch) {
      T sum_g = T(0), sum_gx = T(0);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < hw; ++j) {
          const std::size_t idx = (i * c + ch) * hw + j;
          sum_g += go[idx];
          sum_gx += go[idx] * xhat[idx];
        }
      }
      if (gg) gg[ch] += sum_gx;
      if (gbeta) gbeta[ch] += sum_g;
      if (!gx) continue;
      const T k = gv[ch] * inv_std[ch];
      const T mm = static_cast<T>(m);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < hw; ++j) {
          const std::size_t idx = (i * c + ch) * hw + j;
          if (batch_stats) {
            gx[idx] += k * (go[idx] - sum_g / mm - xhat[idx] * sum_gx / mm);
          } else {
            gx[idx] += k * go[idx];
          }
        }
      }
    }
  });
}

/// y[N,K] = x[N,D] W[K,D]^T + b[K]
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  detail::require_rank(x, 2, "linear input");
  detail::require_rank(w, 2, "linear weight");
  const std::size_t n = x.dim(0), d = x.dim(1), k = w.dim(0);
  if (w.dim(1) != d) {
    throw ShapeError("linear: weight expects " + std::to_string(w.dim(1)) +
                     " features, input has " + std::to_string(d));
  }
  if (b.numel() != k) throw ShapeError("linear: bias length mismatch");
  std::vector<T> out(n * k);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) out[i * k + j] = b[j];
  detail::gemm_nt(n, k, d, x.values().data(), w.values().data(), out.data());
  return make_result<T>({n, k}, std::move(out), {&x, &w, &b},
                        [n, d, k](Node<T>& self) {
    const T* go = self.grad.data();
    if (self.parent_needs_grad[0]) {
      detail::gemm_nn(n, d, k, go, self.parents[1]->value.data(),
                      self.parents[0]->grad_buffer().data());
    }
    if (self.parent_needs_grad[1]) {
      detail::gemm_tn(k, d, n, go, self.parents[0]->value.data(),
                      self.parents[1]->grad_buffer().data());
    }
    if (self.parent_needs_grad[2]) {
      auto gb = self.parents[2]->grad_buffer();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < k; ++j) gb[j] += go[i * k + j];
    }
  });
}

/// Mean over the batch of -log softmax(logits)[label].
template <class T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits,
                                std::span<const int> labels) {
  detail::require_rank(logits, 2, "softmax_cross_entropy");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  if (labels.size() != n) {
    throw ShapeError("softmax_cross_entropy: label count does not match batch");
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= k) {
      throw DomainError("softmax_cross_entropy: label " + std::to_string(y) +
                        " outside [0," + std::to_string(k) + ")");
    }
  }
  std::vector<T> prob(n * k);
  double loss = 0.0;
  const T* lv = logits.values().data();
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = lv + i * k;
    const T mx = *std::max_element(row, row + k);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(static_cast<double>(row[j] - mx));
    for (std::size_t j = 0; j < k; ++j) {
      prob[i * k + j] = static_cast<T>(std::exp(static_cast<double>(row[j] - mx)) / z);
    }
    loss += std::log(z) - static_cast<double>(row[labels[i]] - mx);
  }
  loss /= static_cast<double>(n);
  std::vector<int> ys(labels.begin(), labels.end());
  return make_result<T>({1}, {static_cast<T>(loss)}, {&logits},
                        [n, k, prob = std::move(prob), ys = std::move(ys)](Node<T>& self) {
    auto g = self.parents[0]->grad_buffer();
    const T scale = self.grad[0] / static_cast<T>(n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < k; ++j) {
        const T onehot = static_cast<std::size_t>(ys[i]) == j ? T(1) : T(0);
        g[i * k + j] += scale * (prob[i * k + j] - onehot);
      }
    }
  });
}

}  // namespace glp::nn
