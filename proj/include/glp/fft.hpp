#pragma once

// One- and two-dimensional complex FFTs. Power-of-two lengths use an
// iterative radix-2 transform; other lengths go through Bluestein's chirp-z
// reduction onto a power-of-two convolution.

#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <algorithm>
#include <span>
#include <vector>

namespace glp {

using cplx = std::complex<double>;

class FftPlan {
 public:
  explicit FftPlan(std::size_t n) : n_(n) {
    if (n_ <= 1) return;
    if (is_pow2(n_)) {
      init_radix2(n_, twiddle_, bitrev_);
    } else {
      init_bluestein();
    }
  }

  std::size_t size() const { return n_; }
  bool radix2_capable() const { return n_ <= 1 || is_pow2(n_); }

  /// Transforms every column of the row-major n x width block at once; the
  /// butterflies run along whole rows. Power-of-two n only.
  void transform_columns(cplx* data, std::size_t width, bool inverse) const {
    if (n_ <= 1) return;
    for (std::size_t i = 0; i < n_; ++i) {
      if (i < bitrev_[i]) {
        std::swap_ranges(data + i * width, data + (i + 1) * width, data + bitrev_[i] * width);
      }
    }
    for (std::size_t len = 2; len <= n_; len <<= 1) {
      const std::size_t half = len / 2;
      const std::size_t step = n_ / len;
      for (std::size_t i = 0; i < n_; i += len) {
        for (std::size_t j = 0; j < half; ++j) {
          cplx w = twiddle_[j * step];
          if (inverse) w = std::conj(w);
          cplx* top = data + (i + j) * width;
          cplx* bot = data + (i + j + half) * width;
          for (std::size_t x = 0; x < width; ++x) {
            const cplx u = top[x];
            const cplx v = mul(bot[x], w);
            top[x] = u + v;
            bot[x] = u - v;
          }
        }
      }
    }
    if (inverse) {
      const double scale = 1.0 / static_cast<double>(n_);
      for (std::size_t i = 0; i < n_ * width; ++i) data[i] *= scale;
    }
  }

  /// In-place transform of data[0], data[stride], ... data[(n-1)*stride].
  /// Forward uses exp(-2*pi*i*k*n/N); inverse applies the conjugate kernel and
  /// divides by N.
  void transform(cplx* data, std::size_t stride, bool inverse,
                 std::vector<cplx>& scratch) const {
    if (n_ <= 1) return;
    scratch.resize(is_pow2(n_) ? n_ : m_);
    if (is_pow2(n_)) {
      for (std::size_t i = 0; i < n_; ++i) scratch[i] = data[i * stride];
      radix2(scratch.data(), n_, twiddle_, bitrev_, inverse);
      const double scale = inverse ? 1.0 / static_cast<double>(n_) : 1.0;
      for (std::size_t i = 0; i < n_; ++i) data[i * stride] = scratch[i] * scale;
      return;
    }
    // Bluestein: X_k = conj(w_k) * sum_n (x_n conj(w_n)) w_{k-n}, w_j = e^{i pi j^2/N}
    for (std::size_t i = 0; i < m_; ++i) scratch[i] = 0.0;
    for (std::size_t i = 0; i < n_; ++i) {
      const cplx w = inverse ? std::conj(chirp_[i]) : chirp_[i];
      scratch[i] = mul(data[i * stride], std::conj(w));
    }
    radix2(scratch.data(), m_, twiddle_, bitrev_, false);
    const auto& kernel = inverse ? kernel_inv_ : kernel_fwd_;
    for (std::size_t i = 0; i < m_; ++i) scratch[i] = mul(scratch[i], kernel[i]);
    radix2(scratch.data(), m_, twiddle_, bitrev_, true);
    const double scale = inverse ? 1.0 / static_cast<double>(n_) : 1.0;
    const double inv_m = 1.0 / static_cast<double>(m_);
    for (std::size_t i = 0; i < n_; ++i) {
      const cplx w = inverse ? std::conj(chirp_[i]) : chirp_[i];
      data[i * stride] = mul(scratch[i], std::conj(w)) * (inv_m * scale);
    }
  }

 private:
  static bool is_pow2(std::size_t n) { return (n & (n - 1)) == 0; }

  static void init_radix2(std::size_t n, std::vector<cplx>& tw,
                          std::vector<std::size_t>& rev) {
    tw.resize(n / 2);
    for (std::size_t k = 0; k < n / 2; ++k) {
      const double a = -2.0 * std::numbers::pi * static_cast<double>(k) /
                       static_cast<double>(n);
      tw[k] = cplx(std::cos(a), std::sin(a));
    }
    rev.resize(n);
    std::size_t bits = 0;
    while ((std::size_t{1} << bits) < n) ++bits;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t r = 0;
      for (std::size_t b = 0; b < bits; ++b) r |= ((i >> b) & 1U) << (bits - 1 - b);
      rev[i] = r;
    }
  }

  static cplx mul(cplx a, cplx b) {
    return {a.real() * b.real() - a.imag() * b.imag(),
            a.real() * b.imag() + a.imag() * b.real()};
  }

  // Unnormalized radix-2 DIT; inverse flips the twiddle sign only.
  static void radix2(cplx* a, std::size_t n, const std::vector<cplx>& tw,
                     const std::vector<std::size_t>& rev, bool inverse) {
    for (std::size_t i = 0; i < n; ++i) {
      if (i < rev[i]) std::swap(a[i], a[rev[i]]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
      const std::size_t half = len / 2;
      const std::size_t step = n / len;
      for (std::size_t i = 0; i < n; i += len) {
        for (std::size_t j = 0; j < half; ++j) {
          cplx w = tw[j * step];
          if (inverse) w = std::conj(w);
          const cplx u = a[i + j];
          const cplx v = mul(a[i + j + half], w);
          a[i + j] = u + v;
          a[i + j + half] = u - v;
        }
      }
    }
  }

  void init_bluestein() {
    m_ = 1;
    while (m_ < 2 * n_ - 1) m_ <<= 1;
    init_radix2(m_, twiddle_, bitrev_);
    chirp_.resize(n_);
    for (std::size_t i = 0; i < n_; ++i) {
      // i^2 mod 2N keeps the phase argument small for long transforms.
      const auto sq = static_cast<double>((i * i) % (2 * n_));
      const double a = std::numbers::pi * sq / static_cast<double>(n_);
      chirp_[i] = cplx(std::cos(a), std::sin(a));
    }
    auto build_kernel = [&](bool inverse) {
      std::vector<cplx> k(m_, 0.0);
      for (std::size_t i = 0; i < n_; ++i) {
        const cplx w = inverse ? std::conj(chirp_[i]) : chirp_[i];
        k[i] = w;
        if (i != 0) k[m_ - i] = w;
      }
      radix2(k.data(), m_, twiddle_, bitrev_, false);
      return k;
    };
    kernel_fwd_ = build_kernel(false);
    kernel_inv_ = build_kernel(true);
  }

  std::size_t n_ = 0;
  std::size_t m_ = 0;
  std::vector<cplx> twiddle_;
  std::vector<std::size_t> bitrev_;
  std::vector<cplx> chirp_;
  std::vector<cplx> kernel_fwd_;
  std::vector<cplx> kernel_inv_;
};

/// Row-major H x W complex 2D transform.
class Fft2Plan {
 public:
  Fft2Plan(std::size_t height, std::size_t width)
      : height_(height), width_(width), rows_(width), cols_(height) {}

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }

  void forward(std::span<cplx> data) const { run(data, false); }
  void inverse(std::span<cplx> data) const { run(data, true); }

 private:
  void run(std::span<cplx> data, bool inverse) const {
    std::vector<cplx> scratch;
    if (rows_.radix2_capable() && cols_.radix2_capable()) {
      // Row transforms become column transforms of the transpose.
      scratch.resize(data.size());
      transpose(data.data(), scratch.data(), height_, width_);
      rows_.transform_columns(scratch.data(), height_, inverse);
      transpose(scratch.data(), data.data(), width_, height_);
      cols_.transform_columns(data.data(), width_, inverse);
      return;
    }
    for (std::size_t y = 0; y < height_; ++y) {
      rows_.transform(data.data() + y * width_, 1, inverse, scratch);
    }
    if (cols_.radix2_capable()) {
      cols_.transform_columns(data.data(), width_, inverse);
      return;
    }
    for (std::size_t x = 0; x < width_; ++x) {
      cols_.transform(data.data() + x, width_, inverse, scratch);
    }
  }

  static void transpose(const cplx* src, cplx* dst, std::size_t h, std::size_t w) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) dst[x * h + y] = src[y * w + x];
    }
  }

  std::size_t height_;
  std::size_t width_;
  FftPlan rows_;
  FftPlan cols_;
};

}  // namespace glp
