#pragma once

// Frequency-domain Gaussian low-pass filtering and the entropy-maximizing
// "smart" filter that picks the cutoff per input image.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "glp/common.hpp"
#include "glp/fft.hpp"
#include "glp/imaging.hpp"

namespace glp {

/// Centered 2D spectrum: values[u * width + v] holds frequency
/// (u - height/2, v - width/2), so the zero-frequency bin sits at
/// (height/2, width/2).
struct Spectrum {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<cplx> values;

  cplx& at(std::size_t u, std::size_t v) { return values[u * width + v]; }
  cplx at(std::size_t u, std::size_t v) const { return values[u * width + v]; }
  std::size_t center_row() const { return height / 2; }
  std::size_t center_col() const { return width / 2; }
};

struct EntropyProfile {
  std::vector<double> alphas;
  std::vector<double> entropies;
  double alpha_star = 0.0;
  std::size_t star_index = 0;
};

struct SmartFilterResult {
  Image image;
  EntropyProfile profile;
};

namespace detail {

// Signed frequency of unshifted FFT index k under the centered convention.
inline double signed_frequency(std::size_t k, std::size_t n) {
  const std::size_t pos = (k + n / 2) % n;
  return static_cast<double>(pos) - static_cast<double>(n / 2);
}

inline void check_alpha(double alpha) {
  if (!(alpha > 0.0) || !std::isfinite(alpha)) {
    throw DomainError("low-pass alpha must be a positive finite value");
  }
}

}  // namespace detail

/// Squared distance from the spectrum center for each bin, laid out in raw
/// (unshifted) FFT order.
inline std::vector<double> squared_frequency_radius(std::size_t height,
                                                    std::size_t width) {
  std::vector<double> d2(height * width);
  for (std::size_t y = 0; y < height; ++y) {
    const double fy = detail::signed_frequency(y, height);
    for (std::size_t x = 0; x < width; ++x) {
      const double fx = detail::signed_frequency(x, width);
      d2[y * width + x] = fy * fy + fx * fx;
    }
  }
  return d2;
}

inline double gaussian_gain(double d2, double alpha) {
  return std::exp(-d2 / (2.0 * alpha * alpha));
}

/// Reusable Gaussian low-pass machinery for one plane size. Apply() returns the
/// unclamped real part of the filtered plane.
class PlaneLowpass {
 public:
  PlaneLowpass(std::size_t height, std::size_t width)
      : height_(height), width_(width), plan_(height, width),
        d2_(squared_frequency_radius(height, width)) {}

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }

  std::vector<cplx> forward(std::span<const double> plane) const {
    std::vector<cplx> spec(plane.begin(), plane.end());
    plan_.forward(spec);
    return spec;
  }

  /// Gain exp(-D^2 / (2 alpha^2)) over the raw frequency layout, memoized.
  std::shared_ptr<const std::vector<double>> gains(double alpha) const {
    auto it = gains_.find(alpha);
    if (it != gains_.end()) return it->second;
    if (gains_.size() >= 256) gains_.clear();
    auto g = std::make_shared<std::vector<double>>(d2_.size());
    const double inv = 1.0 / (2.0 * alpha * alpha);
    for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] = std::exp(-d2_[i] * inv);
    gains_.emplace(alpha, g);
    return g;
  }

  void apply_spectrum(std::span<const cplx> spectrum, double alpha,
                      std::span<double> out) const {
    const auto gp = gains(alpha);
    const auto& g = *gp;
    work_.resize(spectrum.size());
    for (std::size_t i = 0; i < work_.size(); ++i) work_[i] = spectrum[i] * g[i];
    plan_.inverse(work_);
    for (std::size_t i = 0; i < work_.size(); ++i) out[i] = work_[i].real();
  }

  /// Two cutoffs with one inverse transform. Both filtered spectra are
  /// Hermitian, so the inverse of Y1 + iY2 is y1 + iy2 with y1, y2 real.
  void apply_spectrum_pair(std::span<const cplx> spectrum, double a1, double a2,
                           std::span<double> out1, std::span<double> out2) const {
    const auto p1 = gains(a1);
    const auto p2 = gains(a2);
    const auto& g1 = *p1;
    const auto& g2 = *p2;
    work_.resize(spectrum.size());
    for (std::size_t i = 0; i < work_.size(); ++i) {
      const cplx x = spectrum[i];
      work_[i] = cplx(x.real() * g1[i] - x.imag() * g2[i], x.imag() * g1[i] + x.real() * g2[i]);
    }
    plan_.inverse(work_);
    for (std::size_t i = 0; i < work_.size(); ++i) {
      out1[i] = work_[i].real();
      out2[i] = work_[i].imag();
    }
  }

  void apply(std::span<const double> plane, double alpha,
             std::span<double> out) const {
    apply_spectrum(forward(plane), alpha, out);
  }

 private:
  std::size_t height_;
  std::size_t width_;
  Fft2Plan plan_;
  std::vector<double> d2_;
  mutable std::vector<cplx> work_;
  mutable std::map<double, std::shared_ptr<const std::vector<double>>> gains_;
};

/// A per-thread filter for the given size, so plans and gains are reused.
inline const PlaneLowpass& plane_lowpass(std::size_t height, std::size_t width) {
  thread_local std::map<std::pair<std::size_t, std::size_t>, std::unique_ptr<PlaneLowpass>> cache;
  auto& slot = cache[{height, width}];
  if (!slot) slot = std::make_unique<PlaneLowpass>(height, width);
  return *slot;
}

inline Spectrum dft2(const Image& channel) {
  if (channel.channels() != 1) throw ShapeError("dft2 expects one channel");
  if (channel.height() == 0 || channel.width() == 0) {
    throw ShapeError("dft2 expects a non-empty image");
  }
  const std::size_t h = channel.height();
  const std::size_t w = channel.width();
  std::vector<cplx> raw(channel.data().begin(), channel.data().end());
  Fft2Plan(h, w).forward(raw);
  Spectrum s{h, w, std::vector<cplx>(h * w)};
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      s.values[((y + h / 2) % h) * w + (x + w / 2) % w] = raw[y * w + x];
    }
  }
  return s;
}

/// Inverse of dft2 returning the complex plane in raw spatial order.
inline std::vector<cplx> idft2_complex(const Spectrum& s) {
  const std::size_t h = s.height;
  const std::size_t w = s.width;
  std::vector<cplx> raw(h * w);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      raw[y * w + x] = s.values[((y + h / 2) % h) * w + (x + w / 2) % w];
    }
  }
  Fft2Plan(h, w).inverse(raw);
  return raw;
}

/// Real part of the inverse transform, without clamping.
inline std::vector<double> idft2_real(const Spectrum& s) {
  const auto raw = idft2_complex(s);
  std::vector<double> out(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) out[i] = raw[i].real();
  return out;
}

inline Spectrum gaussian_lowpass(const Spectrum& spec, double alpha) {
  detail::check_alpha(alpha);
  Spectrum out = spec;
  const double cy = static_cast<double>(spec.center_row());
  const double cx = static_cast<double>(spec.center_col());
  for (std::size_t u = 0; u < spec.height; ++u) {
    for (std::size_t v = 0; v < spec.width; ++v) {
      const double dy = static_cast<double>(u) - cy;
      const double dx = static_cast<double>(v) - cx;
      out.at(u, v) *= gaussian_gain(dy * dy + dx * dx, alpha);
    }
  }
  return out;
}

/// Per-channel Gaussian low-pass, real part, clamped to [0,1].
inline Image filter_image(const Image& img, double alpha) {
  detail::check_alpha(alpha);
  const PlaneLowpass& lp = plane_lowpass(img.height(), img.width());
  Image out(img.height(), img.width(), img.channels());
  std::vector<double> plane(img.pixel_count());
  for (std::size_t c = 0; c < img.channels(); ++c) {
    const Image ch = img.channel(c);
    lp.apply(ch.data(), alpha, plane);
    for (double& v : plane) v = std::clamp(v, 0.0, 1.0);
    out.set_channel(c, Image(img.height(), img.width(), 1, plane));
  }
  return out;
}

/// `count` log-spaced cutoffs from lo to hi inclusive.
inline std::vector<double> log_spaced(double lo, double hi, std::size_t count) {
  std::vector<double> g(count);
  if (count == 1) {
    g[0] = lo;
    return g;
  }
  const double a = std::log(lo);
  const double b = std::log(hi);
  for (std::size_t i = 0; i < count; ++i) {
    g[i] = std::exp(a + (b - a) * static_cast<double>(i) /
                            static_cast<double>(count - 1));
  }
  g.front() = lo;
  g.back() = hi;
  return g;
}

inline constexpr std::size_t kDefaultAlphaGridSize = 64;
inline constexpr double kMinDefaultAlpha = 0.5;

inline std::vector<double> default_alpha_grid(std::size_t height,
                                              std::size_t width) {
  const double hi = static_cast<double>(std::min(height, width)) / 2.0;
  return log_spaced(kMinDefaultAlpha, hi, kDefaultAlphaGridSize);
}

/// Scans the cutoff grid, measuring the Shannon entropy of each filtered
/// image's luminance, and returns the filtered image at the entropy-maximizing
/// cutoff. Ties resolve to the smallest cutoff.
inline SmartFilterResult smart_filter(
    const Image& img, std::optional<std::vector<double>> grid = std::nullopt) {
  if (img.height() < 8 || img.width() < 8) {
    throw DomainError("smart_filter needs an image of at least 8x8");
  }
  std::vector<double> alphas =
      grid ? *grid : default_alpha_grid(img.height(), img.width());
  if (alphas.empty()) throw DomainError("smart_filter: empty alpha grid");
  for (std::size_t i = 0; i < alphas.size(); ++i) {
    detail::check_alpha(alphas[i]);
    if (i > 0 && !(alphas[i] > alphas[i - 1])) {
      throw DomainError("smart_filter: alpha grid must be strictly ascending");
    }
  }

  const std::size_t h = img.height();
  const std::size_t w = img.width();
  const std::size_t nc = img.channels();
  const std::size_t n = h * w;
  const PlaneLowpass& lp = plane_lowpass(h, w);
  std::vector<std::vector<cplx>> spectra;
  spectra.reserve(nc);
  for (std::size_t c = 0; c < nc; ++c) {
    spectra.push_back(lp.forward(img.channel(c).data()));
  }

  EntropyProfile profile;
  profile.alphas = alphas;
  profile.entropies.resize(alphas.size());
  // Cutoffs are scanned in pairs sharing one inverse transform.
  std::vector<double> planes0(n * nc), planes1(n * nc);
  std::vector<double> gray(n);
  auto entropy_of = [&](std::vector<double>& planes) {
    for (double& v : planes) v = std::clamp(v, 0.0, 1.0);
    if (nc == 1) return shannon_entropy(histogram256(planes));
    for (std::size_t i = 0; i < n; ++i) {
      gray[i] = 0.299 * planes[i] + 0.587 * planes[n + i] + 0.114 * planes[2 * n + i];
    }
    return shannon_entropy(histogram256(gray));
  };
  double best_h = -1.0;
  for (std::size_t a = 0; a < alphas.size(); a += 2) {
    const bool pair = a + 1 < alphas.size();
    for (std::size_t c = 0; c < nc; ++c) {
      std::span<double> p0(planes0.data() + c * n, n), p1(planes1.data() + c * n, n);
      if (pair) {
        lp.apply_spectrum_pair(spectra[c], alphas[a], alphas[a + 1], p0, p1);
      } else {
        lp.apply_spectrum(spectra[c], alphas[a], p0);
      }
    }
    for (std::size_t k = 0; k < (pair ? 2u : 1u); ++k) {
      const double bits = entropy_of(k == 0 ? planes0 : planes1);
      profile.entropies[a + k] = bits;
      if (bits > best_h) {
        best_h = bits;
        profile.star_index = a + k;
      }
    }
  }
  profile.alpha_star = alphas[profile.star_index];

  // The returned image is filtered alone at the chosen cutoff, exactly as
  // filter_image would.
  Image out(h, w, nc);
  auto dst = out.data();
  std::vector<double> plane(n);
  for (std::size_t c = 0; c < nc; ++c) {
    lp.apply_spectrum(spectra[c], profile.alpha_star, plane);
    for (std::size_t i = 0; i < n; ++i) dst[i * nc + c] = std::clamp(plane[i], 0.0, 1.0);
  }
  return {std::move(out), std::move(profile)};
}

inline void write_profile_csv(std::ostream& os, const EntropyProfile& p) {
  char buf[96];
  os << "alpha,entropy\n";
  for (std::size_t i = 0; i < p.alphas.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.10g,%.10g\n", p.alphas[i],
                  p.entropies[i]);
    os << buf;
  }
  std::snprintf(buf, sizeof buf, "# alpha_star=%.10g\n", p.alpha_star);
  os << buf;
}

}  // namespace glp
