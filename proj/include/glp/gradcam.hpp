#pragma once

// Grad-CAM heatmaps over any tapped convolutional activation, plus jet
// overlays and a raw 16-bit PGM dump.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "glp/imaging.hpp"
#include "glp/models.hpp"

namespace glp {

struct Heatmap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> values;

  double at(std::size_t y, std::size_t x) const { return values[y * width + x]; }
  double max() const { return values.empty() ? 0.0 : *std::max_element(values.begin(), values.end()); }
};

enum class Upsample { bilinear, nearest };

/// Anything whose forward pass can record named activations.
template <class M, class T>
concept Tappable = requires(const M& m, const nn::Tensor<T>& x, Taps<T>* taps) {
  { m.logits(x, taps) } -> std::convertible_to<nn::Tensor<T>>;
};

/// Default Grad-CAM layer of a model: the fusion conv for GLP, the second
/// GAS conv for GAS, the last local block otherwise.
inline std::string default_cam_layer(const ModelSpec& s) {
  switch (s.kind) {
    case ModelKind::glp: return s.arch.fusion_channels ? "fusion" : "gas.conv2";
    case ModelKind::gas: return "gas.conv2";
    case ModelKind::local: return "local.block4";
  }
  return "";
}

/// Resamples a row-major h x w map to oh x ow. Bilinear sampling uses pixel
/// centers, (dst + 0.5) * in / out - 0.5, clamped to the border.
inline std::vector<double> resample(const std::vector<double>& src, std::size_t h, std::size_t w,
                                    std::size_t oh, std::size_t ow, Upsample mode) {
  std::vector<double> out(oh * ow);
  const double sy = static_cast<double>(h) / static_cast<double>(oh);
  const double sx = static_cast<double>(w) / static_cast<double>(ow);
  for (std::size_t y = 0; y < oh; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      if (mode == Upsample::nearest) {
        const auto iy = std::min(h - 1, static_cast<std::size_t>((static_cast<double>(y) + 0.5) * sy));
        const auto ix = std::min(w - 1, static_cast<std::size_t>((static_cast<double>(x) + 0.5) * sx));
        out[y * ow + x] = src[iy * w + ix];
        continue;
      }
      const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0,
                                   static_cast<double>(h - 1));
      const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0,
                                   static_cast<double>(w - 1));
      const auto y0 = static_cast<std::size_t>(fy), x0 = static_cast<std::size_t>(fx);
      const std::size_t y1 = std::min(h - 1, y0 + 1), x1 = std::min(w - 1, x0 + 1);
      const double ty = fy - static_cast<double>(y0), tx = fx - static_cast<double>(x0);
      const double top = src[y0 * w + x0] * (1 - tx) + src[y0 * w + x1] * tx;
      const double bot = src[y1 * w + x0] * (1 - tx) + src[y1 * w + x1] * tx;
      out[y * ow + x] = top * (1 - ty) + bot * ty;
    }
  }
  return out;
}

/// Channel weights and the unnormalized, un-upsampled map.
struct CamParts {
  std::vector<double> weights;  // spatial mean of d(score)/dA_k
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> map;  // relu(sum_k w_k A_k)
};

template <class T, class M>
  requires Tappable<M, T>
CamParts gradcam_parts(const M& model, const nn::Tensor<T>& x, int class_index,
                       const std::string& layer) {
  if (x.rank() != 4 || x.dim(0) != 1) throw ShapeError("gradcam takes a single [1, C, H, W] input");
  if (!nn::detail::grad_mode) throw UsageError("gradcam called with gradients disabled");
  nn::FreezeParametersGuard frozen;
  auto xin = x.detach();
  xin.set_requires_grad(true);  // records the graph
  Taps<T> taps;
  const auto z = model.logits(xin, &taps);
  const auto it = taps.find(layer);
  if (it == taps.end()) throw UsageError("model has no layer named '" + layer + "'");
  const auto& act = it->second;
  if (act.rank() != 4 || act.dim(2) == 0 || act.dim(3) == 0) {
    throw UsageError("layer '" + layer + "' has no spatial extent");
  }
  if (class_index < 0 || static_cast<std::size_t>(class_index) >= z.numel()) {
    throw DomainError("class index out of range");
  }
  nn::backward(nn::pick(z, static_cast<std::size_t>(class_index)));

  CamParts p;
  const std::size_t k = act.dim(1);
  p.height = act.dim(2);
  p.width = act.dim(3);
  const std::size_t hw = p.height * p.width;
  p.weights.assign(k, 0.0);
  if (act.has_grad()) {
    const auto g = act.grad();
    for (std::size_t c = 0; c < k; ++c) {
      double s = 0.0;
      for (std::size_t i = 0; i < hw; ++i) s += static_cast<double>(g[c * hw + i]);
      p.weights[c] = s / static_cast<double>(hw);
    }
  }
  p.map.assign(hw, 0.0);
  const auto a = act.values();
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t i = 0; i < hw; ++i) p.map[i] += p.weights[c] * static_cast<double>(a[c * hw + i]);
  }
  for (double& v : p.map) v = std::max(0.0, v);
  return p;
}

/// Heatmap at the input resolution, normalized by its maximum (an all-zero
/// map stays zero).
template <class T, class M>
  requires Tappable<M, T>
Heatmap gradcam(const M& model, const nn::Tensor<T>& x, int class_index, const std::string& layer,
                Upsample mode = Upsample::bilinear) {
  const auto p = gradcam_parts<T>(model, x, class_index, layer);
  Heatmap h{x.dim(2), x.dim(3), resample(p.map, p.height, p.width, x.dim(2), x.dim(3), mode)};
  const double mx = h.max();
  if (mx > 0.0) {
    for (double& v : h.values) v /= mx;
  }
  return h;
}

template <class T>
Heatmap gradcam(const Model<T>& model, const Image& img, int class_index,
                const std::string& layer = "", Upsample mode = Upsample::bilinear) {
  std::vector<float> chw(img.channels() * img.pixel_count());
  image_to_chw(img, chw);
  const auto x = nn::Tensor<T>::from({1, img.channels(), img.height(), img.width()},
                                     std::vector<T>(chw.begin(), chw.end()));
  return gradcam<T>(model, x, class_index, layer.empty() ? default_cam_layer(model.spec) : layer,
                    mode);
}

/// Jet colormap: dark blue at 0 through cyan, yellow, to dark red at 1.
inline std::array<double, 3> jet(double v) {
  v = std::clamp(v, 0.0, 1.0);
  auto ramp = [&](double c) { return std::clamp(1.5 - std::abs(4.0 * v - c), 0.0, 1.0); };
  return {ramp(3.0), ramp(2.0), ramp(1.0)};
}

/// RGB image of (1 - alpha) * gray + alpha * jet(heatmap).
inline Image overlay(const Heatmap& h, const Image& img, double alpha = 0.4) {
  if (h.height != img.height() || h.width != img.width()) {
    throw ShapeError("heatmap and image sizes differ");
  }
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw DomainError("blend alpha must lie in [0, 1]");
  const Image gray = to_grayscale(img);
  Image out(img.height(), img.width(), 3);
  for (std::size_t y = 0; y < img.height(); ++y) {
    for (std::size_t x = 0; x < img.width(); ++x) {
      const auto c = jet(h.at(y, x));
      const double g = gray.at(y, x, 0);
      for (std::size_t ch = 0; ch < 3; ++ch) {
        out.at(y, x, ch) = std::clamp((1.0 - alpha) * g + alpha * c[ch], 0.0, 1.0);
      }
    }
  }
  return out;
}

/// Binary 16-bit PGM (P5, maxval 65535, big-endian samples).
inline std::vector<std::uint8_t> encode_pgm16(const Heatmap& h) {
  const std::string header =
      "P5\n" + std::to_string(h.width) + " " + std::to_string(h.height) + "\n65535\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  for (double v : h.values) {
    const auto q = static_cast<std::uint16_t>(std::lround(std::clamp(v, 0.0, 1.0) * 65535.0));
    out.push_back(static_cast<std::uint8_t>(q >> 8));
    out.push_back(static_cast<std::uint8_t>(q & 0xFF));
  }
  return out;
}

/// Share of heatmap mass on pixels where mask is set; 0 for an empty map.
inline double mass_fraction(const Heatmap& h, const std::vector<bool>& mask) {
  if (mask.size() != h.values.size()) throw ShapeError("mask size does not match the heatmap");
  double in = 0.0, all = 0.0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    all += h.values[i];
    if (mask[i]) in += h.values[i];
  }
  return all > 0.0 ? in / all : 0.0;
}

}  // namespace glp
