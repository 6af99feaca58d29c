#pragma once

// Four-class "textured shapes" classification set: a filled circle or square
// carrying a stripe or checker texture over a noisy gray background. The
// shape is the global factor and the texture the local one; the class is the
// (shape, texture) pair.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>
#include <string>

#include "glp/common.hpp"
#include "glp/imaging.hpp"
#include "glp/manifest.hpp"
#include "glp/navon.hpp"

namespace glp {

enum class Texture { checker, stripes };

inline const char* texture_name(Texture t) {
  return t == Texture::checker ? "checker" : "stripes";
}

inline Image render_textured_shape(Shape shape, Texture texture,
                                   std::size_t image_size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const double size = static_cast<double>(image_size);
  const double half = size / 2.0;
  const double h = (0.5 + 0.35 * u01(rng)) * (half - 2.0);
  const double m = std::max(0.0, half - 2.0 - h);
  const Point c{half + (2.0 * u01(rng) - 1.0) * m,
                half + (2.0 * u01(rng) - 1.0) * m};
  const double period = 4.0 + 4.0 * u01(rng);
  const double theta = std::numbers::pi * u01(rng);
  const double phase = 2.0 * std::numbers::pi * u01(rng);
  const double fg = 0.5 + (u01(rng) < 0.5 ? -1.0 : 1.0) * (0.15 + 0.1 * u01(rng));
  const double contrast = 0.15 + 0.1 * u01(rng);
  std::normal_distribution<double> noise(0.0, 0.05);

  Image img(image_size, image_size, 1);
  for (std::size_t y = 0; y < image_size; ++y) {
    for (std::size_t x = 0; x < image_size; ++x) {
      const double px = static_cast<double>(x) + 0.5;
      const double py = static_cast<double>(y) + 0.5;
      const double dx = px - c.x;
      const double dy = py - c.y;
      const bool inside = shape == Shape::circle
                              ? std::hypot(dx, dy) < h
                              : std::max(std::abs(dx), std::abs(dy)) < h;
      double v = 0.5 + noise(rng);
      if (inside) {
        const double k = 2.0 * std::numbers::pi / period;
        double t = 0.0;
        if (texture == Texture::stripes) {
          t = std::sin(k * (px * std::cos(theta) + py * std::sin(theta)) + phase);
        } else {
          const double a = px * std::cos(theta) + py * std::sin(theta);
          const double b = -px * std::sin(theta) + py * std::cos(theta);
          t = std::sin(k * a + phase) * std::sin(k * b + phase);
        }
        v = fg + contrast * (t > 0.0 ? 1.0 : -1.0) + 0.5 * noise(rng);
      }
      img.at(y, x) = std::clamp(v, 0.0, 1.0);
    }
  }
  return img;
}

/// Balanced over the four classes, split 60/20/20 into train/val/test by
/// per-class instance index.
inline DatasetManifest generate_textured_dataset(
    std::size_t count, std::size_t image_size,
    const std::filesystem::path& out_dir, std::uint64_t seed) {
  if (count < 4) throw DomainError("textured dataset count must be >= 4");
  detail::ensure_dir(out_dir);
  DatasetManifest m{out_dir, {}};
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t cls = i % 4;
    const Shape shape = cls / 2 == 0 ? Shape::circle : Shape::square;
    const Texture texture = cls % 2 == 0 ? Texture::checker : Texture::stripes;
    const Image img = render_textured_shape(shape, texture, image_size,
                                            substream_seed(seed, "textured", i));
    const std::string name = detail::indexed_name("textured", i);
    write_png((out_dir / name).string(), img);
    const std::size_t j = (i / 4) % 5;
    const char* split = j < 3 ? "train" : (j == 3 ? "val" : "test");
    m.records.push_back({name, shape_name(shape), texture_name(texture), split});
  }
  write_manifest(out_dir / kManifestFile, m);
  return m;
}

}  // namespace glp
