#pragma once

// Binary shape rasterization, Navon compound stimuli (a global shape drawn
// with local shapes), and the simple-shape / Navon dataset generators.
//
// Geometry: pixel (row y, col x) has its center at (x + 0.5, y + 0.5). An
// outline of half-extent h and stroke width w inks every pixel whose distance
// d from the shape center satisfies h - w/2 <= d < h + w/2, with Euclidean d
// for circles and Chebyshev d for (axis-aligned) squares. Ink is 0 (black)
// on a white (1) background; there is no anti-aliasing.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "glp/common.hpp"
#include "glp/imaging.hpp"
#include "glp/manifest.hpp"

namespace glp {

enum class Shape { circle, square };

inline const char* shape_name(Shape s) {
  return s == Shape::circle ? "circle" : "square";
}

inline Shape parse_shape(const std::string& s) {
  if (s == "circle") return Shape::circle;
  if (s == "square") return Shape::square;
  throw ConfigError("unknown shape '" + s + "'");
}

inline constexpr double kInk = 0.0;
inline constexpr double kPaper = 1.0;

struct Point {
  double x = 0.0;
  double y = 0.0;
};

/// Inks the outline of `shape` centered at `c` into a single-channel image.
inline void draw_outline(Image& img, Shape shape, Point c, double half_extent,
                         double line_width) {
  const double lo = half_extent - line_width / 2.0;
  const double hi = half_extent + line_width / 2.0;
  const auto clampi = [](double v, std::size_t n) {
    return static_cast<std::size_t>(
        std::clamp(v, 0.0, static_cast<double>(n)));
  };
  const std::size_t y0 = clampi(std::floor(c.y - hi - 1), img.height());
  const std::size_t y1 = clampi(std::ceil(c.y + hi + 1), img.height());
  const std::size_t x0 = clampi(std::floor(c.x - hi - 1), img.width());
  const std::size_t x1 = clampi(std::ceil(c.x + hi + 1), img.width());
  for (std::size_t y = y0; y < y1; ++y) {
    const double dy = static_cast<double>(y) + 0.5 - c.y;
    for (std::size_t x = x0; x < x1; ++x) {
      const double dx = static_cast<double>(x) + 0.5 - c.x;
      const double d = shape == Shape::circle
                           ? std::hypot(dx, dy)
                           : std::max(std::abs(dx), std::abs(dy));
      if (d >= lo && d < hi) img.at(y, x) = kInk;
    }
  }
}

inline std::size_t ink_count(const Image& img) {
  std::size_t n = 0;
  for (double v : img.data()) n += (v == kInk);
  return n;
}

struct SimpleShapeLayout {
  Image image;
  Point center;
  double half_extent = 0.0;
};

/// Outline of `shape` whose center line spans `scale * image_size` pixels,
/// placed at a seeded integer offset from the canvas center.
inline SimpleShapeLayout render_simple_shape_layout(Shape shape,
                                                    std::size_t image_size,
                                                    double scale,
                                                    int line_width,
                                                    std::uint64_t seed) {
  if (line_width < 1) throw DomainError("line_width must be >= 1");
  if (!(scale > 0.0)) throw DomainError("scale must be positive");
  const double half = static_cast<double>(image_size) / 2.0;
  const double h = scale * half;
  const double margin = half - 1.0 - h - line_width / 2.0;
  if (margin < 0.0) {
    throw DomainError("shape with scale " + std::to_string(scale) +
                      " does not fit a " + std::to_string(image_size) +
                      " px canvas");
  }
  std::mt19937_64 rng(seed);
  const int m = static_cast<int>(std::floor(margin));
  std::uniform_int_distribution<int> jitter(-m, m);
  const Point c{half + jitter(rng), half + jitter(rng)};
  SimpleShapeLayout out{Image(image_size, image_size, 1, kPaper), c, h};
  draw_outline(out.image, shape, c, h, line_width);
  return out;
}

inline Image render_simple_shape(Shape shape, std::size_t image_size,
                                 double scale, int line_width,
                                 std::uint64_t seed) {
  return render_simple_shape_layout(shape, image_size, scale, line_width, seed)
      .image;
}

struct StimulusSpec {
  Shape global_shape = Shape::circle;
  Shape local_shape = Shape::square;
  std::size_t image_size = 64;
  double local_size = 8.0;
  double sparsity = 1.0;  // glyph spacing in multiples of local_size
  int line_width = 1;
  std::uint64_t seed = 0;
  // Fraction of the available room spanned by the global shape; drawn from
  // the seed in [0.4, 0.9] when absent.
  std::optional<double> global_scale;
};

struct CompoundLayout {
  Image image;
  Point center;
  double global_half_extent = 0.0;
  std::vector<Point> placements;
};

inline double contour_perimeter(Shape s, double half_extent) {
  return s == Shape::circle ? 2.0 * std::numbers::pi * half_extent
                            : 8.0 * half_extent;
}

/// Point at arc length `t` along the contour. Circles start at angle 0 and
/// run counter-clockwise in image coordinates; squares start at the top-left
/// corner and run along the top edge.
inline Point contour_point(Shape s, Point c, double h, double t) {
  if (s == Shape::circle) {
    const double theta = t / h;
    return {c.x + h * std::cos(theta), c.y + h * std::sin(theta)};
  }
  const double side = 2.0 * h;
  const int edge = static_cast<int>(std::floor(t / side)) % 4;
  const double u = t - side * std::floor(t / side);
  switch (edge) {
    case 0: return {c.x - h + u, c.y - h};
    case 1: return {c.x + h, c.y - h + u};
    case 2: return {c.x + h - u, c.y + h};
    default: return {c.x - h, c.y + h - u};
  }
}

/// Distance from `p` to the global contour.
inline double contour_distance(Shape s, Point c, double h, Point p) {
  const double dx = p.x - c.x;
  const double dy = p.y - c.y;
  if (s == Shape::circle) return std::abs(std::hypot(dx, dy) - h);
  const double ax = std::abs(dx);
  const double ay = std::abs(dy);
  if (ax <= h && ay <= h) return h - std::max(ax, ay);
  const double ex = std::max(ax - h, 0.0);
  const double ey = std::max(ay - h, 0.0);
  return std::hypot(ex, ey);
}

/// Half-extent of a local glyph. Squares are inscribed in the local_size
/// circle so every glyph stays within local_size/2 + line_width of its
/// placement point.
inline double local_half_extent(Shape s, double local_size) {
  return s == Shape::circle ? local_size / 2.0
                            : local_size / (2.0 * std::numbers::sqrt2);
}

inline void validate(const StimulusSpec& s) {
  if (!(s.local_size > 0.0) ||
      !(s.local_size < static_cast<double>(s.image_size) / 4.0)) {
    throw DomainError("local_size must be in (0, image_size/4)");
  }
  if (s.line_width < 1) throw DomainError("line_width must be >= 1");
  if (!(s.sparsity >= 1.0)) throw DomainError("sparsity must be >= 1");
  if (s.global_scale && !(*s.global_scale > 0.0 && *s.global_scale <= 1.0)) {
    throw DomainError("global_scale must be in (0, 1]");
  }
}

inline CompoundLayout render_compound_layout(const StimulusSpec& spec) {
  validate(spec);
  std::mt19937_64 rng(spec.seed);
  const double scale =
      spec.global_scale ? *spec.global_scale
                        : std::uniform_real_distribution<double>(0.4, 0.9)(rng);
  const double half = static_cast<double>(spec.image_size) / 2.0;
  const double reach = spec.local_size / 2.0 + spec.line_width;
  const double room = half - 1.0 - reach;
  if (room <= 0.0) throw DomainError("local glyphs leave no room on the canvas");
  const double h = scale * room;
  const int m = static_cast<int>(std::floor(room - h));
  std::uniform_int_distribution<int> jitter(-m, m);
  const Point c{half + jitter(rng), half + jitter(rng)};

  const double spacing = spec.sparsity * spec.local_size;
  const auto count = static_cast<std::size_t>(
      std::floor(contour_perimeter(spec.global_shape, h) / spacing));
  if (count < 4) {
    throw DomainError("only " + std::to_string(count) +
                      " local glyphs fit along the global contour (need 4)");
  }
  CompoundLayout out{Image(spec.image_size, spec.image_size, 1, kPaper), c, h, {}};
  const double gh = local_half_extent(spec.local_shape, spec.local_size);
  for (std::size_t k = 0; k < count; ++k) {
    const Point p = contour_point(spec.global_shape, c, h,
                                  spacing * static_cast<double>(k));
    out.placements.push_back(p);
    draw_outline(out.image, spec.local_shape, p, gh, spec.line_width);
  }
  return out;
}

inline Image render_compound_stimulus(const StimulusSpec& spec) {
  return render_compound_layout(spec).image;
}

/// Pixels whose centers lie within `width` of the global contour; with
/// width = local_size/2 + line_width the band holds every glyph.
inline std::vector<bool> contour_band(const CompoundLayout& layout, Shape global_shape,
                                      double width) {
  const Image& img = layout.image;
  std::vector<bool> mask(img.pixel_count());
  for (std::size_t y = 0; y < img.height(); ++y) {
    for (std::size_t x = 0; x < img.width(); ++x) {
      const Point p{static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5};
      mask[y * img.width() + x] =
          contour_distance(global_shape, layout.center, layout.global_half_extent, p) <= width;
    }
  }
  return mask;
}

namespace detail {

inline std::string indexed_name(const std::string& prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "_%05zu.png", i);
  return prefix + buf;
}

inline void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) {
    throw IoError("cannot create directory " + dir.string());
  }
}

}  // namespace detail

inline constexpr const char* kManifestFile = "manifest.csv";

/// count/2 circles and count/2 squares with random scale in [0.4, 0.9],
/// stroke width in {1,2,3} and position jitter. Every fifth instance of a
/// class is tagged "val", the rest "train".
inline DatasetManifest generate_simple_dataset(
    std::size_t count, std::size_t image_size,
    const std::filesystem::path& out_dir, std::uint64_t seed) {
  if (count == 0 || count % 2 != 0) {
    throw DomainError("simple dataset count must be even and positive");
  }
  detail::ensure_dir(out_dir);
  DatasetManifest m{out_dir, {}};
  const double half = static_cast<double>(image_size) / 2.0;
  for (std::size_t i = 0; i < count; ++i) {
    const Shape shape = (i % 2 == 0) ? Shape::circle : Shape::square;
    std::mt19937_64 rng(substream_seed(seed, "simple", i));
    const int lw = std::uniform_int_distribution<int>(1, 3)(rng);
    const double max_scale = std::min(0.9, (half - 1.0 - lw / 2.0) / half);
    const double scale =
        std::uniform_real_distribution<double>(0.4, max_scale)(rng);
    const Image img =
        render_simple_shape(shape, image_size, scale, lw, rng());
    const std::string name = detail::indexed_name("simple", i);
    write_png((out_dir / name).string(), img);
    const bool val = (i / 2) % 5 == 4;
    m.records.push_back(
        {name, shape_name(shape), shape_name(shape), val ? "val" : "train"});
  }
  write_manifest(out_dir / kManifestFile, m);
  return m;
}

/// Navon stimulus parameters for dataset index i. The (global, local) pair
/// cycles through all four combinations and the stroke width through {1,2,3};
/// scale, sparsity and glyph size are drawn at random and redrawn until at
/// least 8 glyphs fit on the contour.
inline StimulusSpec navon_dataset_spec(std::size_t i, std::size_t image_size,
                                       std::uint64_t seed) {
  StimulusSpec s;
  const std::size_t pair = i % 4;
  s.global_shape = (pair / 2 == 0) ? Shape::circle : Shape::square;
  s.local_shape = (pair % 2 == 0) ? Shape::circle : Shape::square;
  s.image_size = image_size;
  s.line_width = 1 + static_cast<int>((i / 4) % 3);
  std::mt19937_64 rng(substream_seed(seed, "navon", i));
  const double size = static_cast<double>(image_size);
  const double lo = std::max(3.0, std::floor(size / 10.0));
  const double hi = std::max(lo, std::min(std::floor(size / 5.0),
                                          std::ceil(size / 4.0) - 1.0));
  for (int attempt = 0; attempt < 256; ++attempt) {
    s.local_size = static_cast<double>(std::uniform_int_distribution<int>(
        static_cast<int>(lo), static_cast<int>(hi))(rng));
    s.sparsity = std::uniform_real_distribution<double>(1.0, 2.0)(rng);
    s.global_scale = std::uniform_real_distribution<double>(0.4, 0.9)(rng);
    s.seed = rng();
    const double room = size / 2.0 - 1.0 - s.local_size / 2.0 - s.line_width;
    const double h = *s.global_scale * room;
    if (room > 0.0 &&
        contour_perimeter(s.global_shape, h) / (s.sparsity * s.local_size) >= 8.0) {
      return s;
    }
  }
  throw DomainError("canvas of " + std::to_string(image_size) +
                    " px is too small for Navon stimuli");
}

inline DatasetManifest generate_navon_dataset(
    std::size_t count, std::size_t image_size,
    const std::filesystem::path& out_dir, std::uint64_t seed) {
  if (count < 4) throw DomainError("Navon dataset count must be >= 4");
  detail::ensure_dir(out_dir);
  DatasetManifest m{out_dir, {}};
  for (std::size_t i = 0; i < count; ++i) {
    const StimulusSpec s = navon_dataset_spec(i, image_size, seed);
    const std::string name = detail::indexed_name("navon", i);
    write_png((out_dir / name).string(), render_compound_stimulus(s));
    m.records.push_back({name, shape_name(s.global_shape),
                         shape_name(s.local_shape), "test"});
  }
  write_manifest(out_dir / kManifestFile, m);
  return m;
}

}  // namespace glp
