#pragma once

// Raster images, PNG I/O, luminance conversion, intensity histograms and
// Shannon entropy.

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <csetjmp>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "glp/common.hpp"

namespace glp {

/// H x W x C raster, row-major with interleaved channels, intensities in [0,1].
class Image {
 public:
  Image() = default;

  Image(std::size_t height, std::size_t width, std::size_t channels = 1,
        double fill = 0.0)
      : height_(height), width_(width), channels_(channels),
        data_(height * width * channels, fill) {
    if (channels != 1 && channels != 3) {
      throw ShapeError("image channels must be 1 or 3, got " +
                       std::to_string(channels));
    }
  }

  Image(std::size_t height, std::size_t width, std::size_t channels,
        std::vector<double> data)
      : Image(height, width, channels) {
    if (data.size() != data_.size()) {
      throw ShapeError("image data length " + std::to_string(data.size()) +
                       " does not match " + std::to_string(data_.size()));
    }
    data_ = std::move(data);
  }

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t channels() const { return channels_; }
  std::size_t pixel_count() const { return height_ * width_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& at(std::size_t y, std::size_t x, std::size_t c = 0) {
    return data_[(y * width_ + x) * channels_ + c];
  }
  double at(std::size_t y, std::size_t x, std::size_t c = 0) const {
    return data_[(y * width_ + x) * channels_ + c];
  }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  /// Extracts one channel as a single-channel image.
  Image channel(std::size_t c) const {
    Image out(height_, width_, 1);
    for (std::size_t i = 0; i < pixel_count(); ++i) {
      out.data_[i] = data_[i * channels_ + c];
    }
    return out;
  }

  void set_channel(std::size_t c, const Image& plane) {
    if (plane.height_ != height_ || plane.width_ != width_ ||
        plane.channels_ != 1) {
      throw ShapeError("set_channel: plane shape mismatch");
    }
    for (std::size_t i = 0; i < pixel_count(); ++i) {
      data_[i * channels_ + c] = plane.data_[i];
    }
  }

  void clamp01() {
    for (double& v : data_) v = std::clamp(v, 0.0, 1.0);
  }

  bool in_unit_range() const {
    return std::all_of(data_.begin(), data_.end(),
                       [](double v) { return v >= 0.0 && v <= 1.0; });
  }

  bool same_shape(const Image& o) const {
    return height_ == o.height_ && width_ == o.width_ &&
           channels_ == o.channels_;
  }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::size_t channels_ = 1;
  std::vector<double> data_;
};

struct Histogram256 {
  std::array<std::uint64_t, 256> counts{};
  std::uint64_t total = 0;
};

inline std::uint8_t quantize8(double v) {
  const double q = std::floor(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5);
  return static_cast<std::uint8_t>(q);
}

namespace detail {

struct PngReadCursor {
  std::span<const std::uint8_t> bytes;
  std::size_t pos = 0;
};

inline void png_read_from_span(png_structp png, png_bytep out,
                               png_size_t length) {
  auto* cur = static_cast<PngReadCursor*>(png_get_io_ptr(png));
  if (cur->pos + length > cur->bytes.size()) {
    png_error(png, "unexpected end of PNG stream");
  }
  std::copy_n(cur->bytes.data() + cur->pos, length, out);
  cur->pos += length;
}

inline void png_write_to_vector(png_structp png, png_bytep data,
                                png_size_t length) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + length);
}

inline void png_flush_noop(png_structp) {}

inline void png_warning_silent(png_structp, png_const_charp) {}

}  // namespace detail

/// Decodes an 8-bit grayscale or RGB PNG (alpha is dropped) into [0,1]
/// intensities v/255.
inline Image decode_png(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) {
    throw DecodeError("not a PNG stream");
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr,
                                           nullptr, detail::png_warning_silent);
  if (png == nullptr) throw DecodeError("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (info == nullptr) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw DecodeError("png_create_info_struct failed");
  }

  detail::PngReadCursor cursor{bytes, 0};
  std::vector<std::uint8_t> pixels;
  std::vector<png_bytep> rows;
  bool unsupported = false;
  std::string why;

  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DecodeError("malformed PNG stream");
  }
  png_set_read_fn(png, &cursor, detail::png_read_from_span);
  png_read_info(png, info);

  const png_uint_32 width = png_get_image_width(png, info);
  const png_uint_32 height = png_get_image_height(png, info);
  const int depth = png_get_bit_depth(png, info);
  const int color = png_get_color_type(png, info);

  std::size_t src_channels = 0;
  std::size_t out_channels = 0;
  if (depth != 8) {
    unsupported = true;
    why = "unsupported PNG bit depth " + std::to_string(depth);
  } else if (color == PNG_COLOR_TYPE_GRAY) {
    src_channels = 1, out_channels = 1;
  } else if (color == PNG_COLOR_TYPE_GRAY_ALPHA) {
    src_channels = 2, out_channels = 1;
  } else if (color == PNG_COLOR_TYPE_RGB) {
    src_channels = 3, out_channels = 3;
  } else if (color == PNG_COLOR_TYPE_RGB_ALPHA) {
    src_channels = 4, out_channels = 3;
  } else {
    unsupported = true;
    why = "unsupported PNG color type " + std::to_string(color);
  }
  if (unsupported) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw UnsupportedFormatError(why);
  }
  if (png_get_interlace_type(png, info) != PNG_INTERLACE_NONE) {
    png_set_interlace_handling(png);
  }
  png_read_update_info(png, info);

  const std::size_t stride = png_get_rowbytes(png, info);
  pixels.resize(stride * height);
  rows.resize(height);
  for (png_uint_32 y = 0; y < height; ++y) rows[y] = pixels.data() + y * stride;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  Image img(height, width, out_channels);
  auto out = img.data();
  for (std::size_t y = 0; y < height; ++y) {
    const std::uint8_t* row = pixels.data() + y * stride;
    for (std::size_t x = 0; x < width; ++x) {
      for (std::size_t c = 0; c < out_channels; ++c) {
        out[(y * width + x) * out_channels + c] =
            row[x * src_channels + c] / 255.0;
      }
    }
  }
  return img;
}

/// Encodes as an 8-bit PNG (gray or RGB) using round-half-up quantization.
inline std::vector<std::uint8_t> encode_png(const Image& img) {
  if (img.empty()) throw ShapeError("cannot encode an empty image");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr,
                                            nullptr, detail::png_warning_silent);
  if (png == nullptr) throw IoError("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (info == nullptr) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("png_create_info_struct failed");
  }

  std::vector<std::uint8_t> out;
  std::vector<std::uint8_t> pixels(img.size());
  std::vector<png_bytep> rows(img.height());
  const std::size_t stride = img.width() * img.channels();
  auto src = img.data();
  for (std::size_t i = 0; i < pixels.size(); ++i) pixels[i] = quantize8(src[i]);
  for (std::size_t y = 0; y < img.height(); ++y) {
    rows[y] = pixels.data() + y * stride;
  }

  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("PNG encoding failed");
  }
  png_set_write_fn(png, &out, detail::png_write_to_vector,
                   detail::png_flush_noop);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width()),
               static_cast<png_uint_32>(img.height()), 8,
               img.channels() == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

inline std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::string& path,
                             std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path);
}

inline Image read_png(const std::string& path) {
  return decode_png(read_file_bytes(path));
}

inline void write_png(const std::string& path, const Image& img) {
  write_file_bytes(path, encode_png(img));
}

/// BT.601 luminance. Single-channel input is returned unchanged.
inline Image to_grayscale(const Image& img) {
  if (img.channels() == 1) return img;
  Image out(img.height(), img.width(), 1);
  auto src = img.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < img.pixel_count(); ++i) {
    dst[i] = 0.299 * src[3 * i] + 0.587 * src[3 * i + 1] +
             0.114 * src[3 * i + 2];
  }
  return out;
}

inline std::size_t histogram_bin(double v) {
  const double scaled = std::floor(std::clamp(v, 0.0, 1.0) * 256.0);
  return std::min<std::size_t>(static_cast<std::size_t>(scaled), 255);
}

inline Histogram256 histogram256(std::span<const double> values) {
  Histogram256 h;
  for (double v : values) ++h.counts[histogram_bin(v)];
  h.total = values.size();
  return h;
}

inline Histogram256 histogram256(const Image& img) {
  if (img.channels() != 1) {
    throw ShapeError("histogram256 expects a single-channel image");
  }
  return histogram256(img.data());
}

/// Shannon entropy in bits of a 256-bin histogram.
inline double shannon_entropy(const Histogram256& h) {
  if (h.total == 0) return 0.0;
  const double n = static_cast<double>(h.total);
  double bits = 0.0;
  for (std::uint64_t c : h.counts) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / n;
    bits -= p * std::log2(p);
  }
  return std::max(bits, 0.0);
}

/// Entropy of the luminance intensity distribution (3-channel input is
/// converted to grayscale first).
inline double shannon_entropy(const Image& img) {
  if (img.channels() == 1) return shannon_entropy(histogram256(img));
  return shannon_entropy(histogram256(to_grayscale(img)));
}

}  // namespace glp
