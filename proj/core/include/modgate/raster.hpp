#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace modgate {

struct Rgba {
  std::uint8_t r = 0;
  std::uint8_t g = 0;
  std::uint8_t b = 0;
  std::uint8_t a = 255;

  bool operator==(const Rgba&) const = default;
};

/// Row-major 8-bit RGBA raster. Width and height are both >= 1 for any
/// raster that holds pixels; a default-constructed raster is empty.
class Raster {
 public:
  Raster() = default;
  Raster(int width, int height, Rgba fill = {});

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  bool empty() const noexcept { return width_ == 0 || height_ == 0; }
  std::size_t pixel_count() const noexcept {
    return static_cast<std::size_t>(width_) * static_cast<std::size_t>(height_);
  }

  Rgba at(int x, int y) const noexcept {
    const std::uint8_t* p = data_.data() + offset(x, y);
    return {p[0], p[1], p[2], p[3]};
  }
  void set(int x, int y, Rgba c) noexcept {
    std::uint8_t* p = data_.data() + offset(x, y);
    p[0] = c.r;
    p[1] = c.g;
    p[2] = c.b;
    p[3] = c.a;
  }
  bool contains(int x, int y) const noexcept {
    return x >= 0 && y >= 0 && x < width_ && y < height_;
  }

  std::span<const std::uint8_t> bytes() const noexcept { return data_; }
  std::span<std::uint8_t> bytes() noexcept { return data_; }

  /// Copies the sub-raster [x, x+w) x [y, y+h); the window must lie inside.
  Raster crop(int x, int y, int w, int h) const;

  /// Takes ownership of an interleaved RGBA buffer of width*height*4 bytes.
  static Raster from_bytes(int width, int height, std::vector<std::uint8_t> rgba);

  bool operator==(const Raster&) const = default;

 private:
  std::size_t offset(int x, int y) const noexcept {
    return (static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) +
            static_cast<std::size_t>(x)) *
           4;
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> data_;
};

/// ITU-R BT.601 luma in [0, 255].
inline double luma(Rgba c) noexcept { return 0.299 * c.r + 0.587 * c.g + 0.114 * c.b; }

/// Single-channel float image used by correlation code.
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<double> values;

  double at(int x, int y) const noexcept {
    return values[static_cast<std::size_t>(y) * static_cast<std::size_t>(width) +
                  static_cast<std::size_t>(x)];
  }
};

GrayImage to_gray(const Raster& image);

}  // namespace modgate
