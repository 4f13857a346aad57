#include "modgate/raster.hpp"

#include <algorithm>
#include <string>

#include "modgate/error.hpp"

namespace modgate {

Raster::Raster(int width, int height, Rgba fill) : width_(width), height_(height) {
  if (width < 0 || height < 0) {
    throw Error(ErrorKind::InvalidSpec, "negative raster dimensions");
  }
  data_.resize(pixel_count() * 4);
  for (std::size_t i = 0; i < data_.size(); i += 4) {
    data_[i] = fill.r;
    data_[i + 1] = fill.g;
    data_[i + 2] = fill.b;
    data_[i + 3] = fill.a;
  }
}

Raster Raster::crop(int x, int y, int w, int h) const {
  if (x < 0 || y < 0 || w < 0 || h < 0 || x + w > width_ || y + h > height_) {
    throw Error(ErrorKind::OutOfBounds, "crop window outside raster");
  }
  Raster out(w, h);
  for (int row = 0; row < h; ++row) {
    const auto* src = data_.data() + offset(x, y + row);
    std::copy(src, src + static_cast<std::ptrdiff_t>(w) * 4,
              out.data_.data() + out.offset(0, row));
  }
  return out;
}

Raster Raster::from_bytes(int width, int height, std::vector<std::uint8_t> rgba) {
  if (width < 0 || height < 0 ||
      rgba.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height) * 4) {
    throw Error(ErrorKind::DecodeError,
                "buffer of " + std::to_string(rgba.size()) + " bytes does not match " +
                    std::to_string(width) + "x" + std::to_string(height) + " RGBA");
  }
  Raster out;
  out.width_ = width;
  out.height_ = height;
  out.data_ = std::move(rgba);
  return out;
}

GrayImage to_gray(const Raster& image) {
  GrayImage g{image.width(), image.height(), {}};
  g.values.reserve(image.pixel_count());
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x) {
      g.values.push_back(luma(image.at(x, y)));
    }
  }
  return g;
}

}  // namespace modgate
