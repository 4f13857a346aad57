#pragma once

#include <cstdint>
#include <optional>
#include <string>

namespace modgate {

/// Pixel box, half-open on the max edges: covers x in [x_min, x_max).
struct BoundingBox {
  int x_min = 0;
  int y_min = 0;
  int x_max = 0;
  int y_max = 0;
  std::string class_label;

  int width() const noexcept { return x_max - x_min; }
  int height() const noexcept { return y_max - y_min; }
  std::int64_t area() const noexcept {
    return static_cast<std::int64_t>(width()) * static_cast<std::int64_t>(height());
  }
  bool same_extent(const BoundingBox& o) const noexcept {
    return x_min == o.x_min && y_min == o.y_min && x_max == o.x_max && y_max == o.y_max;
  }
  bool valid_within(int image_width, int image_height) const noexcept {
    return 0 <= x_min && x_min < x_max && x_max <= image_width && 0 <= y_min &&
           y_min < y_max && y_max <= image_height;
  }

  bool operator==(const BoundingBox&) const = default;
};

double iou(const BoundingBox& a, const BoundingBox& b) noexcept;

/// Grows `box` (or starts it) to include pixel (x, y).
void extend_box(std::optional<BoundingBox>& box, int x, int y);

}  // namespace modgate
