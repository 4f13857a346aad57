#include "modgate/geometry.hpp"

#include <algorithm>

namespace modgate {

double iou(const BoundingBox& a, const BoundingBox& b) noexcept {
  const int ix = std::max(0, std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min));
  const int iy = std::max(0, std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min));
  const double inter = static_cast<double>(ix) * static_cast<double>(iy);
  const double uni = static_cast<double>(a.area()) + static_cast<double>(b.area()) - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

void extend_box(std::optional<BoundingBox>& box, int x, int y) {
  if (!box) {
    box = BoundingBox{x, y, x + 1, y + 1, {}};
    return;
  }
  box->x_min = std::min(box->x_min, x);
  box->y_min = std::min(box->y_min, y);
  box->x_max = std::max(box->x_max, x + 1);
  box->y_max = std::max(box->y_max, y + 1);
}

}  // namespace modgate
