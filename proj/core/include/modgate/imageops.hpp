#pragma once

#include <cstdint>
#include <optional>

#include "modgate/geometry.hpp"
#include "modgate/raster.hpp"

namespace modgate {

enum class Resampling { Bilinear, Nearest };

/// Geometric part of a logo transform. The forward map about the raster
/// center is rotate * shear * scale * flip.
struct WarpParams {
  double scale = 1.0;
  double rotation_deg = 0.0;
  double shear = 0.0;
  bool flip_h = false;
};

struct CanvasSize {
  int width = 0;
  int height = 0;
};

/// Size of the smallest canvas holding the warped raster; pure scaling of a
/// w x h raster gives ceil(w*s) x ceil(h*s), never less than 1 x 1.
CanvasSize warped_canvas_size(int width, int height, const WarpParams& params);

/// Inverse-maps every canvas pixel center into the source. Samples outside
/// the source are fully transparent. Bilinear interpolation works on
/// premultiplied color.
Raster warp(const Raster& source, const WarpParams& params, Resampling resampling);

/// Footprint threshold for annotation boxes: pixels with alpha > 8 count.
inline constexpr std::uint8_t kFootprintAlpha = 8;

/// Bounding box of pixels whose alpha exceeds `threshold`.
std::optional<BoundingBox> alpha_footprint(const Raster& raster,
                                           std::uint8_t threshold = kFootprintAlpha);

/// out = alpha*over + (1-alpha)*base with alpha in [0,1], rounded to nearest.
inline double alpha_over(double base, double over, double alpha) noexcept {
  return alpha * over + (1.0 - alpha) * base;
}
std::uint8_t alpha_over(std::uint8_t base, std::uint8_t over, std::uint8_t alpha) noexcept;

/// Alpha-composites `layer` onto `base` with its top-left at (x, y). The
/// layer must lie entirely inside the base.
void composite_onto(Raster& base, const Raster& layer, int x, int y);

}  // namespace modgate
