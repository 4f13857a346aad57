#include "modgate/imageops.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "modgate/error.hpp"

namespace modgate {
namespace {

struct Affine2 {
  double a, b, c, d;  // [[a, b], [c, d]]

  Affine2 operator*(const Affine2& o) const {
    return {a * o.a + b * o.c, a * o.b + b * o.d, c * o.a + d * o.c, c * o.b + d * o.d};
  }
  Affine2 inverse() const {
    const double det = a * d - b * c;
    return {d / det, -b / det, -c / det, a / det};
  }
};

Affine2 forward_map(const WarpParams& p) {
  const double theta = p.rotation_deg * std::numbers::pi / 180.0;
  const double cs = std::cos(theta);
  const double sn = std::sin(theta);
  const Affine2 rot{cs, -sn, sn, cs};
  const Affine2 shear{1.0, p.shear, 0.0, 1.0};
  const Affine2 scale{p.scale, 0.0, 0.0, p.scale};
  const Affine2 flip{p.flip_h ? -1.0 : 1.0, 0.0, 0.0, 1.0};
  return rot * shear * scale * flip;
}

int extent_to_pixels(double extent) {
  // Tolerance absorbs floating error so exact products (20 * 0.5) stay exact.
  return std::max(1, static_cast<int>(std::ceil(extent - 1e-9)));
}

struct Premul {
  double r = 0, g = 0, b = 0, a = 0;
};

Premul premul_at(const Raster& src, int x, int y) {
  if (!src.contains(x, y)) return {};
  const Rgba c = src.at(x, y);
  const double a = c.a / 255.0;
  return {c.r * a, c.g * a, c.b * a, static_cast<double>(c.a)};
}

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

}  // namespace

CanvasSize warped_canvas_size(int width, int height, const WarpParams& params) {
  const Affine2 m = forward_map(params);
  const double hw = width / 2.0;
  const double hh = height / 2.0;
  double max_x = 0.0;
  double max_y = 0.0;
  for (const auto& [sx, sy] : std::array<std::pair<double, double>, 4>{
           {{-hw, -hh}, {hw, -hh}, {hw, hh}, {-hw, hh}}}) {
    max_x = std::max(max_x, std::abs(m.a * sx + m.b * sy));
    max_y = std::max(max_y, std::abs(m.c * sx + m.d * sy));
  }
  return {extent_to_pixels(2.0 * max_x), extent_to_pixels(2.0 * max_y)};
}

Raster warp(const Raster& source, const WarpParams& params, Resampling resampling) {
  if (params.scale <= 0.0) {
    throw Error(ErrorKind::InvalidConfig, "warp scale must be positive");
  }
  const CanvasSize size = warped_canvas_size(source.width(), source.height(), params);
  const Affine2 inv = forward_map(params).inverse();
  Raster out(size.width, size.height, Rgba{0, 0, 0, 0});
  const double src_cx = source.width() / 2.0;
  const double src_cy = source.height() / 2.0;
  const double dst_cx = size.width / 2.0;
  const double dst_cy = size.height / 2.0;

  for (int oy = 0; oy < size.height; ++oy) {
    for (int ox = 0; ox < size.width; ++ox) {
      const double qx = ox + 0.5 - dst_cx;
      const double qy = oy + 0.5 - dst_cy;
      const double u = inv.a * qx + inv.b * qy + src_cx;
      const double v = inv.c * qx + inv.d * qy + src_cy;
      if (resampling == Resampling::Nearest) {
        const int sx = static_cast<int>(std::floor(u));
        const int sy = static_cast<int>(std::floor(v));
        if (source.contains(sx, sy)) out.set(ox, oy, source.at(sx, sy));
        continue;
      }
      const double fx = u - 0.5;
      const double fy = v - 0.5;
      const int x0 = static_cast<int>(std::floor(fx));
      const int y0 = static_cast<int>(std::floor(fy));
      const double tx = fx - x0;
      const double ty = fy - y0;
      const Premul p00 = premul_at(source, x0, y0);
      const Premul p10 = premul_at(source, x0 + 1, y0);
      const Premul p01 = premul_at(source, x0, y0 + 1);
      const Premul p11 = premul_at(source, x0 + 1, y0 + 1);
      const double w00 = (1 - tx) * (1 - ty);
      const double w10 = tx * (1 - ty);
      const double w01 = (1 - tx) * ty;
      const double w11 = tx * ty;
      const double a = w00 * p00.a + w10 * p10.a + w01 * p01.a + w11 * p11.a;
      if (a <= 0.0) continue;
      const double norm = 255.0 / a;
      const double r = (w00 * p00.r + w10 * p10.r + w01 * p01.r + w11 * p11.r) * norm;
      const double g = (w00 * p00.g + w10 * p10.g + w01 * p01.g + w11 * p11.g) * norm;
      const double b = (w00 * p00.b + w10 * p10.b + w01 * p01.b + w11 * p11.b) * norm;
      out.set(ox, oy, Rgba{to_byte(r), to_byte(g), to_byte(b), to_byte(a)});
    }
  }
  return out;
}

std::optional<BoundingBox> alpha_footprint(const Raster& raster, std::uint8_t threshold) {
  std::optional<BoundingBox> box;
  for (int y = 0; y < raster.height(); ++y) {
    for (int x = 0; x < raster.width(); ++x) {
      if (raster.at(x, y).a > threshold) extend_box(box, x, y);
    }
  }
  return box;
}

std::uint8_t alpha_over(std::uint8_t base, std::uint8_t over, std::uint8_t alpha) noexcept {
  const int a = alpha;
  return static_cast<std::uint8_t>((a * over + (255 - a) * base + 127) / 255);
}

void composite_onto(Raster& base, const Raster& layer, int x, int y) {
  if (x < 0 || y < 0 || x + layer.width() > base.width() || y + layer.height() > base.height()) {
    throw Error(ErrorKind::OutOfBounds, "layer footprint exceeds base bounds");
  }
  for (int ly = 0; ly < layer.height(); ++ly) {
    for (int lx = 0; lx < layer.width(); ++lx) {
      const Rgba top = layer.at(lx, ly);
      if (top.a == 0) continue;
      const Rgba under = base.at(x + lx, y + ly);
      const std::uint8_t out_a =
          static_cast<std::uint8_t>(top.a + (under.a * (255 - top.a) + 127) / 255);
      base.set(x + lx, y + ly,
               Rgba{alpha_over(under.r, top.r, top.a), alpha_over(under.g, top.g, top.a),
                    alpha_over(under.b, top.b, top.a), out_a});
    }
  }
}

}  // namespace modgate
