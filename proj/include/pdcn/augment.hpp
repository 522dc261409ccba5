#pragma once

#include <cmath>
#include <numbers>
#include <random>

#include "pdcn/image.hpp"
#include "pdcn/rng.hpp"

namespace pdcn {

/// Sampling ranges for the augmentation families. Each range is symmetric
/// around the identity: rotation in [-rotation_deg, rotation_deg], and so on;
/// zoom draws from [1 - zoom, 1 + zoom].
struct AugmentRanges {
  double flip_prob = 0.5;
  double rotation_deg = 15.0;
  double shift_frac = 0.10;
  double shear_deg = 10.0;
  double zoom = 0.10;
};

struct AugmentParams {
  bool flip = false;
  double rotation_deg = 0.0;
  double shift_x = 0.0;  // fraction of width
  double shift_y = 0.0;  // fraction of height
  double shear_deg = 0.0;
  double zoom = 1.0;

  friend bool operator==(const AugmentParams&, const AugmentParams&) = default;
};

inline bool within(const AugmentParams& p, const AugmentRanges& r) {
  return std::abs(p.rotation_deg) <= r.rotation_deg && std::abs(p.shift_x) <= r.shift_frac &&
         std::abs(p.shift_y) <= r.shift_frac && std::abs(p.shear_deg) <= r.shear_deg &&
         p.zoom >= 1.0 - r.zoom && p.zoom <= 1.0 + r.zoom && p.zoom > 0.0;
}

/// Draws one parameter set; the draw order is fixed (flip, rotation, shift x,
/// shift y, shear, zoom).
inline AugmentParams sample_augment(const AugmentRanges& r, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto sym = [&](double half) { return (2.0 * unit(rng) - 1.0) * half; };
  AugmentParams p;
  p.flip = unit(rng) < r.flip_prob;
  p.rotation_deg = sym(r.rotation_deg);
  p.shift_x = sym(r.shift_frac);
  p.shift_y = sym(r.shift_frac);
  p.shear_deg = sym(r.shear_deg);
  p.zoom = 1.0 + sym(r.zoom);
  return p;
}

/// Composed affine warp about the image centre: output = shift(zoom(shear(
/// rotate(flip(input))))). Pixels are pulled through the inverse map with
/// bilinear sampling and nearest-edge fill.
inline Image augment(const Image& img, const AugmentParams& p) {
  if (img.rank() != 3) throw ShapeError("augment expects an (H, W, C) image");
  const std::size_t h = img.dim(0), w = img.dim(1), c = img.dim(2);
  const double cy = (static_cast<double>(h) - 1.0) / 2.0;
  const double cx = (static_cast<double>(w) - 1.0) / 2.0;
  const double th = p.rotation_deg * std::numbers::pi / 180.0;
  const double sh = std::tan(p.shear_deg * std::numbers::pi / 180.0);
  const double f = p.flip ? -1.0 : 1.0;
  const double cs = std::cos(th), sn = std::sin(th);
  // A = Z * Sh * R * F acting on (x, y) column vectors.
  // R * F = [[cs*f, -sn], [sn*f, cs]]; Sh = [[1, sh], [0, 1]]; Z = zoom * I.
  const double a00 = p.zoom * (cs * f + sh * sn * f);
  const double a01 = p.zoom * (-sn + sh * cs);
  const double a10 = p.zoom * (sn * f);
  const double a11 = p.zoom * cs;
  const double det = a00 * a11 - a01 * a10;
  if (std::abs(det) < 1e-12) throw ShapeError("degenerate augmentation transform");
  const double i00 = a11 / det, i01 = -a01 / det, i10 = -a10 / det, i11 = a00 / det;
  const double tx = p.shift_x * static_cast<double>(w);
  const double ty = p.shift_y * static_cast<double>(h);

  Image out(img.shape());
  for (std::size_t oy = 0; oy < h; ++oy) {
    for (std::size_t ox = 0; ox < w; ++ox) {
      const double dx = static_cast<double>(ox) - cx - tx;
      const double dy = static_cast<double>(oy) - cy - ty;
      const double sx = i00 * dx + i01 * dy + cx;
      const double sy = i10 * dx + i11 * dy + cy;
      sample_bilinear(img, sy, sx, out.raw() + (oy * w + ox) * c);
    }
  }
  return out;
}

}  // namespace pdcn
