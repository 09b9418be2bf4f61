// Copyright 2026 The handteleop Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Core>

#include "handteleop/errors.hpp"
#include "handteleop/image.hpp"
#include "handteleop/pose.hpp"

namespace handteleop::tactile {

// Sensor frame: the undeformed gel is the plane z = 0 centered on the origin,
// +z points from the gel toward the camera. Objects press in from -z, so a
// positive height means the surface moved toward the camera.

struct GelSpec {
  double width = 0.020;   // meters, along x
  double height = 0.015;  // meters, along y
  std::size_t res_x = 640;
  std::size_t res_y = 480;

  double pitch_x() const { return width / static_cast<double>(res_x); }
  double pitch_y() const { return height / static_cast<double>(res_y); }

  // Center of pixel (row, col) on the undeformed plane.
  double x_at(std::size_t col) const { return (static_cast<double>(col) + 0.5) * pitch_x() - 0.5 * width; }
  double y_at(std::size_t row) const { return (static_cast<double>(row) + 0.5) * pitch_y() - 0.5 * height; }

  void validate() const {
    if (res_x < 2 || res_y < 2) throw ValidationError("gel resolution must be at least 2x2");
    if (!(width > 0.0) || !(height > 0.0) || !std::isfinite(width) || !std::isfinite(height))
      throw ValidationError("gel dimensions must be positive");
  }
};

struct Sphere {
  double radius;
};
struct Box {
  double wx, wy, wz;  // full edge lengths
};
struct Cylinder {
  double radius, height;  // axis along the primitive's local z
};
using Shape = std::variant<Sphere, Box, Cylinder>;

/// An indenter. Only x, y of the pose position matter: the primitive is
/// lowered along +z until its topmost point sits `press_depth` beyond the gel
/// plane. The orientation is applied about the primitive's center.
struct Primitive {
  Shape shape;
  Pose pose;
  double press_depth = 0.0;
};

struct ContactScene {
  GelSpec gel;
  std::vector<Primitive> primitives;

  void validate() const {
    gel.validate();
    for (const auto& p : primitives) {
      if (!(p.press_depth >= 0.0) || !std::isfinite(p.press_depth))
        throw ValidationError("press_depth must be finite and >= 0");
      if (!p.pose.is_finite()) throw ValidationError("primitive pose is not finite");
      const bool ok = std::visit(
          [](const auto& s) {
            using S = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<S, Sphere>) return s.radius > 0.0;
            else if constexpr (std::is_same_v<S, Box>) return s.wx > 0.0 && s.wy > 0.0 && s.wz > 0.0;
            else return s.radius > 0.0 && s.height > 0.0;
          },
          p.shape);
      if (!ok) throw ValidationError("primitive dimensions must be positive");
    }
  }
};

using HeightMap = Grid<double>;
using NormalMap = Grid<Vec3>;
using ViewMap = Grid<Vec3>;
using TactileImage = Image8;

namespace detail {

struct Interval {
  double lo = -INFINITY, hi = INFINITY;
  bool empty() const { return !(lo <= hi); }
};

// Restricts `iv` to { z : |o + z d| <= e } for one slab axis.
inline void clip_slab(Interval& iv, double o, double d, double e) {
  if (d == 0.0) {
    if (std::abs(o) > e) iv = {1.0, -1.0};
    return;
  }
  double a = (-e - o) / d, b = (e - o) / d;
  if (a > b) std::swap(a, b);
  iv.lo = std::max(iv.lo, a);
  iv.hi = std::min(iv.hi, b);
}

// Highest z, relative to the primitive center, of the solid along the vertical
// line through lateral offset (dx, dy) from the center. nullopt if missed.
inline std::optional<double> column_top(const Shape& shape, const Quat& orientation, double dx, double dy) {
  const Vec3 o = orientation.conjugate() * Vec3(dx, dy, 0.0);
  const Vec3 d = orientation.conjugate() * Vec3::UnitZ();
  return std::visit(
      [&](const auto& s) -> std::optional<double> {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, Sphere>) {
          const double rho2 = dx * dx + dy * dy;
          if (rho2 > s.radius * s.radius) return std::nullopt;
          return std::sqrt(s.radius * s.radius - rho2);
        } else if constexpr (std::is_same_v<S, Box>) {
          Interval iv;
          clip_slab(iv, o.x(), d.x(), 0.5 * s.wx);
          clip_slab(iv, o.y(), d.y(), 0.5 * s.wy);
          clip_slab(iv, o.z(), d.z(), 0.5 * s.wz);
          if (iv.empty()) return std::nullopt;
          return iv.hi;
        } else {
          Interval iv;
          clip_slab(iv, o.z(), d.z(), 0.5 * s.height);
          // Radial: (ox + z dx)^2 + (oy + z dy)^2 <= r^2.
          const double a = d.x() * d.x() + d.y() * d.y();
          const double b = 2.0 * (o.x() * d.x() + o.y() * d.y());
          const double c = o.x() * o.x() + o.y() * o.y() - s.radius * s.radius;
          if (a < 1e-15) {
            if (c > 0.0) return std::nullopt;
          } else {
            const double disc = b * b - 4.0 * a * c;
            if (disc < 0.0) return std::nullopt;
            const double root = std::sqrt(disc);
            iv.lo = std::max(iv.lo, (-b - root) / (2.0 * a));
            iv.hi = std::min(iv.hi, (-b + root) / (2.0 * a));
          }
          if (iv.empty()) return std::nullopt;
          return iv.hi;
        }
      },
      shape);
}

// Highest z of the whole solid relative to its center.
inline double top_extent(const Shape& shape, const Quat& orientation) {
  const Eigen::Matrix3d r = orientation.toRotationMatrix();
  return std::visit(
      [&](const auto& s) -> double {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, Sphere>) {
          return s.radius;
        } else if constexpr (std::is_same_v<S, Box>) {
          return 0.5 * (s.wx * std::abs(r(2, 0)) + s.wy * std::abs(r(2, 1)) + s.wz * std::abs(r(2, 2)));
        } else {
          const double az = std::abs(r(2, 2));
          return 0.5 * s.height * az + s.radius * std::sqrt(std::max(0.0, 1.0 - az * az));
        }
      },
      shape);
}

}  // namespace detail

/// Penetration depth per pixel: the max over primitives of how far each
/// solid reaches past the gel plane, floored at zero.
inline HeightMap render_heightmap(const ContactScene& scene) {
  scene.validate();
  const auto& gel = scene.gel;
  HeightMap hm(gel.res_x, gel.res_y, 0.0);
  for (const auto& prim : scene.primitives) {
    const double top = detail::top_extent(prim.shape, prim.pose.orientation);
    const double cx = prim.pose.position.x(), cy = prim.pose.position.y();
    for (std::size_t r = 0; r < gel.res_y; ++r) {
      const double dy = gel.y_at(r) - cy;
      for (std::size_t c = 0; c < gel.res_x; ++c) {
        const auto z = detail::column_top(prim.shape, prim.pose.orientation, gel.x_at(c) - cx, dy);
        if (!z) continue;
        const double depth = *z - top + prim.press_depth;
        if (depth > hm(r, c)) hm(r, c) = depth;
      }
    }
  }
  return hm;
}

// Normalized 1-D Gaussian taps for offsets 0..radius, radius = ceil(3 sigma).
inline std::vector<double> gaussian_taps(double sigma) {
  const auto radius = static_cast<std::size_t>(std::ceil(3.0 * sigma));
  std::vector<double> taps(radius + 1);
  double total = 0.0;
  for (std::size_t k = 0; k <= radius; ++k) {
    taps[k] = std::exp(-0.5 * static_cast<double>(k * k) / (sigma * sigma));
    total += k == 0 ? taps[k] : 2.0 * taps[k];
  }
  for (auto& t : taps) t /= total;
  return taps;
}

/// Separable Gaussian blur standing in for gel compliance. Replicate padding;
/// sigma == 0 returns the input unchanged.
inline HeightMap elastomer_filter(const HeightMap& hm, double sigma) {
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw ValidationError("sigma must be finite and >= 0");
  if (sigma == 0.0 || hm.empty()) return hm;
  const auto taps = gaussian_taps(sigma);
  const auto radius = static_cast<std::ptrdiff_t>(taps.size() - 1);
  const auto w = static_cast<std::ptrdiff_t>(hm.width()), h = static_cast<std::ptrdiff_t>(hm.height());
  auto clampi = [](std::ptrdiff_t v, std::ptrdiff_t n) { return std::clamp<std::ptrdiff_t>(v, 0, n - 1); };

  HeightMap tmp(hm.width(), hm.height());
  for (std::ptrdiff_t r = 0; r < h; ++r)
    for (std::ptrdiff_t c = 0; c < w; ++c) {
      double acc = taps[0] * hm(r, c);
      for (std::ptrdiff_t k = 1; k <= radius; ++k)
        acc += taps[k] * (hm(r, clampi(c - k, w)) + hm(r, clampi(c + k, w)));
      tmp(r, c) = acc;
    }
  HeightMap out(hm.width(), hm.height());
  for (std::ptrdiff_t r = 0; r < h; ++r)
    for (std::ptrdiff_t c = 0; c < w; ++c) {
      double acc = taps[0] * tmp(r, c);
      for (std::ptrdiff_t k = 1; k <= radius; ++k)
        acc += taps[k] * (tmp(clampi(r - k, h), c) + tmp(clampi(r + k, h), c));
      out(r, c) = std::max(acc, 0.0);
    }
  return out;
}

/// n = normalize(-dh/dx, -dh/dy, 1): central differences inside, one-sided at borders.
inline NormalMap normals_from_heightmap(const HeightMap& hm, double pitch_x, double pitch_y) {
  if (!(pitch_x > 0.0) || !(pitch_y > 0.0)) throw ValidationError("pixel pitch must be positive");
  const std::size_t w = hm.width(), h = hm.height();
  if (w < 2 || h < 2) throw ValidationError("heightmap must be at least 2x2");
  NormalMap out(w, h);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) {
      const std::size_t c0 = c == 0 ? 0 : c - 1, c1 = c + 1 == w ? c : c + 1;
      const std::size_t r0 = r == 0 ? 0 : r - 1, r1 = r + 1 == h ? r : r + 1;
      const double dx = (hm(r, c1) - hm(r, c0)) / (static_cast<double>(c1 - c0) * pitch_x);
      const double dy = (hm(r1, c) - hm(r0, c)) / (static_cast<double>(r1 - r0) * pitch_y);
      // 0.0 - x keeps flat pixels at +0.0 rather than -0.0.
      out(r, c) = Vec3(0.0 - dx, 0.0 - dy, 1.0).normalized();
    }
  return out;
}

inline NormalMap normals_from_heightmap(const HeightMap& hm, double pitch) {
  return normals_from_heightmap(hm, pitch, pitch);
}

/// Unit vectors from each undeformed surface point to a pinhole at
/// (0, 0, camera_height). Stands in for the real sensor's wide-angle optics.
inline ViewMap view_map(const GelSpec& gel, double camera_height) {
  gel.validate();
  if (!(camera_height > 0.0) || !std::isfinite(camera_height)) throw ValidationError("camera_height must be positive");
  ViewMap out(gel.res_x, gel.res_y);
  for (std::size_t r = 0; r < gel.res_y; ++r)
    for (std::size_t c = 0; c < gel.res_x; ++c)
      out(r, c) = Vec3(0.0 - gel.x_at(c), 0.0 - gel.y_at(r), camera_height).normalized();
  return out;
}

struct ShadingParams {
  double ambient = 0.15;
  double diffuse_gain = 0.55;
  double specular_gain = 0.45;
  double shininess = 16.0;

  void validate() const {
    if (!(ambient >= 0.0 && ambient <= 1.0)) throw ValidationError("ambient must lie in [0, 1]");
    if (!(diffuse_gain >= 0.0) || !std::isfinite(diffuse_gain)) throw ValidationError("diffuse_gain must be >= 0");
    if (!(specular_gain >= 0.0) || !std::isfinite(specular_gain)) throw ValidationError("specular_gain must be >= 0");
    if (!(shininess >= 1.0) || !std::isfinite(shininess)) throw ValidationError("shininess must be >= 1");
  }
};

// Overhead diffuse light plus a view-dependent lobe; no neighborhood terms,
// which is what makes the model shadowless.
inline double shade_intensity(const Vec3& n, const Vec3& v, const ShadingParams& p) {
  const double ndv = std::max(0.0, n.dot(v));
  return std::clamp(p.ambient + p.diffuse_gain * n.z() + p.specular_gain * std::pow(ndv, p.shininess), 0.0, 1.0);
}

// [0, 1] intensity to 8 bits, rounding half away from zero.
inline std::uint8_t quantize_intensity(double unit) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(unit, 0.0, 1.0) * 255.0));
}

inline TactileImage shade_analytic(const NormalMap& nm, const ViewMap& vm, const ShadingParams& p) {
  p.validate();
  if (!nm.same_shape(vm)) throw ValidationError("normal map and view map differ in size");
  TactileImage out(nm.width(), nm.height());
  auto n = nm.pixels();
  auto v = vm.pixels();
  auto px = out.pixels();
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = quantize_intensity(shade_intensity(n[i], v[i], p));
  return out;
}

/// Identity followed by sin/cos(2^k π x) for k = 0..bands-1, each block
/// component-wise: [x, sin(π x), cos(π x), sin(2π x), cos(2π x), ...].
inline Eigen::VectorXd posenc(const Vec3& x, int bands) {
  if (bands < 0) throw ValidationError("positional encoding bands must be >= 0");
  Eigen::VectorXd out(3 * (2 * bands + 1));
  out.head<3>() = x;
  for (int k = 0; k < bands; ++k) {
    const double freq = std::ldexp(std::numbers::pi, k);
    for (int c = 0; c < 3; ++c) {
      out[3 + 6 * k + c] = std::sin(freq * x[c]);
      out[6 + 6 * k + c] = std::cos(freq * x[c]);
    }
  }
  return out;
}

inline TactileImage image_diff_mask(const TactileImage& a, const TactileImage& b) {
  if (!a.same_shape(b)) throw ValidationError("images differ in size");
  TactileImage out(a.width(), a.height());
  for (std::size_t i = 0; i < a.size(); ++i) out.pixels()[i] = a.pixels()[i] != b.pixels()[i] ? 255 : 0;
  return out;
}

}  // namespace handteleop::tactile
