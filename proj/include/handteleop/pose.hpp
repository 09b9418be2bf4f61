// Copyright 2026 The handteleop Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "handteleop/errors.hpp"

namespace handteleop {

using Vec3 = Eigen::Vector3d;
using Quat = Eigen::Quaterniond;

inline constexpr double kUnitTolerance = 1e-9;

/// Rigid transform: position in meters, unit quaternion orientation (w,x,y,z).
///
/// Every factory and `compose` renormalizes, so the quaternion stays unit
/// within kUnitTolerance no matter how long a chain gets.
struct Pose {
  Vec3 position = Vec3::Zero();
  Quat orientation = Quat::Identity();

  static Pose identity() { return {}; }

  static Pose from_position(const Vec3& p) { return {p, Quat::Identity()}; }

  // Rejects a zero quaternion; anything else is normalized.
  static Pose from_wxyz(const Vec3& p, double w, double x, double y, double z) {
    Quat q(w, x, y, z);
    const double n = q.norm();
    if (!(n > 0.0) || !std::isfinite(n)) throw ValidationError("quaternion must be finite and nonzero");
    q.coeffs() /= n;
    return {p, q};
  }

  // `axis` must already be unit length; a zero angle accepts any unit axis.
  static Pose from_axis_angle(const Vec3& p, const Vec3& axis, double angle) {
    if (std::abs(axis.norm() - 1.0) > kUnitTolerance) throw ValidationError("rotation axis is not unit length");
    Quat q(Eigen::AngleAxisd(angle, axis));
    q.normalize();
    return {p, q};
  }

  Vec3 apply(const Vec3& v) const { return position + orientation * v; }

  bool is_finite() const { return position.allFinite() && orientation.coeffs().allFinite(); }
};

// this ∘ rhs: rhs expressed in this frame.
inline Pose compose(const Pose& lhs, const Pose& rhs) {
  Pose out{lhs.position + lhs.orientation * rhs.position, lhs.orientation * rhs.orientation};
  out.orientation.normalize();
  return out;
}

// Grid that ingested positions are snapped to. Differences of grid points
// (and shifts by grid vectors) are exact in double precision for |x| < 2^21 m,
// so relative vectors do not pick up rounding from a common offset.
inline constexpr double kPositionQuantum = 0x1p-32;

inline Vec3 quantize_position(const Vec3& p) {
  Vec3 out;
  for (int i = 0; i < 3; ++i) out[i] = std::nearbyint(p[i] / kPositionQuantum) * kPositionQuantum;
  return out;
}

}  // namespace handteleop
