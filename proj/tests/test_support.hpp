// Copyright 2026 The handteleop Authors
// SPDX-License-Identifier: Apache-2.0

// Shared helpers for the test binaries. The oracles here deliberately avoid
// the library's Pose/quaternion code paths.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "handteleop/hand_model.hpp"
#include "handteleop/pose_stream.hpp"
#include "handteleop/retarget.hpp"
#include "handteleop/rng.hpp"

namespace handteleop::testing {

using Mat4 = std::array<std::array<double, 4>, 4>;

inline Mat4 mat_identity() {
  Mat4 m{};
  for (int i = 0; i < 4; ++i) m[i][i] = 1.0;
  return m;
}

inline Mat4 mat_mul(const Mat4& a, const Mat4& b) {
  Mat4 c{};
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      for (int k = 0; k < 4; ++k) c[i][j] += a[i][k] * b[k][j];
  return c;
}

// Rodrigues rotation about a unit axis, plus translation.
inline Mat4 mat_from_axis_angle(double tx, double ty, double tz, double ax, double ay, double az, double angle) {
  const double c = std::cos(angle), s = std::sin(angle), v = 1.0 - c;
  Mat4 m = mat_identity();
  m[0][0] = ax * ax * v + c;
  m[0][1] = ax * ay * v - az * s;
  m[0][2] = ax * az * v + ay * s;
  m[1][0] = ay * ax * v + az * s;
  m[1][1] = ay * ay * v + c;
  m[1][2] = ay * az * v - ax * s;
  m[2][0] = az * ax * v - ay * s;
  m[2][1] = az * ay * v + ax * s;
  m[2][2] = az * az * v + c;
  m[0][3] = tx;
  m[1][3] = ty;
  m[2][3] = tz;
  return m;
}

inline Mat4 mat_from_pose(const Pose& p) {
  // Recover axis-angle from the stored quaternion without using Eigen's rotation helpers.
  const double w = p.orientation.w(), x = p.orientation.x(), y = p.orientation.y(), z = p.orientation.z();
  const double s = std::sqrt(x * x + y * y + z * z);
  const double angle = 2.0 * std::atan2(s, w);
  if (s < 1e-300) return mat_from_axis_angle(p.position.x(), p.position.y(), p.position.z(), 0, 0, 1, 0);
  return mat_from_axis_angle(p.position.x(), p.position.y(), p.position.z(), x / s, y / s, z / s, angle);
}

// Straight-line transform-chain FK: walk each frame's path to the root and
// multiply 4x4 matrices root-first.
inline std::array<std::array<double, 3>, kNumTaskFrames> oracle_fk_positions(const HandModel& model,
                                                                            const JointConfig& q) {
  std::array<std::array<double, 3>, kNumTaskFrames> out{};
  const auto& joints = model.joints();
  for (std::size_t f = 0; f < kNumTaskFrames; ++f) {
    std::vector<Mat4> chain;
    chain.push_back(mat_from_pose(model.frames()[f].offset));
    std::string link = model.frames()[f].link;
    while (link != model.root_link()) {
      std::size_t k = 0;
      while (joints[k].child_link != link) ++k;
      const auto& j = joints[k];
      chain.push_back(mat_from_axis_angle(0, 0, 0, j.axis.x(), j.axis.y(), j.axis.z(), q[k]));
      chain.push_back(mat_from_pose(j.origin));
      link = j.parent_link;
    }
    Mat4 m = mat_identity();
    for (auto it = chain.rbegin(); it != chain.rend(); ++it) m = mat_mul(m, *it);
    out[f] = {m[0][3], m[1][3], m[2][3]};
  }
  return out;
}

inline JointConfig random_config(const HandModel& model, Xoshiro256& rng) {
  JointConfig q(model.dof());
  for (std::size_t k = 0; k < model.dof(); ++k)
    q[k] = rng.uniform(model.joints()[k].lower, model.joints()[k].upper);
  return q;
}

inline HandModel default_model() { return load_hand_model_file(HANDTELEOP_DEFAULT_MODEL); }

/// Two revolute joints about +z in the xy-plane. Palm at the root origin,
/// thumb_tip at the end of link 1, index_tip at the end of link 2, middle_tip
/// halfway along link 2.
inline constexpr double kPlanarL1 = 0.05;
inline constexpr double kPlanarL2 = 0.04;
inline constexpr double kPlanarLo = -0.6;
inline constexpr double kPlanarHi = 1.2;

inline HandModel planar_two_link_model() {
  return parse_hand_model(
      "joint j1 base link1 origin=0,0,0,0,0,1,0 axis=0,0,1 limits=-0.6,1.2\n"
      "joint j2 link1 link2 origin=0.05,0,0,0,0,1,0 axis=0,0,1 limits=-0.6,1.2\n"
      "frame palm base offset=0,0,0,0,0,1,0\n"
      "frame thumb_tip link1 offset=0.05,0,0,0,0,1,0\n"
      "frame index_tip link2 offset=0.04,0,0,0,0,1,0\n"
      "frame middle_tip link2 offset=0.02,0,0,0,0,1,0\n");
}

// Closed-form frame positions for planar_two_link_model (z is always 0).
inline std::array<std::array<double, 2>, kNumTaskFrames> planar_positions(double a, double b) {
  const double ex = kPlanarL1 * std::cos(a), ey = kPlanarL1 * std::sin(a);
  return {{{0.0, 0.0},
           {ex, ey},
           {ex + kPlanarL2 * std::cos(a + b), ey + kPlanarL2 * std::sin(a + b)},
           {ex + 0.5 * kPlanarL2 * std::cos(a + b), ey + 0.5 * kPlanarL2 * std::sin(a + b)}}};
}

// Objective on the planar chain computed by direct summation over the 12 ordered pairs.
inline double planar_objective(double a, double b, const std::array<std::array<double, 2>, kNumTaskFrames>& target,
                               double qa_prev, double qb_prev, double alpha) {
  const auto p = planar_positions(a, b);
  double sum = 0.0;
  for (std::size_t i = 0; i < kNumTaskFrames; ++i)
    for (std::size_t j = 0; j < kNumTaskFrames; ++j) {
      if (i == j) continue;
      const double dx = (p[j][0] - p[i][0]) - (target[j][0] - target[i][0]);
      const double dy = (p[j][1] - p[i][1]) - (target[j][1] - target[i][1]);
      sum += dx * dx + dy * dy;
    }
  return sum + alpha * ((a - qa_prev) * (a - qa_prev) + (b - qb_prev) * (b - qb_prev));
}

struct GridMinimum {
  double a = 0.0, b = 0.0, value = 0.0;
};

// Exhaustive 1e-3 rad grid over the joint box, then a shrinking local grid
// around the best cell, never leaving the box.
inline GridMinimum planar_grid_search(const std::array<std::array<double, 2>, kNumTaskFrames>& target,
                                      double qa_prev, double qb_prev, double alpha) {
  GridMinimum best{0, 0, INFINITY};
  const int n = static_cast<int>(std::lround((kPlanarHi - kPlanarLo) / 1e-3));
  for (int i = 0; i <= n; ++i) {
    const double a = kPlanarLo + i * 1e-3;
    for (int j = 0; j <= n; ++j) {
      const double b = kPlanarLo + j * 1e-3;
      const double v = planar_objective(a, b, target, qa_prev, qb_prev, alpha);
      if (v < best.value) best = {a, b, v};
    }
  }
  double h = 1e-3;
  for (int round = 0; round < 12; ++round) {
    GridMinimum local = best;
    for (int i = -10; i <= 10; ++i)
      for (int j = -10; j <= 10; ++j) {
        const double a = std::clamp(best.a + i * h / 10.0, kPlanarLo, kPlanarHi);
        const double b = std::clamp(best.b + j * h / 10.0, kPlanarLo, kPlanarHi);
        const double v = planar_objective(a, b, target, qa_prev, qb_prev, alpha);
        if (v < local.value) local = {a, b, v};
      }
    best = local;
    h /= 10.0;
    if (h < 1e-12) break;
  }
  return best;
}

// Central finite differences of eval_objective, independent of the Jacobian code.
inline Eigen::VectorXd fd_gradient(const HandModel& model, const JointConfig& q, const TsvSet& h,
                                   const JointConfig& q_prev, const RetargetParams& params, double step = 1e-6) {
  Eigen::VectorXd g(q.size());
  for (Eigen::Index k = 0; k < q.size(); ++k) {
    JointConfig plus = q, minus = q;
    plus[k] += step;
    minus[k] -= step;
    g[k] = (eval_objective(model, plus, h, q_prev, params) - eval_objective(model, minus, h, q_prev, params)) /
           (2.0 * step);
  }
  return g;
}

inline TsvSet random_tsv(Xoshiro256& rng, double scale = 0.1) {
  std::array<Vec3, kNumTaskFrames> p;
  for (auto& v : p) v = Vec3(rng.uniform(-scale, scale), rng.uniform(-scale, scale), rng.uniform(-scale, scale));
  return TsvSet::from_positions(p);
}

// Random walk through the joint box, emitted as FK frame poses at 125 Hz.
inline PoseStream synthetic_stream(const HandModel& model, std::size_t n, Xoshiro256& rng, double step = 0.01,
                                   std::vector<JointConfig>* configs = nullptr) {
  PoseStream out;
  JointConfig q = random_config(model, rng);
  for (std::size_t i = 0; i < n; ++i) {
    for (auto& v : q) v += step * rng.normal();
    q = clamp_to_limits(model, q);
    if (configs) configs->push_back(q);
    out.push_back({static_cast<double>(i) / 125.0, forward_kinematics(model, q)});
  }
  return out;
}

inline std::string to_text(const PoseStream& s) {
  std::ostringstream os;
  write_pose_stream(os, s);
  return os.str();
}

}  // namespace handteleop::testing
