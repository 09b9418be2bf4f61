// Copyright 2026 The handteleop Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "handteleop/errors.hpp"
#include "handteleop/hand_model.hpp"
#include "handteleop/pose.hpp"

namespace handteleop {

/// The 12 task-space vectors between the four task frames.
///
/// Only the six i<j displacements are stored; (j,i) is produced by negation,
/// so antisymmetry is exact. Indices are 0-based in kTaskFrameNames order.
class TsvSet {
 public:
  static constexpr std::size_t kNumPairs = kNumTaskFrames * (kNumTaskFrames - 1);

  TsvSet() { upper_.fill(Vec3::Zero()); }

  static TsvSet from_positions(const std::array<Vec3, kNumTaskFrames>& p) {
    TsvSet s;
    for (std::size_t i = 0; i < kNumTaskFrames; ++i)
      for (std::size_t j = i + 1; j < kNumTaskFrames; ++j) s.upper_[slot(i, j)] = p[j] - p[i];
    return s;
  }

  // Vector pointing from frame i's origin to frame j's origin. Requires i != j.
  Vec3 operator()(std::size_t i, std::size_t j) const {
    if (i == j || i >= kNumTaskFrames || j >= kNumTaskFrames) throw ValidationError("invalid TSV index pair");
    return i < j ? upper_[slot(i, j)] : Vec3(-upper_[slot(j, i)]);
  }

  bool all_finite() const {
    return std::all_of(upper_.begin(), upper_.end(), [](const Vec3& v) { return v.allFinite(); });
  }

  // All 12 ordered pairs, row-major over (i, j) with i != j.
  static constexpr std::array<std::pair<std::size_t, std::size_t>, kNumPairs> ordered_pairs() {
    std::array<std::pair<std::size_t, std::size_t>, kNumPairs> out{};
    std::size_t n = 0;
    for (std::size_t i = 0; i < kNumTaskFrames; ++i)
      for (std::size_t j = 0; j < kNumTaskFrames; ++j)
        if (i != j) out[n++] = {i, j};
    return out;
  }

 private:
  static constexpr std::size_t slot(std::size_t i, std::size_t j) {
    // (0,1)(0,2)(0,3)(1,2)(1,3)(2,3)
    return i == 0 ? j - 1 : (i == 1 ? j + 1 : 5);
  }

  std::array<Vec3, 6> upper_;
};

inline TsvSet task_space_vectors(const FramePoses& frames) {
  std::array<Vec3, kNumTaskFrames> p;
  for (std::size_t i = 0; i < kNumTaskFrames; ++i) p[i] = frames[i].position;
  return TsvSet::from_positions(p);
}

// Name-keyed input; every canonical frame must be present. Extra names are ignored.
inline TsvSet task_space_vectors(const std::map<std::string, Pose, std::less<>>& frames) {
  FramePoses ordered;
  for (std::size_t i = 0; i < kNumTaskFrames; ++i) {
    auto it = frames.find(kTaskFrameNames[i]);
    if (it == frames.end()) throw ValidationError("missing frame '" + std::string(kTaskFrameNames[i]) + "'");
    ordered[i] = it->second;
  }
  return task_space_vectors(ordered);
}

enum class GradientMode { kAnalytic, kCentralDifference };

struct RetargetParams {
  double alpha = 0.01;  // smoothing weight, tunable
  int max_iters = 50;
  double grad_tol = 1e-7;
  double step_tol = 1e-9;
  double fd_step = 1e-6;  // rad, used by GradientMode::kCentralDifference
  double human_scale = 1.0;
  GradientMode gradient = GradientMode::kAnalytic;

  void validate() const {
    if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw ValidationError("alpha must be finite and >= 0");
    if (max_iters <= 0) throw ValidationError("max_iters must be positive");
    if (!(grad_tol > 0.0) || !std::isfinite(grad_tol)) throw ValidationError("grad_tol must be positive");
    if (!(step_tol > 0.0) || !std::isfinite(step_tol)) throw ValidationError("step_tol must be positive");
    if (!(fd_step > 0.0) || !std::isfinite(fd_step)) throw ValidationError("fd_step must be positive");
    if (!(human_scale >= 0.1 && human_scale <= 10.0)) throw ValidationError("human_scale must lie in [0.1, 10]");
  }
};

struct SolveResult {
  JointConfig q;
  double objective = 0.0;  // m^2
  int iterations = 0;
  bool converged = false;
  double grad_norm = 0.0;  // norm of the projected gradient at q
  // Objective after each accepted iterate, starting with the warm start.
  std::vector<double> objective_trace;
  // Set when the step was rejected outright (e.g. non-finite targets); q is then the warm start.
  std::optional<std::string> error;
};

namespace detail {

struct Linearization {
  Eigen::VectorXd residual;  // 3 per ordered pair, then sqrt(alpha)*(q - q_prev)
  Eigen::MatrixXd jacobian;  // empty unless requested
  double objective = 0.0;
};

inline constexpr Eigen::Index kTsvRows = 3 * static_cast<Eigen::Index>(TsvSet::kNumPairs);

inline Linearization linearize(const HandModel& model, const JointConfig& q, const TsvSet& h,
                               const JointConfig& q_prev, const RetargetParams& params, bool with_jacobian) {
  model.check_dimension(q);
  model.check_dimension(q_prev);
  const auto n = static_cast<Eigen::Index>(model.dof());
  const FrameKinematics fk = with_jacobian ? forward_kinematics_with_jacobian(model, q)
                                           : FrameKinematics{forward_kinematics(model, q), {}};
  const TsvSet r = task_space_vectors(fk.poses);

  Linearization lin;
  lin.residual.resize(kTsvRows + n);
  if (with_jacobian) lin.jacobian.setZero(kTsvRows + n, n);
  double tsv_term = 0.0;
  Eigen::Index row = 0;
  for (auto [i, j] : TsvSet::ordered_pairs()) {
    const Vec3 e = r(i, j) - params.human_scale * h(i, j);
    lin.residual.segment<3>(row) = e;
    tsv_term += e.squaredNorm();
    if (with_jacobian)
      lin.jacobian.block(row, 0, 3, n) = fk.position_jacobians[j] - fk.position_jacobians[i];
    row += 3;
  }
  const double root_alpha = std::sqrt(params.alpha);
  const Eigen::VectorXd dq = q - q_prev;
  lin.residual.tail(n) = root_alpha * dq;
  if (with_jacobian) lin.jacobian.bottomRows(n).diagonal().setConstant(root_alpha);
  lin.objective = tsv_term + params.alpha * dq.squaredNorm();
  return lin;
}

// Central-difference residual Jacobian, column by column.
inline Eigen::MatrixXd residual_jacobian_fd(const HandModel& model, const JointConfig& q, const TsvSet& h,
                                            const JointConfig& q_prev, const RetargetParams& params) {
  const auto n = static_cast<Eigen::Index>(model.dof());
  Eigen::MatrixXd jac(kTsvRows + n, n);
  for (Eigen::Index k = 0; k < n; ++k) {
    JointConfig plus = q, minus = q;
    plus[k] += params.fd_step;
    minus[k] -= params.fd_step;
    jac.col(k) = (linearize(model, plus, h, q_prev, params, false).residual -
                  linearize(model, minus, h, q_prev, params, false).residual) /
                 (2.0 * params.fd_step);
  }
  return jac;
}

inline Linearization linearize_for_solver(const HandModel& model, const JointConfig& q, const TsvSet& h,
                                          const JointConfig& q_prev, const RetargetParams& params) {
  if (params.gradient == GradientMode::kAnalytic) return linearize(model, q, h, q_prev, params, true);
  Linearization lin = linearize(model, q, h, q_prev, params, false);
  lin.jacobian = residual_jacobian_fd(model, q, h, q_prev, params);
  return lin;
}

// The smoothing term's gradient is formed directly as 2α(q − q_prev) rather
// than through the sqrt(α)-scaled Jacobian rows, so it is exact.
inline Eigen::VectorXd gradient(const Linearization& lin, const JointConfig& q, const JointConfig& q_prev,
                                double alpha) {
  return 2.0 * (lin.jacobian.topRows(kTsvRows).transpose() * lin.residual.head(kTsvRows)) +
         2.0 * (alpha * (q - q_prev));
}

inline double projected_gradient_norm(const HandModel& model, const JointConfig& q, const Eigen::VectorXd& g) {
  return (q - clamp_to_limits(model, q - g)).norm();
}

}  // namespace detail

/// Σ_{i≠j} ‖r_ij(q) − s·h_ij‖² + α‖q − q_prev‖², summed over all 12 ordered pairs.
inline double eval_objective(const HandModel& model, const JointConfig& q, const TsvSet& h,
                             const JointConfig& q_prev, const RetargetParams& params) {
  return detail::linearize(model, q, h, q_prev, params, false).objective;
}

inline Eigen::VectorXd eval_gradient(const HandModel& model, const JointConfig& q, const TsvSet& h,
                                     const JointConfig& q_prev, const RetargetParams& params) {
  const auto lin = detail::linearize_for_solver(model, q, h, q_prev, params);
  return detail::gradient(lin, q, q_prev, params.alpha);
}

// Euclidean norm of each ordered-pair residual r_ij(q) − s·h_ij.
inline std::array<double, TsvSet::kNumPairs> pair_residual_norms(const HandModel& model, const JointConfig& q,
                                                                  const TsvSet& h, double human_scale) {
  const TsvSet r = task_space_vectors(forward_kinematics(model, q));
  std::array<double, TsvSet::kNumPairs> out{};
  std::size_t n = 0;
  for (auto [i, j] : TsvSet::ordered_pairs()) out[n++] = (r(i, j) - human_scale * h(i, j)).norm();
  return out;
}

/// One retargeting solve, warm-started from q_prev.
///
/// Projected Levenberg-Marquardt on the stacked residual: joints pinned at a
/// bound with the gradient pushing outward are frozen for the step, the rest
/// take a damped Gauss-Newton step that is then projected back into the box.
/// A step is accepted only if it strictly lowers the objective; when damping
/// saturates, a backtracking projected-gradient step is tried before giving up.
inline SolveResult retarget_step(const HandModel& model, const TsvSet& h, const JointConfig& q_prev_in,
                                 const RetargetParams& params) {
  params.validate();
  model.check_dimension(q_prev_in);
  if (!h.all_finite()) throw ValidationError("target task-space vectors contain non-finite values");
  if (!q_prev_in.allFinite()) throw ValidationError("previous joint config contains non-finite values");

  const auto n = static_cast<Eigen::Index>(model.dof());
  const JointConfig q_prev = clamp_to_limits(model, q_prev_in);
  JointConfig x = q_prev;
  auto lin = detail::linearize_for_solver(model, x, h, q_prev, params);

  SolveResult out;
  out.objective_trace.push_back(lin.objective);
  double lambda = 1e-3;
  constexpr double kMaxLambda = 1e10;

  auto is_free = [&](Eigen::Index k, double g) {
    const auto& j = model.joints()[static_cast<std::size_t>(k)];
    return !((x[k] <= j.lower && g > 0.0) || (x[k] >= j.upper && g < 0.0));
  };

  while (out.iterations < params.max_iters) {
    const Eigen::VectorXd grad = detail::gradient(lin, x, q_prev, params.alpha);
    const Eigen::VectorXd jt_r = 0.5 * grad;
    if (detail::projected_gradient_norm(model, x, grad) <= params.grad_tol) {
      out.converged = true;
      break;
    }

    std::vector<Eigen::Index> free;
    for (Eigen::Index k = 0; k < n; ++k)
      if (is_free(k, grad[k])) free.push_back(k);

    const Eigen::MatrixXd jtj = lin.jacobian.transpose() * lin.jacobian;
    const double diag_floor = 1e-12 * std::max(1.0, jtj.diagonal().maxCoeff());
    const auto nf = static_cast<Eigen::Index>(free.size());

    std::optional<std::pair<JointConfig, detail::Linearization>> accepted;
    while (!accepted && lambda <= kMaxLambda && nf > 0) {
      Eigen::MatrixXd a(nf, nf);
      Eigen::VectorXd b(nf);
      for (Eigen::Index r = 0; r < nf; ++r) {
        b[r] = -jt_r[free[r]];
        for (Eigen::Index c = 0; c < nf; ++c) a(r, c) = jtj(free[r], free[c]);
        a(r, r) += lambda * std::max(jtj(free[r], free[r]), diag_floor);
      }
      const Eigen::VectorXd delta = a.ldlt().solve(b);
      JointConfig candidate = x;
      for (Eigen::Index r = 0; r < nf; ++r) candidate[free[r]] += delta[r];
      candidate = clamp_to_limits(model, candidate);
      if (candidate.allFinite()) {
        auto cand_lin = detail::linearize_for_solver(model, candidate, h, q_prev, params);
        if (cand_lin.objective < lin.objective) {
          accepted.emplace(std::move(candidate), std::move(cand_lin));
          lambda = std::max(lambda / 3.0, 1e-12);
          break;
        }
      }
      lambda *= 4.0;
    }

    if (!accepted) {
      double t = 1.0 / std::max(1.0, grad.norm());
      for (int tries = 0; tries < 40 && !accepted; ++tries, t *= 0.5) {
        JointConfig candidate = clamp_to_limits(model, x - t * grad);
        auto cand_lin = detail::linearize_for_solver(model, candidate, h, q_prev, params);
        if (cand_lin.objective < lin.objective) accepted.emplace(std::move(candidate), std::move(cand_lin));
      }
      lambda = std::min(lambda, kMaxLambda);
    }

    // No descent available at working precision: x is numerically stationary.
    if (!accepted) {
      out.converged = true;
      break;
    }

    const double step = (accepted->first - x).norm();
    x = std::move(accepted->first);
    lin = std::move(accepted->second);
    ++out.iterations;
    out.objective_trace.push_back(lin.objective);
    if (step <= params.step_tol) {
      out.converged = true;
      break;
    }
  }

  out.q = x;
  out.objective = eval_objective(model, x, h, q_prev, params);
  out.grad_norm = detail::projected_gradient_norm(model, x, detail::gradient(lin, x, q_prev, params.alpha));
  return out;
}

/// Chains retarget_step over a stream; each step is warm-started from the
/// previous accepted solution. A rejected step is flagged and the sequence
/// continues from the last good q.
/// retarget_step that turns a rejected target into a flagged result holding
/// the warm start instead of throwing.
inline SolveResult retarget_step_or_flag(const HandModel& model, const TsvSet& h, const JointConfig& q_prev,
                                         const RetargetParams& params) {
  try {
    return retarget_step(model, h, q_prev, params);
  } catch (const ValidationError& e) {
    SolveResult failed;
    failed.q = q_prev;
    failed.objective = std::numeric_limits<double>::quiet_NaN();
    failed.grad_norm = std::numeric_limits<double>::quiet_NaN();
    failed.error = e.what();
    return failed;
  }
}

inline std::vector<SolveResult> retarget_sequence(const HandModel& model, std::span<const TsvSet> targets,
                                                  const JointConfig& q0, const RetargetParams& params) {
  params.validate();
  model.check_dimension(q0);
  std::vector<SolveResult> out;
  out.reserve(targets.size());
  JointConfig q = clamp_to_limits(model, q0);
  for (const auto& h : targets) {
    out.push_back(retarget_step_or_flag(model, h, q, params));
    q = out.back().q;
  }
  return out;
}

}  // namespace handteleop
