// Copyright 2026 The handteleop Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <nlohmann/json.hpp>

#include "handteleop/errors.hpp"
#include "handteleop/hand_model.hpp"
#include "handteleop/pose.hpp"
#include "handteleop/retarget.hpp"
#include "handteleop/rng.hpp"

namespace handteleop {

// --- number formatting ----------------------------------------------------

/// Shortest text that parses back to exactly `v`.
inline std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s) {
  double v = 0.0;
  const auto* end = s.data() + s.size();
  const auto res = std::from_chars(s.data(), end, v);
  if (res.ec != std::errc{} || res.ptr != end) throw ValidationError("bad number '" + std::string(s) + "'");
  return v;
}

// --- pose stream (JSON lines) -----------------------------------------------
//
// {"t": 0.008, "frames": {"palm": {"p": [x, y, z], "q": [w, x, y, z]}, "thumb_tip": ..., ...}}

struct PoseRecord {
  double t = 0.0;
  FramePoses poses;
};

using PoseStream = std::vector<PoseRecord>;

namespace detail {

inline double json_finite(const nlohmann::json& j, const char* what) {
  if (!j.is_number()) throw ValidationError(std::string(what) + " must be a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) throw ValidationError(std::string(what) + " must be finite");
  return v;
}

// Normalizes, but leaves quaternions that are already unit to rounding alone
// so that write(parse(x)) is a fixed point.
inline Quat ingest_quaternion(double w, double x, double y, double z) {
  const double n2 = w * w + x * x + y * y + z * z;
  if (std::abs(n2 - 1.0) > 1e-3) throw ValidationError("quaternion is not unit length");
  Quat q(w, x, y, z);
  if (std::abs(n2 - 1.0) > 8 * std::numeric_limits<double>::epsilon()) q.coeffs() /= std::sqrt(n2);
  return q;
}

}  // namespace detail

/// Positions are snapped to the kPositionQuantum grid at ingestion.
inline Pose pose_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("frame pose must be an object with 'p' and 'q'");
  if (!j.contains("p") || !j["p"].is_array() || j["p"].size() != 3)
    throw ValidationError("'p' must be [x, y, z]");
  if (!j.contains("q") || !j["q"].is_array() || j["q"].size() != 4)
    throw ValidationError("'q' must be [w, x, y, z]");
  const auto& p = j["p"];
  const auto& q = j["q"];
  Pose out;
  out.position = quantize_position(
      Vec3(detail::json_finite(p[0], "p"), detail::json_finite(p[1], "p"), detail::json_finite(p[2], "p")));
  out.orientation = detail::ingest_quaternion(detail::json_finite(q[0], "q"), detail::json_finite(q[1], "q"),
                                              detail::json_finite(q[2], "q"), detail::json_finite(q[3], "q"));
  return out;
}

/// All four task frames, keyed by name; unknown names are rejected.
inline FramePoses frames_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("'frames' must be an object");
  FramePoses poses;
  std::array<bool, kNumTaskFrames> seen{};
  for (const auto& [name, value] : j.items()) {
    const auto idx = task_frame_index(name);
    if (!idx) throw ValidationError("unknown frame '" + name + "'");
    try {
      poses[*idx] = pose_from_json(value);
    } catch (const ValidationError& e) {
      throw ValidationError("frame '" + name + "': " + e.what());
    }
    seen[*idx] = true;
  }
  for (std::size_t f = 0; f < kNumTaskFrames; ++f)
    if (!seen[f]) throw ValidationError("missing frame '" + std::string(kTaskFrameNames[f]) + "'");
  return poses;
}

inline PoseStream parse_pose_stream(std::string_view text) {
  PoseStream out;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") == std::string_view::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      if (!j.is_object() || !j.contains("t") || !j.contains("frames"))
        throw ValidationError("record needs 't' and 'frames'");
      PoseRecord rec{detail::json_finite(j["t"], "t"), frames_from_json(j["frames"])};
      if (!out.empty() && !(rec.t > out.back().t))
        throw ValidationError("timestamp " + format_double(rec.t) + " does not increase");
      out.push_back(rec);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(line_no, std::string("malformed JSON: ") + e.what());
    } catch (const ParseError&) {
      throw;
    } catch (const ValidationError& e) {
      throw ParseError(line_no, e.what());
    }
  }
  return out;
}

inline PoseStream load_pose_stream_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot open '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_pose_stream(ss.str());
}

/// Demo/benchmark input: a clamped Gaussian random walk through the joint box,
/// emitted as forward-kinematics frame poses at `rate_hz`.
inline PoseStream synthesize_pose_stream(const HandModel& model, std::size_t records, std::uint64_t seed,
                                         double step = 0.01, double rate_hz = 125.0) {
  if (!(step >= 0.0 && std::isfinite(step))) throw ValidationError("step must be finite and >= 0");
  if (!(rate_hz > 0.0 && std::isfinite(rate_hz))) throw ValidationError("rate must be positive");
  Xoshiro256 rng(seed);
  JointConfig q(static_cast<Eigen::Index>(model.dof()));
  for (std::size_t k = 0; k < model.dof(); ++k) q[k] = rng.uniform(model.joints()[k].lower, model.joints()[k].upper);
  PoseStream out;
  out.reserve(records);
  for (std::size_t i = 0; i < records; ++i) {
    for (auto& v : q) v += step * rng.normal();
    q = clamp_to_limits(model, q);
    FramePoses poses = forward_kinematics(model, q);
    for (auto& p : poses) p.position = quantize_position(p.position);
    out.push_back({static_cast<double>(i) / rate_hz, poses});
  }
  return out;
}

inline void write_pose_json(std::ostream& out, const Pose& p) {
  const Quat& q = p.orientation;
  out << R"({"p":[)" << format_double(p.position.x()) << ',' << format_double(p.position.y()) << ','
      << format_double(p.position.z()) << R"(],"q":[)" << format_double(q.w()) << ',' << format_double(q.x()) << ','
      << format_double(q.y()) << ',' << format_double(q.z()) << "]}";
}

inline void write_pose_stream(std::ostream& out, const PoseStream& stream) {
  for (const auto& rec : stream) {
    out << R"({"t":)" << format_double(rec.t) << R"(,"frames":{)";
    for (std::size_t f = 0; f < kNumTaskFrames; ++f) {
      if (f) out << ',';
      out << '"' << kTaskFrameNames[f] << "\":";
      write_pose_json(out, rec.poses[f]);
    }
    out << "}}\n";
  }
}

// --- replay -------------------------------------------------------------------

struct TrajectoryRecord {
  double t = 0.0;
  JointConfig q;
  double objective = 0.0;
  bool converged = false;
  std::int64_t solve_micros = 0;
};

using JointTrajectory = std::vector<TrajectoryRecord>;

struct ReplayStats {
  std::size_t records = 0;
  std::size_t failures = 0;  // records with a non-finite objective
  double mean_solve_micros = 0.0;
  double p95_solve_micros = 0.0;
  double max_solve_micros = 0.0;
  double convergence_rate = 0.0;
  double mean_objective = 0.0;  // over records with a finite objective
};

struct ReplayResult {
  JointTrajectory trajectory;
  ReplayStats stats;
};

/// Nearest-rank percentile, pct in (0, 100].
inline double percentile(std::vector<double> values, double pct) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const auto rank = static_cast<std::size_t>(std::ceil(pct / 100.0 * static_cast<double>(values.size())));
  return values[std::clamp<std::size_t>(rank, 1, values.size()) - 1];
}

inline ReplayStats compute_stats(const JointTrajectory& traj) {
  ReplayStats s;
  s.records = traj.size();
  if (traj.empty()) return s;
  std::vector<double> micros;
  micros.reserve(traj.size());
  double objective_sum = 0.0, micros_sum = 0.0;
  std::size_t converged = 0, finite = 0;
  for (const auto& r : traj) {
    micros.push_back(static_cast<double>(r.solve_micros));
    micros_sum += static_cast<double>(r.solve_micros);
    converged += r.converged;
    if (std::isfinite(r.objective)) {
      objective_sum += r.objective;
      ++finite;
    }
  }
  const double n = static_cast<double>(traj.size());
  s.failures = traj.size() - finite;
  s.mean_solve_micros = micros_sum / n;
  s.p95_solve_micros = percentile(micros, 95.0);
  s.max_solve_micros = *std::max_element(micros.begin(), micros.end());
  s.convergence_rate = static_cast<double>(converged) / n;
  s.mean_objective = finite ? objective_sum / static_cast<double>(finite) : std::numeric_limits<double>::quiet_NaN();
  return s;
}

/// Sequential warm-started retargeting of every record. A record the solver
/// rejects is flagged (NaN objective, not converged) and replay continues
/// from the last good configuration.
inline ReplayResult replay(const HandModel& model, const PoseStream& stream, const RetargetParams& params,
                           const JointConfig& q0) {
  params.validate();
  model.check_dimension(q0);
  ReplayResult out;
  out.trajectory.reserve(stream.size());
  JointConfig q = clamp_to_limits(model, q0);
  for (const auto& rec : stream) {
    const TsvSet h = task_space_vectors(rec.poses);
    const auto start = std::chrono::steady_clock::now();
    SolveResult res = retarget_step_or_flag(model, h, q, params);
    const auto micros =
        std::chrono::duration_cast<std::chrono::microseconds>(std::chrono::steady_clock::now() - start).count();
    q = res.q;
    out.trajectory.push_back({rec.t, std::move(res.q), res.objective, res.converged, micros});
  }
  out.stats = compute_stats(out.trajectory);
  return out;
}

inline ReplayResult replay(const HandModel& model, const PoseStream& stream, const RetargetParams& params) {
  return replay(model, stream, params, clamp_to_limits(model, JointConfig::Zero(static_cast<Eigen::Index>(model.dof()))));
}

// --- trajectory CSV -------------------------------------------------------------

inline std::string trajectory_header(std::size_t dof) {
  std::string h = "t";
  for (std::size_t k = 0; k < dof; ++k) h += ",q" + std::to_string(k);
  return h + ",objective,converged,solve_micros";
}

inline void write_trajectory_csv(std::ostream& out, const JointTrajectory& traj, std::size_t dof) {
  out << trajectory_header(dof) << '\n';
  for (const auto& r : traj) {
    if (static_cast<std::size_t>(r.q.size()) != dof) throw ValidationError("trajectory record has wrong dof");
    out << format_double(r.t);
    for (double v : r.q) out << ',' << format_double(v);
    out << ',' << format_double(r.objective) << ',' << (r.converged ? 1 : 0) << ',' << r.solve_micros << '\n';
  }
}

inline JointTrajectory parse_trajectory_csv(std::string_view text) {
  JointTrajectory out;
  std::size_t line_no = 0, dof = 0;
  bool have_header = false;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    std::vector<std::string_view> cells;
    for (std::size_t pos = 0;;) {
      const auto comma = line.find(',', pos);
      cells.push_back(line.substr(pos, comma - pos));
      if (comma == std::string_view::npos) break;
      pos = comma + 1;
    }
    if (!have_header) {
      if (cells.size() < 4) throw ParseError(line_no, "trajectory header is too short");
      dof = cells.size() - 4;
      if (line != trajectory_header(dof)) throw ParseError(line_no, "unexpected trajectory header");
      have_header = true;
      continue;
    }
    if (cells.size() != dof + 4)
      throw ParseError(line_no, "expected " + std::to_string(dof + 4) + " columns, got " + std::to_string(cells.size()));
    try {
      TrajectoryRecord r;
      r.t = parse_double(cells[0]);
      r.q.resize(static_cast<Eigen::Index>(dof));
      for (std::size_t k = 0; k < dof; ++k) r.q[static_cast<Eigen::Index>(k)] = parse_double(cells[1 + k]);
      r.objective = parse_double(cells[dof + 1]);
      if (cells[dof + 2] != "0" && cells[dof + 2] != "1") throw ValidationError("converged must be 0 or 1");
      r.converged = cells[dof + 2] == "1";
      const auto micros = cells[dof + 3];
      const auto res = std::from_chars(micros.data(), micros.data() + micros.size(), r.solve_micros);
      if (res.ec != std::errc{} || res.ptr != micros.data() + micros.size() || r.solve_micros < 0)
        throw ValidationError("bad solve_micros '" + std::string(micros) + "'");
      out.push_back(std::move(r));
    } catch (const ValidationError& e) {
      throw ParseError(line_no, e.what());
    }
  }
  if (!have_header) throw ValidationError("trajectory CSV is empty");
  return out;
}

inline nlohmann::json stats_json(const ReplayStats& s) {
  auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  return {
      {"records", s.records},
      {"failures", s.failures},
      {"mean_solve_micros", num(s.mean_solve_micros)},
      {"p95_solve_micros", num(s.p95_solve_micros)},
      {"max_solve_micros", num(s.max_solve_micros)},
      {"convergence_rate", num(s.convergence_rate)},
      {"mean_objective", num(s.mean_objective)},
  };
}

}  // namespace handteleop
