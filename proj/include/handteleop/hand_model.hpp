// Copyright 2026 The handteleop Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "handteleop/errors.hpp"
#include "handteleop/pose.hpp"

namespace handteleop {

using JointConfig = Eigen::VectorXd;

inline constexpr std::size_t kNumTaskFrames = 4;

// Index order is the 1..4 numbering used by task-space vectors.
inline constexpr std::array<std::string_view, kNumTaskFrames> kTaskFrameNames = {
    "palm", "thumb_tip", "index_tip", "middle_tip"};

inline std::optional<std::size_t> task_frame_index(std::string_view name) {
  for (std::size_t i = 0; i < kNumTaskFrames; ++i)
    if (kTaskFrameNames[i] == name) return i;
  return std::nullopt;
}

struct JointSpec {
  std::string name;
  std::string parent_link;
  std::string child_link;
  Pose origin;
  Vec3 axis = Vec3::UnitZ();
  double lower = 0.0;
  double upper = 0.0;
};

struct TaskFrame {
  std::string name;
  std::string link;
  Pose offset;
};

using FramePoses = std::array<Pose, kNumTaskFrames>;

/// Revolute-joint kinematic tree with exactly four task frames.
///
/// Immutable once constructed; the constructor validates the tree and
/// precomputes a parent-first evaluation order plus, per task frame, which
/// joints can move it. Joint order as given defines the index into q.
class HandModel {
 public:
  HandModel(std::vector<JointSpec> joints, std::vector<TaskFrame> frames)
      : joints_(std::move(joints)) {
    validate_joints();
    build_tree(frames);
    attach_frames(std::move(frames));
  }

  std::size_t dof() const { return joints_.size(); }
  const std::vector<JointSpec>& joints() const { return joints_; }
  // Indexed like kTaskFrameNames.
  const std::array<TaskFrame, kNumTaskFrames>& frames() const { return frames_; }
  const std::string& root_link() const { return root_; }
  // Joint indices in parent-before-child order.
  const std::vector<std::size_t>& evaluation_order() const { return order_; }
  // True when joint `j` lies on the path from the root to task frame `f`.
  bool moves_frame(std::size_t j, std::size_t f) const { return frame_ancestors_[f][j]; }
  // Link names in tree order (root first).
  const std::vector<std::string>& links() const { return link_names_; }
  // Indices into links() for each joint's parent/child and each task frame.
  std::size_t parent_link_index(std::size_t joint) const { return joint_parent_[joint]; }
  std::size_t child_link_index(std::size_t joint) const { return joint_child_[joint]; }
  std::size_t frame_link_index(std::size_t frame) const { return frame_link_[frame]; }

  void check_dimension(const JointConfig& q) const {
    if (static_cast<std::size_t>(q.size()) != dof())
      throw ValidationError("joint config has " + std::to_string(q.size()) + " entries, model has " +
                            std::to_string(dof()) + " DoF");
  }

 private:
  void validate_joints() {
    std::set<std::string> names;
    for (const auto& j : joints_) {
      if (j.name.empty()) throw ValidationError("joint with empty name");
      if (!names.insert(j.name).second) throw ValidationError("duplicate joint '" + j.name + "'");
      if (std::abs(j.axis.norm() - 1.0) > kUnitTolerance)
        throw ValidationError("joint '" + j.name + "' axis is not unit length");
      if (!std::isfinite(j.lower) || !std::isfinite(j.upper) || !(j.lower < j.upper))
        throw ValidationError("joint '" + j.name + "' limits must satisfy lo < hi");
      if (!j.origin.is_finite()) throw ValidationError("joint '" + j.name + "' origin is not finite");
    }
  }

  void build_tree(const std::vector<TaskFrame>& frames) {
    std::map<std::string, std::size_t> parent_joint;
    std::set<std::string> all_links;
    for (std::size_t k = 0; k < joints_.size(); ++k) {
      const auto& j = joints_[k];
      if (!parent_joint.emplace(j.child_link, k).second)
        throw ValidationError("link '" + j.child_link + "' has more than one parent joint");
      all_links.insert(j.parent_link);
      all_links.insert(j.child_link);
    }
    // Without joints the tree is a single link: the one the palm frame names.
    if (joints_.empty() && !frames.empty()) {
      auto palm = std::find_if(frames.begin(), frames.end(), [](const TaskFrame& f) { return f.name == "palm"; });
      all_links.insert(palm != frames.end() ? palm->link : frames.front().link);
    }

    std::vector<std::string> roots;
    for (const auto& l : all_links)
      if (!parent_joint.count(l)) roots.push_back(l);
    if (roots.empty() && !all_links.empty()) throw ValidationError("cyclic link graph: no root link");
    if (roots.size() > 1) throw ValidationError("link graph has more than one root");
    if (roots.empty()) throw ValidationError("model declares no links");
    root_ = roots.front();

    // Breadth-first from the root; anything left over sits on a cycle.
    std::multimap<std::string, std::size_t> children;
    for (std::size_t k = 0; k < joints_.size(); ++k) children.emplace(joints_[k].parent_link, k);
    std::vector<std::string> frontier{root_};
    link_parent_.clear();
    link_parent_[root_] = std::nullopt;
    while (!frontier.empty()) {
      std::vector<std::string> next;
      for (const auto& link : frontier) {
        auto [b, e] = children.equal_range(link);
        for (auto it = b; it != e; ++it) {
          order_.push_back(it->second);
          link_parent_[joints_[it->second].child_link] = it->second;
          next.push_back(joints_[it->second].child_link);
        }
      }
      frontier = std::move(next);
    }
    if (order_.size() != joints_.size()) throw ValidationError("cyclic link graph");

    link_names_ = {root_};
    for (std::size_t j : order_) link_names_.push_back(joints_[j].child_link);
    joint_parent_.resize(joints_.size());
    joint_child_.resize(joints_.size());
    for (std::size_t k = 0; k < joints_.size(); ++k) {
      joint_parent_[k] = link_index(joints_[k].parent_link);
      joint_child_[k] = link_index(joints_[k].child_link);
    }
  }

  std::size_t link_index(const std::string& name) const {
    return static_cast<std::size_t>(std::find(link_names_.begin(), link_names_.end(), name) - link_names_.begin());
  }

  void attach_frames(std::vector<TaskFrame> frames) {
    std::array<bool, kNumTaskFrames> seen{};
    for (auto& f : frames) {
      auto idx = task_frame_index(f.name);
      if (!idx) throw ValidationError("unknown task frame '" + f.name + "'");
      if (seen[*idx]) throw ValidationError("duplicate task frame '" + f.name + "'");
      if (!link_parent_.count(f.link))
        throw ValidationError("task frame '" + f.name + "' attaches to undeclared link '" + f.link + "'");
      if (!f.offset.is_finite()) throw ValidationError("task frame '" + f.name + "' offset is not finite");
      seen[*idx] = true;
      frame_link_[*idx] = link_index(f.link);
      frames_[*idx] = std::move(f);
    }
    for (std::size_t i = 0; i < kNumTaskFrames; ++i)
      if (!seen[i]) throw ValidationError("missing task frame '" + std::string(kTaskFrameNames[i]) + "'");

    for (std::size_t i = 0; i < kNumTaskFrames; ++i) {
      frame_ancestors_[i].assign(joints_.size(), false);
      auto parent = link_parent_.at(frames_[i].link);
      while (parent) {
        frame_ancestors_[i][*parent] = true;
        parent = link_parent_.at(joints_[*parent].parent_link);
      }
    }
  }

  std::vector<JointSpec> joints_;
  std::array<TaskFrame, kNumTaskFrames> frames_;
  std::string root_;
  std::vector<std::size_t> order_;
  std::map<std::string, std::optional<std::size_t>> link_parent_;
  std::vector<std::string> link_names_;
  std::vector<std::size_t> joint_parent_;
  std::vector<std::size_t> joint_child_;
  std::array<std::size_t, kNumTaskFrames> frame_link_{};
  std::array<std::vector<bool>, kNumTaskFrames> frame_ancestors_;
};

namespace detail {

inline std::vector<double> parse_number_list(std::string_view text, std::size_t expected, std::size_t line,
                                             std::string_view key) {
  std::vector<double> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t comma = text.find(',', start);
    if (comma == std::string_view::npos) comma = text.size();
    std::string_view tok = text.substr(start, comma - start);
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (tok.empty() || ec != std::errc() || ptr != tok.data() + tok.size() || !std::isfinite(v))
      throw ParseError(line, "bad number '" + std::string(tok) + "' in " + std::string(key));
    out.push_back(v);
    start = comma + 1;
  }
  if (out.size() != expected)
    throw ParseError(line, std::string(key) + " expects " + std::to_string(expected) + " values, got " +
                               std::to_string(out.size()));
  return out;
}

inline Pose parse_axis_angle_pose(std::string_view text, std::size_t line, std::string_view key) {
  auto v = parse_number_list(text, 7, line, key);
  try {
    return Pose::from_axis_angle(Vec3(v[0], v[1], v[2]), Vec3(v[3], v[4], v[5]), v[6]);
  } catch (const ValidationError& e) {
    throw ParseError(line, std::string(key) + ": " + e.what());
  }
}

// Splits `key=value` tokens; every key in `required` must be present exactly once.
inline std::map<std::string, std::string> parse_keyed(const std::vector<std::string>& tokens, std::size_t first,
                                                      const std::set<std::string>& required, std::size_t line) {
  std::map<std::string, std::string> out;
  for (std::size_t i = first; i < tokens.size(); ++i) {
    auto eq = tokens[i].find('=');
    if (eq == std::string::npos) throw ParseError(line, "expected key=value, got '" + tokens[i] + "'");
    std::string key = tokens[i].substr(0, eq);
    if (!required.count(key)) throw ParseError(line, "unknown key '" + key + "'");
    if (!out.emplace(key, tokens[i].substr(eq + 1)).second) throw ParseError(line, "duplicate key '" + key + "'");
  }
  for (const auto& k : required)
    if (!out.count(k)) throw ParseError(line, "missing " + k + "=");
  return out;
}

}  // namespace detail

/// Parses the line-oriented model format:
///
///   joint <name> <parent> <child> origin=<x,y,z,ax,ay,az,angle> axis=<x,y,z> limits=<lo,hi>
///   frame <name> <link> offset=<x,y,z,ax,ay,az,angle>
///
/// `#` starts a comment line. Non-unit axes are rejected, never renormalized.
inline HandModel parse_hand_model(std::string_view document) {
  std::vector<JointSpec> joints;
  std::vector<TaskFrame> frames;
  std::istringstream in{std::string(document)};
  std::string raw;
  std::size_t line = 0;
  while (std::getline(in, raw)) {
    ++line;
    std::istringstream ls(raw);
    std::vector<std::string> tok;
    for (std::string t; ls >> t;) tok.push_back(t);
    if (tok.empty() || tok[0].front() == '#') continue;

    if (tok[0] == "joint") {
      if (tok.size() != 7) throw ParseError(line, "joint record expects 6 fields");
      auto kv = detail::parse_keyed(tok, 4, {"origin", "axis", "limits"}, line);
      JointSpec j;
      j.name = tok[1];
      j.parent_link = tok[2];
      j.child_link = tok[3];
      j.origin = detail::parse_axis_angle_pose(kv["origin"], line, "origin");
      auto a = detail::parse_number_list(kv["axis"], 3, line, "axis");
      j.axis = Vec3(a[0], a[1], a[2]);
      if (std::abs(j.axis.norm() - 1.0) > kUnitTolerance) throw ParseError(line, "axis is not unit length");
      auto lim = detail::parse_number_list(kv["limits"], 2, line, "limits");
      j.lower = lim[0];
      j.upper = lim[1];
      if (!(j.lower < j.upper)) throw ParseError(line, "limits must satisfy lo < hi");
      joints.push_back(std::move(j));
    } else if (tok[0] == "frame") {
      if (tok.size() != 4) throw ParseError(line, "frame record expects 3 fields");
      auto kv = detail::parse_keyed(tok, 3, {"offset"}, line);
      frames.push_back({tok[1], tok[2], detail::parse_axis_angle_pose(kv["offset"], line, "offset")});
    } else {
      throw ParseError(line, "unknown record '" + tok[0] + "'");
    }
  }
  return HandModel(std::move(joints), std::move(frames));
}

inline HandModel load_hand_model_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ValidationError("cannot open model file '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_hand_model(ss.str());
}

/// World poses of the four task frames, plus the 3×DoF position Jacobian of each.
struct FrameKinematics {
  FramePoses poses;
  std::array<Eigen::Matrix<double, 3, Eigen::Dynamic>, kNumTaskFrames> position_jacobians;
};

namespace detail {

template <bool kWithJacobian>
FrameKinematics evaluate_kinematics(const HandModel& model, const JointConfig& q) {
  model.check_dimension(q);
  const auto& joints = model.joints();
  std::vector<Pose> link_pose(model.links().size());
  std::vector<Vec3> axis_world(joints.size());
  std::vector<Vec3> anchor_world(joints.size());
  for (std::size_t k : model.evaluation_order()) {
    const auto& j = joints[k];
    const Pose joint_frame = compose(link_pose[model.parent_link_index(k)], j.origin);
    if constexpr (kWithJacobian) {
      axis_world[k] = joint_frame.orientation * j.axis;
      anchor_world[k] = joint_frame.position;
    }
    link_pose[model.child_link_index(k)] = compose(joint_frame, Pose::from_axis_angle(Vec3::Zero(), j.axis, q[k]));
  }

  FrameKinematics out;
  for (std::size_t f = 0; f < kNumTaskFrames; ++f) {
    const auto& frame = model.frames()[f];
    out.poses[f] = compose(link_pose[model.frame_link_index(f)], frame.offset);
    if constexpr (kWithJacobian) {
      auto& jac = out.position_jacobians[f];
      jac.setZero(3, static_cast<Eigen::Index>(joints.size()));
      for (std::size_t k = 0; k < joints.size(); ++k)
        if (model.moves_frame(k, f)) jac.col(k) = axis_world[k].cross(out.poses[f].position - anchor_world[k]);
    }
  }
  return out;
}

}  // namespace detail

inline FramePoses forward_kinematics(const HandModel& model, const JointConfig& q) {
  return detail::evaluate_kinematics<false>(model, q).poses;
}

inline FrameKinematics forward_kinematics_with_jacobian(const HandModel& model, const JointConfig& q) {
  return detail::evaluate_kinematics<true>(model, q);
}

inline JointConfig clamp_to_limits(const HandModel& model, const JointConfig& q) {
  model.check_dimension(q);
  JointConfig out = q;
  for (std::size_t k = 0; k < model.dof(); ++k)
    out[k] = std::clamp(q[k], model.joints()[k].lower, model.joints()[k].upper);
  return out;
}

inline bool within_limits(const HandModel& model, const JointConfig& q) {
  if (static_cast<std::size_t>(q.size()) != model.dof()) return false;
  for (std::size_t k = 0; k < model.dof(); ++k)
    if (!(q[k] >= model.joints()[k].lower && q[k] <= model.joints()[k].upper)) return false;
  return true;
}

}  // namespace handteleop
