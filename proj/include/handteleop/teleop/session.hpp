// Copyright 2026 The handteleop Authors
// SPDX-License-Identifier: Apache-2.0

// Wire protocol and per-connection session state for the teleop service.
// Nothing here touches sockets; the server feeds parsed JSON in and writes
// whatever comes back.

#pragma once

#include <chrono>
#include <cstdint>
#include <deque>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <utility>

#include <nlohmann/json.hpp>

#include "handteleop/errors.hpp"
#include "handteleop/hand_model.hpp"
#include "handteleop/pose_stream.hpp"
#include "handteleop/retarget.hpp"

namespace handteleop::teleop {

using nlohmann::json;

inline constexpr const char* kProtocolVersion = "1";

inline json pose_to_json(const Pose& p) {
  const Quat& q = p.orientation;
  return {{"p", {p.position.x(), p.position.y(), p.position.z()}}, {"q", {q.w(), q.x(), q.y(), q.z()}}};
}

/// Everything a client needs to draw the hand: joints in Q order with limits,
/// the link tree, task-frame attachments, and the residual pair order.
inline json model_descriptor(const HandModel& m) {
  json joints = json::array();
  for (const auto& j : m.joints())
    joints.push_back({{"name", j.name},
                      {"parent_link", j.parent_link},
                      {"child_link", j.child_link},
                      {"origin", pose_to_json(j.origin)},
                      {"axis", {j.axis.x(), j.axis.y(), j.axis.z()}},
                      {"lower", j.lower},
                      {"upper", j.upper}});
  json links = json::array();
  for (std::size_t l = 0; l < m.links().size(); ++l) {
    json parent = nullptr;
    for (std::size_t k = 0; k < m.dof(); ++k)
      if (m.child_link_index(k) == l) parent = m.joints()[k].parent_link;
    links.push_back({{"name", m.links()[l]}, {"parent", parent}});
  }
  json frames = json::array();
  for (const auto& f : m.frames()) frames.push_back({{"name", f.name}, {"link", f.link}, {"offset", pose_to_json(f.offset)}});
  json pairs = json::array();
  for (auto [i, j] : TsvSet::ordered_pairs()) pairs.push_back({kTaskFrameNames[i], kTaskFrameNames[j]});
  return {{"dof", m.dof()},   {"root_link", m.root_link()}, {"joints", joints},
          {"links", links},   {"frames", frames},           {"residual_pairs", pairs}};
}

/// JSON Schema (draft 2020-12) that model_descriptor output satisfies.
inline json model_descriptor_schema() {
  const json vec3 = {{"type", "array"}, {"items", {{"type", "number"}}}, {"minItems", 3}, {"maxItems", 3}};
  const json quat = {{"type", "array"}, {"items", {{"type", "number"}}}, {"minItems", 4}, {"maxItems", 4}};
  const json pose = {{"type", "object"},
                     {"required", {"p", "q"}},
                     {"additionalProperties", false},
                     {"properties", {{"p", vec3}, {"q", quat}}}};
  const json name = {{"type", "string"}, {"minLength", 1}};
  const json frame_name = {{"enum", {"palm", "thumb_tip", "index_tip", "middle_tip"}}};
  return {
      {"$schema", "https://json-schema.org/draft/2020-12/schema"},
      {"title", "handteleop model descriptor"},
      {"type", "object"},
      {"required", {"dof", "root_link", "joints", "links", "frames", "residual_pairs"}},
      {"additionalProperties", false},
      {"properties",
       {{"dof", {{"type", "integer"}, {"minimum", 0}}},
        {"root_link", name},
        {"joints",
         {{"type", "array"},
          {"items",
           {{"type", "object"},
            {"required", {"name", "parent_link", "child_link", "origin", "axis", "lower", "upper"}},
            {"additionalProperties", false},
            {"properties",
             {{"name", name},
              {"parent_link", name},
              {"child_link", name},
              {"origin", pose},
              {"axis", vec3},
              {"lower", {{"type", "number"}}},
              {"upper", {{"type", "number"}}}}}}}}},
        {"links",
         {{"type", "array"},
          {"minItems", 1},
          {"items",
           {{"type", "object"},
            {"required", {"name", "parent"}},
            {"additionalProperties", false},
            {"properties", {{"name", name}, {"parent", {{"type", {"string", "null"}}}}}}}}}},
        {"frames",
         {{"type", "array"},
          {"minItems", 4},
          {"maxItems", 4},
          {"items",
           {{"type", "object"},
            {"required", {"name", "link", "offset"}},
            {"additionalProperties", false},
            {"properties", {{"name", frame_name}, {"link", name}, {"offset", pose}}}}}}},
        {"residual_pairs",
         {{"type", "array"},
          {"minItems", 12},
          {"maxItems", 12},
          {"items", {{"type", "array"}, {"items", frame_name}, {"minItems", 2}, {"maxItems", 2}}}}}}},
  };
}

inline json params_to_json(const RetargetParams& p) {
  return {{"alpha", p.alpha},       {"human_scale", p.human_scale}, {"max_iters", p.max_iters},
          {"grad_tol", p.grad_tol}, {"step_tol", p.step_tol}};
}

inline json error_message(const std::string& code, const std::string& message, const json& seq = nullptr) {
  return {{"type", "error"}, {"seq", seq}, {"code", code}, {"message", message}};
}

/// Solver state for one connection. Not thread-safe; the server serializes
/// calls per session.
class TeleopSession {
 public:
  using Clock = std::chrono::steady_clock;

  TeleopSession(std::shared_ptr<const HandModel> model, RetargetParams defaults, std::string id)
      : model_(std::move(model)), params_(defaults), id_(std::move(id)), created_at_(Clock::now()),
        last_update_(created_at_) {
    params_.validate();
    q_prev_ = clamp_to_limits(*model_, JointConfig::Zero(static_cast<Eigen::Index>(model_->dof())));
  }

  const std::string& id() const { return id_; }
  const JointConfig& q_prev() const { return q_prev_; }
  const RetargetParams& params() const { return params_; }
  bool greeted() const { return greeted_; }
  Clock::time_point created_at() const { return created_at_; }
  Clock::time_point last_update() const { return last_update_; }

  /// Dispatches one client message and returns the reply (null when none is
  /// due). `dropped` is the number of pose_updates the transport coalesced
  /// away in favor of this one.
  json handle(const json& msg, std::uint64_t dropped = 0) {
    if (!msg.is_object() || !msg.contains("type") || !msg["type"].is_string())
      return error_message("bad_message", "message must be an object with a string 'type'");
    const std::string type = msg["type"].get<std::string>();
    const json seq = msg.contains("seq") ? msg["seq"] : json(nullptr);
    if (type == "hello") return handle_hello(msg);
    if (type == "heartbeat") return nullptr;  // liveness only, no reply
    if (!greeted_) return error_message("no_hello", "send hello first", seq);
    if (type == "pose_update") return handle_pose_update(msg, dropped);
    if (type == "set_params") return handle_set_params(msg);
    return error_message("unknown_type", "unknown message type '" + type + "'", seq);
  }

  json handle_text(std::string_view text, std::uint64_t dropped = 0) {
    json msg;
    try {
      msg = json::parse(text);
    } catch (const json::exception& e) {
      return error_message("bad_json", e.what());
    }
    return handle(msg, dropped);
  }

 private:
  json handle_hello(const json& msg) {
    if (msg.contains("client") && !msg["client"].is_string()) return error_message("bad_hello", "'client' must be a string");
    if (msg.contains("version") && !msg["version"].is_string())
      return error_message("bad_hello", "'version' must be a string");
    greeted_ = true;
    return {{"type", "hello"},
            {"session_id", id_},
            {"protocol_version", kProtocolVersion},
            {"model_descriptor", model_descriptor(*model_)},
            {"defaults", params_to_json(params_)}};
  }

  json handle_pose_update(const json& msg, std::uint64_t dropped) {
    const json seq = msg.contains("seq") ? msg["seq"] : json(nullptr);
    if (!seq.is_number_unsigned()) return error_message("bad_seq", "'seq' must be a non-negative integer", seq);
    const auto s = seq.get<std::uint64_t>();
    if (last_seq_ && s <= *last_seq_) return error_message("stale_seq", "'seq' must increase", seq);
    if (!msg.contains("frames")) return error_message("bad_frames", "missing 'frames'", seq);
    FramePoses poses;
    try {
      poses = frames_from_json(msg["frames"]);
    } catch (const ValidationError& e) {
      return error_message("bad_frames", e.what(), seq);
    }
    const TsvSet h = task_space_vectors(poses);
    const auto start = Clock::now();
    SolveResult res;
    try {
      res = retarget_step(*model_, h, q_prev_, params_);
    } catch (const ValidationError& e) {
      return error_message("solve_failed", e.what(), seq);
    }
    const auto micros = std::chrono::duration_cast<std::chrono::microseconds>(Clock::now() - start).count();
    q_prev_ = res.q;
    last_seq_ = s;
    last_update_ = Clock::now();
    const auto residuals = pair_residual_norms(*model_, res.q, h, params_.human_scale);
    return {{"type", "joint_state"},
            {"seq", s},
            {"q", std::vector<double>(res.q.begin(), res.q.end())},
            {"objective", res.objective},
            {"converged", res.converged},
            {"solve_micros", micros},
            {"residuals", residuals},
            {"dropped", dropped}};
  }

  // All-or-nothing: every field is checked on a copy before anything changes.
  json handle_set_params(const json& msg) {
    const json seq = msg.contains("seq") ? msg["seq"] : json(nullptr);
    RetargetParams next = params_;
    for (const auto& [key, value] : msg.items()) {
      if (key == "type" || key == "seq") continue;
      if (!value.is_number()) return error_message("bad_params", "'" + key + "' must be a number", seq);
      if (key == "alpha") next.alpha = value.get<double>();
      else if (key == "human_scale") next.human_scale = value.get<double>();
      else if (key == "grad_tol") next.grad_tol = value.get<double>();
      else if (key == "step_tol") next.step_tol = value.get<double>();
      else if (key == "max_iters") {
        if (!value.is_number_integer() || value.get<std::int64_t>() < 1 || value.get<std::int64_t>() > 10000)
          return error_message("bad_params", "'max_iters' must be an integer in [1, 10000]", seq);
        next.max_iters = value.get<int>();
      } else {
        return error_message("bad_params", "unknown parameter '" + key + "'", seq);
      }
    }
    try {
      next.validate();
    } catch (const ValidationError& e) {
      return error_message("bad_params", e.what(), seq);
    }
    params_ = next;
    return {{"type", "ack"}, {"seq", seq}, {"params", params_to_json(params_)}};
  }

  std::shared_ptr<const HandModel> model_;
  RetargetParams params_;
  std::string id_;
  JointConfig q_prev_;
  bool greeted_ = false;
  std::optional<std::uint64_t> last_seq_;
  Clock::time_point created_at_;
  Clock::time_point last_update_;
};

/// Per-session inbox. Messages are handled one at a time in arrival order,
/// except that a pose_update waiting behind the running message replaces an
/// earlier waiting pose_update (latest wins) and the replaced count rides on
/// the survivor.
class CoalescingMailbox {
 public:
  struct Item {
    json msg;
    std::uint64_t dropped = 0;
  };

  // Returns true if the caller should handle `msg` now.
  bool offer(json msg) {
    std::lock_guard lock(mu_);
    if (!busy_) {
      busy_ = true;
      return true;
    }
    const bool pose = is_pose_update(msg);
    if (pose && !queue_.empty() && is_pose_update(queue_.back().msg)) {
      queue_.back().msg = std::move(msg);
      ++queue_.back().dropped;
    } else {
      queue_.push_back({std::move(msg), 0});
    }
    return false;
  }

  // Called when the current message is done; returns the next one, or
  // nullopt and goes idle.
  std::optional<Item> finish() {
    std::lock_guard lock(mu_);
    if (queue_.empty()) {
      busy_ = false;
      return std::nullopt;
    }
    Item out = std::move(queue_.front());
    queue_.pop_front();
    return out;
  }

  static bool is_pose_update(const json& msg) {
    return msg.is_object() && msg.contains("type") && msg["type"] == "pose_update";
  }

 private:
  std::mutex mu_;
  bool busy_ = false;
  std::deque<Item> queue_;
};

}  // namespace handteleop::teleop
