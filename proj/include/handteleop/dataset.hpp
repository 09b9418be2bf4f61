// Copyright 2026 The handteleop Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "handteleop/errors.hpp"
#include "handteleop/image.hpp"
#include "handteleop/rng.hpp"

namespace handteleop {

inline constexpr std::size_t kNumTactileSensors = 8;
inline constexpr std::size_t kArmDof = 6;
inline constexpr std::size_t kHandDof = 7;
inline constexpr std::size_t kRobotDof = kArmDof + kHandDof;
inline constexpr std::size_t kChunkLength = 20;

using RobotJoints = Eigen::Matrix<double, kRobotDof, 1>;
using ActionChunk = Eigen::Matrix<double, kChunkLength, kRobotDof, Eigen::RowMajor>;

struct SampleItem {
  Image8 global_img;
  Image8 wrist_img;
  std::array<Image8, kNumTactileSensors> tactile_imgs;
  RobotJoints joints = RobotJoints::Zero();
};

using SampleBatch = std::vector<SampleItem>;

/// Two 2x2 super-images: sensors 0-3 and 4-7.
inline std::array<Image8, 2> tactile_super_images(const SampleItem& item) {
  const std::span<const Image8> all(item.tactile_imgs);
  return {tile_super_image(all.subspan(0, 4)), tile_super_image(all.subspan(4, 4))};
}

struct DropoutResult {
  SampleBatch batch;
  std::size_t dropped = 0;
};

/// One Bernoulli(p) draw per item, in order; a hit zeroes both camera images.
/// Tactile images and joints are copied through untouched.
inline DropoutResult vision_dropout(const SampleBatch& batch, double p, std::uint64_t seed) {
  if (!(p >= 0.0 && p <= 1.0)) throw ValidationError("dropout probability must lie in [0, 1]");
  Xoshiro256 rng(seed);
  DropoutResult out{batch, 0};
  for (auto& item : out.batch) {
    if (!rng.bernoulli(p)) continue;
    std::fill(item.global_img.pixels().begin(), item.global_img.pixels().end(), std::uint8_t{0});
    std::fill(item.wrist_img.pixels().begin(), item.wrist_img.pixels().end(), std::uint8_t{0});
    ++out.dropped;
  }
  return out;
}

/// Rows start..start+19 of a joint sequence; past the end the last row repeats.
inline ActionChunk action_chunk(std::span<const RobotJoints> sequence, std::size_t start) {
  if (sequence.empty()) throw ValidationError("action chunk needs a non-empty joint sequence");
  if (start >= sequence.size()) throw ValidationError("action chunk start is past the end of the sequence");
  ActionChunk chunk;
  for (std::size_t i = 0; i < kChunkLength; ++i)
    chunk.row(static_cast<Eigen::Index>(i)) = sequence[std::min(start + i, sequence.size() - 1)].transpose();
  return chunk;
}

}  // namespace handteleop
