// Copyright 2026 The bevintent Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Anchor grid over the stride-8 feature map, IoU-based target assignment
// with force matching, and the per-anchor regression encoding.

#ifndef BEVINTENT_ANCHORS_HPP_
#define BEVINTENT_ANCHORS_HPP_

#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "bevintent/encoder.hpp"
#include "bevintent/geom.hpp"

namespace bevintent::anchors
{

using geom::OrientedBox2D;

inline constexpr int kStride = 8;
inline constexpr int kDefaultFutureSteps = 6;
inline constexpr double kFutureStepSeconds = 0.5;

struct AnchorSpec
{
  /// Square root of every anchor's area.
  double size{3.2};
  /// (r, s) pairs; ratio r:s gives w = size*sqrt(r/s), h = size*sqrt(s/r).
  std::vector<std::pair<double, double>> ratios{{1, 1}, {1, 2}, {2, 1}, {1, 6}, {6, 1}};

  void validate() const;
};

struct AnchorGrid
{
  int rows{0};
  int cols{0};
  int per_cell{0};
  /// Indexed by index(i, j, k), row-major.
  std::vector<OrientedBox2D> boxes;

  std::size_t size() const { return boxes.size(); }
  std::size_t index(int i, int j, int k) const
  {
    return (static_cast<std::size_t>(i) * cols + j) * per_cell + k;
  }
  /// Centre of feature cell (i, j) in the BEV frame.
  geom::Vec2 cell_center(int i, int j) const { return boxes[index(i, j, 0)].center(); }
};

/// Throws ConfigError unless the BEV dimensions are divisible by the stride.
AnchorGrid build_anchor_grid(const encoder::VoxelConfig & cfg, const AnchorSpec & spec);

struct Assignment
{
  /// 1 for positive anchors.
  std::vector<std::uint8_t> q;
  /// Ground-truth index for positives, -1 otherwise.
  std::vector<int> matched;
  /// Best IoU over all ground truths per anchor.
  std::vector<double> best_iou;

  std::size_t positives() const;
};

inline constexpr double kMatchThreshold = 0.5;

Assignment assign_targets(
  const AnchorGrid & grid, std::span<const OrientedBox2D> gt, double threshold = kMatchThreshold);

/// Flat layout: t=0 as (cx, cy, sin, cos, w, h), then (cx, cy, sin, cos) for
/// each future step.
inline constexpr int regression_width(int future_steps) { return 6 + 4 * future_steps; }

struct RegressionTargets
{
  std::vector<double> values;
  /// Per time step (0..T_f): whether the ground truth exists.
  std::vector<std::uint8_t> valid;

  int future_steps() const { return static_cast<int>(valid.size()) - 1; }
};

/// `track[0]` must be present; absent future steps are zero and invalid.
RegressionTargets encode_targets(std::span<const std::optional<OrientedBox2D>> track, const OrientedBox2D & anchor);
RegressionTargets encode_targets(std::span<const OrientedBox2D> track, const OrientedBox2D & anchor);

/// Inverse of `encode_targets`; future boxes reuse the t=0 size. Throws
/// DecodeError when a (sin, cos) pair is degenerate.
std::vector<OrientedBox2D> decode_targets(std::span<const double> values, const OrientedBox2D & anchor);

}  // namespace bevintent::anchors

#endif  // BEVINTENT_ANCHORS_HPP_
