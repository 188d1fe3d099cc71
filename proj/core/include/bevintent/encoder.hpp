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

// Network inputs: a height x time LiDAR occupancy stack and a 17-channel
// rasterized dynamic map, both in the BEV frame of the current ego pose.

#ifndef BEVINTENT_ENCODER_HPP_
#define BEVINTENT_ENCODER_HPP_

#include <map>
#include <span>
#include <string>

#include "bevintent/geom.hpp"
#include "bevintent/scene.hpp"
#include "bevintent/tensor.hpp"

namespace bevintent::encoder
{

struct VoxelConfig
{
  double length{144.0};  // along x (rows)
  double width{80.0};    // along y (cols)
  double height{5.8};
  double z_min{0.0};
  double dl{0.2};
  double dw{0.2};
  double dh{0.2};
  int t_past{10};

  int rows() const;
  int cols() const;
  int height_bins() const;
  int lidar_channels() const { return height_bins() * t_past; }
  /// BEV grid centered on the ego: origin at (-length/2, -width/2).
  geom::GridSpec grid() const;
  /// Throws ConfigError if extents are not integral multiples of the steps.
  void validate() const;
};

/// Channels-first (H/dH * T_past, L/dL, W/dW), values in {0, 1}.
using LidarTensor = Tensor<std::uint8_t>;
/// (17, L/dL, W/dW), values in {-1, +1}.
using MapTensor = Tensor<std::int8_t>;

inline constexpr int kMapChannels = 17;

enum MapChannel : int {
  kRoad = 0,
  kIntersection,
  kCrossing,
  kBoundaryCrossable,
  kBoundaryNonCrossable,
  kBoundaryConditional,
  kLaneStraight,
  kLaneLeft,
  kLaneRight,
  kBikeLane,
  kBusLane,
  kLightGreen,
  kLightYellow,
  kLightRed,
  kProtected,
  kYield,
  kStop,
};

std::string_view map_channel_name(int channel);

/// Voxelizes the given sweeps (oldest first). Only the newest `t_past` are
/// used; fewer sweeps leave the oldest slabs empty.
LidarTensor voxelize_sweeps(
  std::span<const scene::Sweep> sweeps, const geom::RigidPose & current_ego, const VoxelConfig & cfg);

/// Light states at `frame` after resolving unknown lights that conflict with
/// a currently green protected turn.
std::map<std::string, scene::LightState> infer_unobserved_lights(const scene::MapDocument & map, int frame);

MapTensor rasterize_map(
  const scene::MapDocument & map, int frame, const VoxelConfig & cfg, const geom::RigidPose & ego);

}  // namespace bevintent::encoder

#endif  // BEVINTENT_ENCODER_HPP_
