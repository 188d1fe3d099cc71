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

#include <set>

#include "bevintent/errors.hpp"
#include "bevintent/scene.hpp"

namespace bevintent::scene
{

namespace
{
constexpr std::array<std::string_view, kNumActions> kActionNames{
  "keep_lane", "turn_left", "turn_right", "lane_change_left", "lane_change_right", "stopping_stopped", "parked",
  "other"};
}  // namespace

std::string_view to_string(Action a) { return kActionNames.at(static_cast<std::size_t>(a)); }

std::optional<Action> parse_action(std::string_view s)
{
  for (std::size_t i = 0; i < kActionNames.size(); ++i) {
    if (kActionNames[i] == s) return static_cast<Action>(i);
  }
  return std::nullopt;
}

std::string_view to_string(BoundaryKind k)
{
  switch (k) {
    case BoundaryKind::kCrossable:
      return "crossable";
    case BoundaryKind::kNonCrossable:
      return "non_crossable";
    case BoundaryKind::kConditional:
      return "conditionally_crossable";
  }
  return "?";
}

std::string_view to_string(TurnType t)
{
  switch (t) {
    case TurnType::kStraight:
      return "straight";
    case TurnType::kLeft:
      return "left";
    case TurnType::kRight:
      return "right";
  }
  return "?";
}

std::string_view to_string(LaneClass c)
{
  switch (c) {
    case LaneClass::kVehicle:
      return "vehicle";
    case LaneClass::kBike:
      return "bike";
    case LaneClass::kBus:
      return "bus";
  }
  return "?";
}

std::string_view to_string(LightState s)
{
  switch (s) {
    case LightState::kGreen:
      return "green";
    case LightState::kYellow:
      return "yellow";
    case LightState::kRed:
      return "red";
    case LightState::kUnknown:
      return "unknown";
  }
  return "?";
}

std::string_view to_string(SignKind s) { return s == SignKind::kYield ? "yield" : "stop"; }

const LaneSegment * MapDocument::find_lane(int id) const
{
  for (const auto & l : lanes) {
    if (l.id == id) return &l;
  }
  return nullptr;
}

void validate(const MapDocument & map, int frame_count)
{
  std::set<int> ids;
  for (std::size_t i = 0; i < map.lanes.size(); ++i) {
    const auto & lane = map.lanes[i];
    const std::string where = "map.lanes[" + std::to_string(i) + "]";
    if (!ids.insert(lane.id).second) throw ParseError(where + ".id", "duplicate lane id " + std::to_string(lane.id));
    if (!geom::is_simple(lane.surface)) throw ParseError(where + ".surface", "surface polygon is not simple");
    if (lane.centerline.vertices.size() < 2) throw ParseError(where + ".centerline", "needs at least 2 vertices");
    for (const auto * b : {&lane.left, &lane.right}) {
      if (b->line.vertices.size() < 2 || !(b->line.width > 0.0)) {
        throw ParseError(where + ".boundary", "boundary needs >= 2 vertices and positive width");
      }
    }
    if (lane.control.light_id && lane.control.sign) {
      throw ParseError(where + ".control", "a lane is governed by a light or a sign, not both");
    }
    if (lane.control.light_id && !map.traffic_lights.contains(*lane.control.light_id)) {
      throw ParseError(where + ".control", "unknown traffic light '" + *lane.control.light_id + "'");
    }
  }
  for (const auto & lane : map.lanes) {
    for (int s : lane.successors) {
      if (!ids.contains(s)) {
        throw ParseError("map.lanes", "lane " + std::to_string(lane.id) + " has unknown successor " + std::to_string(s));
      }
    }
  }
  for (std::size_t i = 0; i < map.signs.size(); ++i) {
    const auto * lane = map.find_lane(map.signs[i].lane_id);
    const std::string where = "map.signs[" + std::to_string(i) + "]";
    if (lane == nullptr) throw ParseError(where, "unknown lane " + std::to_string(map.signs[i].lane_id));
    if (lane->control.sign != map.signs[i].kind) throw ParseError(where, "sign disagrees with lane control");
  }
  for (const auto & [id, states] : map.traffic_lights) {
    if (static_cast<int>(states.size()) != frame_count) {
      throw ParseError(
        "map.traffic_lights." + id,
        "timeline has " + std::to_string(states.size()) + " states for " + std::to_string(frame_count) + " frames");
    }
  }
  const auto check_polys = [](const std::vector<Polygon> & polys, const std::string & name) {
    for (std::size_t i = 0; i < polys.size(); ++i) {
      if (!geom::is_simple(polys[i])) {
        throw ParseError("map." + name + "[" + std::to_string(i) + "]", "polygon is not simple");
      }
    }
  };
  check_polys(map.road_polygons, "road_polygons");
  check_polys(map.intersection_polygons, "intersection_polygons");
  check_polys(map.crossing_polygons, "crossing_polygons");
}

}  // namespace bevintent::scene
