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

// Map-grounded action labels. Rule order per frame:
//   slow now      -> parked (slow over the whole window, off lanes),
//                    stopping_stopped (on a lane), else other
//   reversing     -> other
//   crossing into the adjacent lane within the horizon, small heading change
//                 -> lane_change_left / lane_change_right
//   on a turn lane, or large heading change inside an intersection
//                 -> turn_left / turn_right
//   on a lane     -> keep_lane
//   otherwise     -> other

#include <cmath>
#include <limits>

#include "bevintent/errors.hpp"
#include "bevintent/scene.hpp"

namespace bevintent::scene
{

namespace
{

constexpr double kDegToRad = std::numbers::pi / 180.0;

bool same_polyline(const Polyline & a, const Polyline & b)
{
  if (a.vertices.size() != b.vertices.size()) return false;
  for (std::size_t i = 0; i < a.vertices.size(); ++i) {
    if (geom::norm(a.vertices[i] - b.vertices[i]) > 1e-6) return false;
  }
  return true;
}

bool drivable(const LaneSegment & l) { return l.lane_class != LaneClass::kBike; }

/// Direction of travel of the lane centerline nearest to `p`.
double lane_direction_at(const LaneSegment & lane, geom::Vec2 p)
{
  const auto & v = lane.centerline.vertices;
  double best = std::numeric_limits<double>::infinity();
  double dir = 0.0;
  for (std::size_t i = 0; i + 1 < v.size(); ++i) {
    const double d = geom::distance_to_segment(p, v[i], v[i + 1]);
    if (d < best) {
      best = d;
      dir = std::atan2(v[i + 1].y - v[i].y, v[i + 1].x - v[i].x);
    }
  }
  return dir;
}

}  // namespace

LaneIndex::LaneIndex(const MapDocument & map) : map_(&map)
{
  for (std::size_t i = 0; i < map.lanes.size(); ++i) {
    const auto & lane = map.lanes[i];
    by_id_[lane.id] = i;
    std::array<double, 4> bb{1e300, 1e300, -1e300, -1e300};
    for (const auto & p : lane.surface.vertices) {
      bb[0] = std::min(bb[0], p.x);
      bb[1] = std::min(bb[1], p.y);
      bb[2] = std::max(bb[2], p.x);
      bb[3] = std::max(bb[3], p.y);
    }
    bbox_.push_back(bb);
  }
  for (const auto & a : map.lanes) {
    if (!drivable(a)) continue;
    for (const auto & b : map.lanes) {
      if (a.id == b.id || !drivable(b)) continue;
      if (same_polyline(a.left.line, b.right.line)) left_[a.id] = b.id;
      if (same_polyline(a.right.line, b.left.line)) right_[a.id] = b.id;
    }
  }
}

std::vector<int> LaneIndex::lanes_at(geom::Vec2 p) const
{
  std::vector<int> out;
  for (std::size_t i = 0; i < map_->lanes.size(); ++i) {
    const auto & lane = map_->lanes[i];
    if (!drivable(lane)) continue;
    const auto & bb = bbox_[i];
    if (p.x < bb[0] || p.y < bb[1] || p.x > bb[2] || p.y > bb[3]) continue;
    if (geom::contains(lane.surface, p)) out.push_back(lane.id);
  }
  return out;
}

bool LaneIndex::in_intersection(geom::Vec2 p) const
{
  for (const auto & poly : map_->intersection_polygons) {
    if (geom::contains(poly, p)) return true;
  }
  return false;
}

std::optional<int> LaneIndex::left_neighbor(int id) const
{
  const auto it = left_.find(id);
  if (it == left_.end()) return std::nullopt;
  return it->second;
}

std::optional<int> LaneIndex::right_neighbor(int id) const
{
  const auto it = right_.find(id);
  if (it == right_.end()) return std::nullopt;
  return it->second;
}

const LaneSegment & LaneIndex::lane(int id) const
{
  const auto it = by_id_.find(id);
  if (it == by_id_.end()) throw ConfigError("unknown lane id " + std::to_string(id));
  return map_->lanes[it->second];
}

std::vector<Action> label_actions(
  const std::vector<std::optional<OrientedBox2D>> & boxes, const MapDocument & map, int horizon_frames,
  const LabelRules & rules)
{
  const LaneIndex index(map);
  return label_actions(boxes, index, horizon_frames, rules);
}

std::vector<Action> label_actions(
  const std::vector<std::optional<OrientedBox2D>> & boxes, const LaneIndex & lanes, int horizon_frames,
  const LabelRules & rules)
{
  const int n = static_cast<int>(boxes.size());
  std::vector<Action> labels(boxes.size(), Action::kOther);
  if (n == 0) return labels;

  // Finite-difference velocity; central where both neighbours exist.
  std::vector<geom::Vec2> vel(boxes.size());
  std::vector<double> speed(boxes.size(), 0.0);
  for (int t = 0; t < n; ++t) {
    if (!boxes[t]) continue;
    const bool prev = t > 0 && boxes[t - 1];
    const bool next = t + 1 < n && boxes[t + 1];
    geom::Vec2 v{};
    if (prev && next) {
      v = (0.5 / kFrameDt) * (boxes[t + 1]->center() - boxes[t - 1]->center());
    } else if (next) {
      v = (1.0 / kFrameDt) * (boxes[t + 1]->center() - boxes[t]->center());
    } else if (prev) {
      v = (1.0 / kFrameDt) * (boxes[t]->center() - boxes[t - 1]->center());
    }
    vel[t] = v;
    speed[t] = geom::norm(v);
  }

  const double lc_limit = rules.lane_change_heading_deg * kDegToRad;
  const double turn_limit = rules.turn_heading_deg * kDegToRad;

  for (int t = 0; t < n; ++t) {
    if (!boxes[t]) continue;
    const auto & box = *boxes[t];
    const geom::Vec2 p = box.center();
    const auto here = lanes.lanes_at(p);
    const bool on_lane = !here.empty();

    if (speed[t] < rules.stop_speed) {
      bool slow_window = true;
      for (int k = std::max(0, t - horizon_frames); k <= std::min(n - 1, t + horizon_frames); ++k) {
        if (boxes[k] && speed[k] >= rules.stop_speed) {
          slow_window = false;
          break;
        }
      }
      if (slow_window && !on_lane) {
        labels[t] = Action::kParked;
      } else if (on_lane) {
        labels[t] = Action::kStoppingStopped;
      } else {
        labels[t] = Action::kOther;
      }
      continue;
    }

    const geom::Vec2 heading{std::cos(box.phi), std::sin(box.phi)};
    if (geom::dot(vel[t], heading) < 0.0) {
      labels[t] = Action::kOther;
      continue;
    }

    // The lane being travelled is the containing lane best aligned with the
    // heading (connectors overlap inside intersections).
    std::optional<int> current;
    double best = std::numeric_limits<double>::infinity();
    for (int id : here) {
      const double diff = std::abs(geom::normalize_angle(lane_direction_at(lanes.lane(id), p) - box.phi));
      if (diff < best) {
        best = diff;
        current = id;
      }
    }

    if (current) {
      const auto left = lanes.left_neighbor(*current);
      const auto right = lanes.right_neighbor(*current);
      std::optional<Action> change;
      for (int k = 1; k <= horizon_frames && t + k < n && !change; ++k) {
        if (!boxes[t + k]) continue;
        const auto & fut = *boxes[t + k];
        const auto there = lanes.lanes_at(fut.center());
        if (std::find(there.begin(), there.end(), *current) != there.end()) continue;
        if (std::abs(geom::normalize_angle(fut.phi - box.phi)) >= lc_limit) continue;
        if (left && std::find(there.begin(), there.end(), *left) != there.end()) {
          change = Action::kLaneChangeLeft;
        } else if (right && std::find(there.begin(), there.end(), *right) != there.end()) {
          change = Action::kLaneChangeRight;
        }
      }
      if (change) {
        labels[t] = *change;
        continue;
      }
      const auto turn = lanes.lane(*current).turn;
      if (turn == TurnType::kLeft) {
        labels[t] = Action::kTurnLeft;
        continue;
      }
      if (turn == TurnType::kRight) {
        labels[t] = Action::kTurnRight;
        continue;
      }
    }

    if (lanes.in_intersection(p)) {
      double biggest = 0.0;
      for (int k = 1; k <= horizon_frames && t + k < n; ++k) {
        if (!boxes[t + k]) continue;
        const double d = geom::normalize_angle(boxes[t + k]->phi - box.phi);
        if (std::abs(d) > std::abs(biggest)) biggest = d;
      }
      if (std::abs(biggest) >= turn_limit) {
        labels[t] = biggest > 0.0 ? Action::kTurnLeft : Action::kTurnRight;
        continue;
      }
    }

    labels[t] = on_lane ? Action::kKeepLane : Action::kOther;
  }
  return labels;
}

}  // namespace bevintent::scene
