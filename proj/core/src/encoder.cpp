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

#include "bevintent/encoder.hpp"

#include <cmath>

#include "bevintent/errors.hpp"

namespace bevintent::encoder
{

namespace
{

using geom::Vec2;
using scene::LightState;

int integral_ratio(double extent, double step, const char * name)
{
  if (!(step > 0.0) || !(extent > 0.0)) throw ConfigError(std::string(name) + ": extent and step must be positive");
  const double q = extent / step;
  const double r = std::round(q);
  if (std::abs(q - r) > 1e-6 * std::max(1.0, r)) {
    throw ConfigError(std::string(name) + ": extent " + std::to_string(extent) + " is not a multiple of " +
                      std::to_string(step));
  }
  return static_cast<int>(r);
}

double orient(Vec2 a, Vec2 b, Vec2 c) { return geom::cross(b - a, c - a); }

/// Point where segments ab and cd cross transversally, if they do.
std::optional<Vec2> proper_crossing(Vec2 a, Vec2 b, Vec2 c, Vec2 d)
{
  const double o1 = orient(a, b, c);
  const double o2 = orient(a, b, d);
  const double o3 = orient(c, d, a);
  const double o4 = orient(c, d, b);
  if (!((o1 > 0 && o2 < 0) || (o1 < 0 && o2 > 0))) return std::nullopt;
  if (!((o3 > 0 && o4 < 0) || (o3 < 0 && o4 > 0))) return std::nullopt;
  const double t = o3 / (o3 - o4);
  return a + t * (b - a);
}

/// Surfaces overlap somewhere inside an intersection polygon. Lanes that
/// merely share an edge do not conflict.
bool conflict_in_intersection(const scene::LaneSegment & a, const scene::LaneSegment & b, const scene::MapDocument & map)
{
  const auto & va = a.surface.vertices;
  const auto & vb = b.surface.vertices;
  for (std::size_t i = 0; i < va.size(); ++i) {
    for (std::size_t j = 0; j < vb.size(); ++j) {
      const auto x = proper_crossing(va[i], va[(i + 1) % va.size()], vb[j], vb[(j + 1) % vb.size()]);
      if (!x) continue;
      for (const auto & poly : map.intersection_polygons) {
        if (geom::contains(poly, *x)) return true;
      }
    }
  }
  return false;
}

int severity(LightState s)
{
  switch (s) {
    case LightState::kGreen:
      return 1;
    case LightState::kYellow:
      return 2;
    case LightState::kRed:
      return 3;
    case LightState::kUnknown:
      break;
  }
  return 0;
}

geom::Polygon to_ego(const geom::Polygon & p, const geom::RigidPose & ego)
{
  geom::Polygon out;
  out.vertices.reserve(p.vertices.size());
  for (const auto & v : p.vertices) out.vertices.push_back(geom::transform_point2(v, geom::RigidPose{}, ego));
  return out;
}

geom::Polyline to_ego(const geom::Polyline & l, const geom::RigidPose & ego)
{
  geom::Polyline out;
  out.width = l.width;
  out.vertices.reserve(l.vertices.size());
  for (const auto & v : l.vertices) out.vertices.push_back(geom::transform_point2(v, geom::RigidPose{}, ego));
  return out;
}

}  // namespace

int VoxelConfig::rows() const { return integral_ratio(length, dl, "voxel length"); }
int VoxelConfig::cols() const { return integral_ratio(width, dw, "voxel width"); }
int VoxelConfig::height_bins() const { return integral_ratio(height, dh, "voxel height"); }

geom::GridSpec VoxelConfig::grid() const { return {{-0.5 * length, -0.5 * width}, dl, rows(), cols()}; }

void VoxelConfig::validate() const
{
  (void)rows();
  (void)cols();
  (void)height_bins();
  if (t_past < 1) throw ConfigError("voxel t_past must be >= 1");
  if (std::abs(dl - dw) > 1e-12) throw ConfigError("voxel dl and dw must be equal (square BEV cells)");
}

std::string_view map_channel_name(int channel)
{
  static constexpr std::array<std::string_view, kMapChannels> kNames{
    "road",          "intersection",   "crossing",    "boundary_crossable", "boundary_non_crossable",
    "boundary_conditional", "lane_straight", "lane_left", "lane_right", "bike_lane",
    "bus_lane",      "light_green",    "light_yellow", "light_red",         "protected",
    "yield",         "stop"};
  return kNames.at(static_cast<std::size_t>(channel));
}

LidarTensor voxelize_sweeps(
  std::span<const scene::Sweep> sweeps, const geom::RigidPose & current_ego, const VoxelConfig & cfg)
{
  cfg.validate();
  const int rows = cfg.rows();
  const int cols = cfg.cols();
  const int hb = cfg.height_bins();
  LidarTensor out({hb * cfg.t_past, rows, cols}, 0);

  const double x0 = -0.5 * cfg.length;
  const double y0 = -0.5 * cfg.width;
  const double x1 = 0.5 * cfg.length;
  const double y1 = 0.5 * cfg.width;
  const double z1 = cfg.z_min + cfg.height;

  const std::size_t n = std::min<std::size_t>(sweeps.size(), static_cast<std::size_t>(cfg.t_past));
  const auto used = sweeps.subspan(sweeps.size() - n);
  for (std::size_t i = 0; i < n; ++i) {
    const int t_index = cfg.t_past - static_cast<int>(n) + static_cast<int>(i);
    const auto & sw = used[i];
    const auto pts = sw.ego_pose == current_ego ? sw.points
                                                : geom::transform_points(sw.points, sw.ego_pose, current_ego);
    for (const auto & p : pts) {
      if (p.x < x0 || p.x >= x1 || p.y < y0 || p.y >= y1 || p.z < cfg.z_min || p.z >= z1) continue;
      const int r = std::min(rows - 1, static_cast<int>(std::floor((p.x - x0) / cfg.dl)));
      const int c = std::min(cols - 1, static_cast<int>(std::floor((p.y - y0) / cfg.dw)));
      const int h = std::min(hb - 1, static_cast<int>(std::floor((p.z - cfg.z_min) / cfg.dh)));
      out.at(t_index * hb + h, r, c) = 1;
    }
  }
  return out;
}

std::map<std::string, LightState> infer_unobserved_lights(const scene::MapDocument & map, int frame)
{
  std::map<std::string, LightState> states;
  for (const auto & [id, timeline] : map.traffic_lights) {
    if (frame < 0 || frame >= static_cast<int>(timeline.size())) {
      throw ConfigError("frame " + std::to_string(frame) + " outside light timeline of '" + id + "'");
    }
    states[id] = timeline[static_cast<std::size_t>(frame)];
  }
  const auto state_of = [&](const scene::LaneSegment & l) -> std::optional<LightState> {
    if (!l.control.light_id) return std::nullopt;
    const auto it = states.find(*l.control.light_id);
    if (it == states.end()) return std::nullopt;
    return it->second;
  };

  bool changed = true;
  while (changed) {
    changed = false;
    for (const auto & a : map.lanes) {
      if (a.turn != scene::TurnType::kStraight || state_of(a) != LightState::kUnknown) continue;
      for (const auto & b : map.lanes) {
        if (!b.is_protected || b.turn == scene::TurnType::kStraight || state_of(b) != LightState::kGreen) continue;
        if (conflict_in_intersection(a, b, map)) {
          states[*a.control.light_id] = LightState::kRed;
          changed = true;
          break;
        }
      }
    }
  }
  return states;
}

MapTensor rasterize_map(
  const scene::MapDocument & map, int frame, const VoxelConfig & cfg, const geom::RigidPose & ego)
{
  cfg.validate();
  const auto grid = cfg.grid();
  MapTensor out({kMapChannels, grid.rows, grid.cols}, -1);
  const auto fill_polygon = [&](int ch, const geom::Polygon & world) {
    geom::for_each_polygon_cell(to_ego(world, ego), grid, [&](int r, int c) { out.at(ch, r, c) = 1; });
  };
  const auto fill_polyline = [&](int ch, const geom::Polyline & world) {
    geom::for_each_polyline_cell(to_ego(world, ego), grid, [&](int r, int c) { out.at(ch, r, c) = 1; });
  };

  for (const auto & p : map.road_polygons) fill_polygon(kRoad, p);
  for (const auto & p : map.intersection_polygons) fill_polygon(kIntersection, p);
  for (const auto & p : map.crossing_polygons) fill_polygon(kCrossing, p);

  std::vector<std::uint8_t> light(static_cast<std::size_t>(grid.rows) * grid.cols, 0);
  const auto lights = map.traffic_lights.empty() ? std::map<std::string, LightState>{}
                                                 : infer_unobserved_lights(map, frame);
  for (const auto & lane : map.lanes) {
    for (const auto * b : {&lane.left, &lane.right}) {
      const int ch = b->kind == scene::BoundaryKind::kCrossable      ? kBoundaryCrossable
                     : b->kind == scene::BoundaryKind::kNonCrossable ? kBoundaryNonCrossable
                                                                      : kBoundaryConditional;
      fill_polyline(ch, b->line);
    }

    // Collect the surface channels this lane asserts, then rasterize once.
    std::vector<int> channels;
    if (lane.lane_class == scene::LaneClass::kBike) {
      channels.push_back(kBikeLane);
    } else {
      channels.push_back(
        lane.turn == scene::TurnType::kLeft    ? kLaneLeft
        : lane.turn == scene::TurnType::kRight ? kLaneRight
                                               : kLaneStraight);
      if (lane.lane_class == scene::LaneClass::kBus) channels.push_back(kBusLane);
    }
    if (lane.control.light_id) {
      const auto it = lights.find(*lane.control.light_id);
      const auto state = it == lights.end() ? LightState::kUnknown : it->second;
      if (state != LightState::kUnknown) {
        const auto sev = static_cast<std::uint8_t>(severity(state));
        geom::for_each_polygon_cell(to_ego(lane.surface, ego), grid, [&](int r, int c) {
          auto & cell = light[static_cast<std::size_t>(r) * grid.cols + c];
          cell = std::max(cell, sev);
        });
      }
      if (lane.is_protected && state == LightState::kGreen) channels.push_back(kProtected);
    }
    if (lane.control.sign == scene::SignKind::kYield) channels.push_back(kYield);
    if (lane.control.sign == scene::SignKind::kStop) channels.push_back(kStop);

    geom::for_each_polygon_cell(to_ego(lane.surface, ego), grid, [&](int r, int c) {
      for (int ch : channels) out.at(ch, r, c) = 1;
    });
  }
  // Where lanes under different lights overlap, the most restrictive wins so
  // the three light channels stay exclusive.
  for (int r = 0; r < grid.rows; ++r) {
    for (int c = 0; c < grid.cols; ++c) {
      const auto sev = light[static_cast<std::size_t>(r) * grid.cols + c];
      if (sev == 1) out.at(kLightGreen, r, c) = 1;
      if (sev == 2) out.at(kLightYellow, r, c) = 1;
      if (sev == 3) out.at(kLightRed, r, c) = 1;
    }
  }
  return out;
}

}  // namespace bevintent::encoder
