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

// Static SVG rendering of one frame. Ego x points up, ego y points left.

#include <cmath>
#include <cstdio>
#include <numbers>
#include <string>

#include "bevintent/cli/commands.hpp"
#include "bevintent/errors.hpp"

namespace bevintent::cli
{

namespace
{

using geom::Vec2;

class Canvas
{
public:
  Canvas(const encoder::VoxelConfig & v, double scale) : length_(v.length), width_(v.width), scale_(scale) {}

  double u(Vec2 p) const { return (width_ / 2.0 - p.y) * scale_; }
  double v(Vec2 p) const { return (length_ / 2.0 - p.x) * scale_; }
  double pixels_wide() const { return width_ * scale_; }
  double pixels_high() const { return length_ * scale_; }

  std::string point(Vec2 p) const { return num(u(p)) + "," + num(v(p)); }

  std::string points(const std::vector<Vec2> & pts) const
  {
    std::string out;
    for (const auto & p : pts) {
      if (!out.empty()) out += ' ';
      out += point(p);
    }
    return out;
  }

  static std::string num(double x)
  {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", x);
    std::string s = buf;
    return s == "-0.00" ? "0.00" : s;
  }

private:
  double length_;
  double width_;
  double scale_;
};

std::vector<Vec2> to_ego(const std::vector<Vec2> & pts, const geom::RigidPose & ego)
{
  std::vector<Vec2> out;
  out.reserve(pts.size());
  for (const auto & p : pts) out.push_back(geom::transform_point2(p, geom::RigidPose{}, ego));
  return out;
}

std::vector<Vec2> corners(const geom::OrientedBox2D & b)
{
  const auto c = b.corners();
  return {c.begin(), c.end()};
}

std::string_view light_color(scene::LightState s)
{
  switch (s) {
    case scene::LightState::kGreen: return "#3c3";
    case scene::LightState::kYellow: return "#ec3";
    case scene::LightState::kRed: return "#e33";
    case scene::LightState::kUnknown: break;
  }
  return "#888";
}

std::string_view intent_color(int a)
{
  static constexpr std::string_view kColors[scene::kNumActions] = {
    "#4af", "#f80", "#fd0", "#a6f", "#f4c", "#f33", "#999", "#6c6"};
  return kColors[a];
}

}  // namespace

double intent_glyph_angle(scene::Action a)
{
  constexpr double q = std::numbers::pi / 4.0;
  switch (a) {
    case scene::Action::kKeepLane: return 0.0;
    case scene::Action::kLaneChangeLeft: return q;
    case scene::Action::kTurnLeft: return 2.0 * q;
    case scene::Action::kParked: return 3.0 * q;
    case scene::Action::kStoppingStopped: return 4.0 * q;
    case scene::Action::kOther: return -3.0 * q;
    case scene::Action::kTurnRight: return -2.0 * q;
    case scene::Action::kLaneChangeRight: return -q;
  }
  return 0.0;
}

std::string render_svg(
  const scene::Scenario & s, const infer::FramePredictions * predictions, int frame,
  const encoder::VoxelConfig & voxel, const SvgStyle & style)
{
  if (frame < 0 || frame >= s.frame_count()) {
    throw ConfigError(
      "frame " + std::to_string(frame) + " out of range; valid frames are 0.." + std::to_string(s.frame_count() - 1));
  }
  const Canvas cv(voxel, style.scale);
  const auto & sweep = s.sweeps[static_cast<std::size_t>(frame)];
  const auto & ego = sweep.ego_pose;
  using N = Canvas;

  std::string out;
  out += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + N::num(cv.pixels_wide()) + "\" height=\"" +
         N::num(cv.pixels_high()) + "\" viewBox=\"0 0 " + N::num(cv.pixels_wide()) + " " + N::num(cv.pixels_high()) +
         "\">\n";
  out += "<rect width=\"100%\" height=\"100%\" fill=\"#111\"/>\n";

  out += "<g id=\"map\">\n";
  for (const auto & p : s.map.road_polygons) {
    out += "<polygon class=\"road\" fill=\"#333\" points=\"" + cv.points(to_ego(p.vertices, ego)) + "\"/>\n";
  }
  for (const auto & p : s.map.intersection_polygons) {
    out += "<polygon class=\"intersection\" fill=\"#3a3a48\" points=\"" + cv.points(to_ego(p.vertices, ego)) + "\"/>\n";
  }
  for (const auto & p : s.map.crossing_polygons) {
    out += "<polygon class=\"crossing\" fill=\"#4a4a4a\" points=\"" + cv.points(to_ego(p.vertices, ego)) + "\"/>\n";
  }
  for (const auto & lane : s.map.lanes) {
    std::string_view color = "#666";
    if (lane.control.light_id) {
      const auto it = s.map.traffic_lights.find(*lane.control.light_id);
      if (it != s.map.traffic_lights.end() && static_cast<std::size_t>(frame) < it->second.size()) {
        color = light_color(it->second[static_cast<std::size_t>(frame)]);
      }
    }
    out += "<polyline class=\"lane\" fill=\"none\" stroke=\"" + std::string(color) +
           "\" stroke-width=\"1\" points=\"" + cv.points(to_ego(lane.centerline.vertices, ego)) + "\"/>\n";
  }
  out += "</g>\n";

  out += "<g id=\"lidar\" fill=\"#7cf\">\n";
  const int stride = std::max(1, style.point_stride);
  for (std::size_t i = 0; i < sweep.points.size(); i += static_cast<std::size_t>(stride)) {
    const Vec2 p{sweep.points[i].x, sweep.points[i].y};
    if (std::abs(p.x) > voxel.length / 2.0 || std::abs(p.y) > voxel.width / 2.0) continue;
    out += "<circle cx=\"" + N::num(cv.u(p)) + "\" cy=\"" + N::num(cv.v(p)) + "\" r=\"0.8\"/>\n";
  }
  out += "</g>\n";

  out += "<g id=\"ground_truth\" fill=\"none\" stroke-width=\"1.5\">\n";
  for (const auto & t : s.tracks) {
    const auto & af = t.frames[static_cast<std::size_t>(frame)];
    if (!af.present) continue;
    const auto box = geom::transform_box(af.box, geom::RigidPose{}, ego);
    const bool seen = af.lidar_point_count > 0;
    out += "<polygon class=\"" + std::string(seen ? "gt" : "gt-unseen") + "\" stroke=\"" +
           (seen ? "#fff" : "#777") + "\" data-id=\"" + std::to_string(t.id) + "\" points=\"" +
           cv.points(corners(box)) + "\"/>\n";
  }
  out += "</g>\n";

  if (predictions) {
    out += "<g id=\"predictions\" fill=\"none\">\n";
    for (std::size_t i = 0; i < predictions->detections.size(); ++i) {
      const auto & d = predictions->detections[i];
      const std::string track = i < predictions->track_ids.size() ? std::to_string(predictions->track_ids[i]) : "-1";
      out += "<polygon class=\"detection\" stroke=\"#f5a\" stroke-width=\"1.5\" data-track=\"" + track +
             "\" data-score=\"" + N::num(d.score) + "\" points=\"" + cv.points(corners(d.box)) + "\"/>\n";
      if (!d.waypoints.empty()) {
        std::vector<Vec2> trail{{d.box.cx, d.box.cy}};
        for (const auto & w : d.waypoints) trail.push_back({w.cx, w.cy});
        out += "<polyline class=\"trail\" stroke=\"#fa5\" stroke-width=\"1\" points=\"" + cv.points(trail) + "\"/>\n";
        for (std::size_t k = 1; k < trail.size(); ++k) {
          out += "<circle class=\"waypoint\" fill=\"#fa5\" r=\"1.5\" cx=\"" + N::num(cv.u(trail[k])) + "\" cy=\"" +
                 N::num(cv.v(trail[k])) + "\"/>\n";
        }
      }
      const Vec2 c{d.box.cx, d.box.cy};
      for (int a = 0; a < scene::kNumActions; ++a) {
        const double p = d.intent[static_cast<std::size_t>(a)];
        if (!(p > 0.0)) continue;
        const double dir = d.box.phi + intent_glyph_angle(static_cast<scene::Action>(a));
        const double len = p * style.arrow_length;
        const Vec2 tip{c.x + len * std::cos(dir), c.y + len * std::sin(dir)};
        out += "<line class=\"intent\" data-action=\"" + std::string(scene::to_string(static_cast<scene::Action>(a))) +
               "\" stroke=\"" + std::string(intent_color(a)) + "\" stroke-width=\"1.5\" x1=\"" + N::num(cv.u(c)) +
               "\" y1=\"" + N::num(cv.v(c)) + "\" x2=\"" + N::num(cv.u(tip)) + "\" y2=\"" + N::num(cv.v(tip)) +
               "\"/>\n";
      }
    }
    out += "</g>\n";
  }
  out += "</svg>\n";
  return out;
}

}  // namespace bevintent::cli
