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

// Synthetic four-way intersection world. Every arm carries two lanes per
// direction (the inner incoming lane is a dedicated left-turn lane), an
// optional bike lane and a parking strip. Actors follow lane routes with
// scripted speed profiles; labels come from `label_actions`, never from the
// script itself.

#include <cmath>
#include <numeric>
#include <random>

#include "bevintent/errors.hpp"
#include "bevintent/kvfile.hpp"
#include "bevintent/scene.hpp"

namespace bevintent::scene
{

namespace
{

using geom::Vec2;
constexpr double kPi = std::numbers::pi;
constexpr int kArms = 4;
constexpr double kCrosswalk = 3.0;
constexpr double kMaxCapacity = 64;
constexpr int kProposalsPerAttempt = 50;

// Lane id scheme.
int incoming_inner(int arm) { return arm * 10 + 0; }
int incoming_outer(int arm) { return arm * 10 + 1; }
int outgoing_inner(int arm) { return arm * 10 + 2; }
int outgoing_outer(int arm) { return arm * 10 + 3; }
int bike_in(int arm) { return arm * 10 + 4; }
int bike_out(int arm) { return arm * 10 + 5; }
int connector_left(int arm) { return 100 + arm * 10 + 0; }
int connector_straight(int arm) { return 100 + arm * 10 + 1; }
int connector_right(int arm) { return 100 + arm * 10 + 2; }

struct ArmFrame
{
  Vec2 u;  // outward
  Vec2 n;  // left of outward
  Vec2 at(double s, double d) const { return s * u + d * n; }
};

ArmFrame arm_frame(int arm)
{
  // Exact axis vectors keep the map free of 1e-17 noise.
  const std::array<Vec2, 4> axes{Vec2{1, 0}, Vec2{0, 1}, Vec2{-1, 0}, Vec2{0, -1}};
  const Vec2 u = axes[arm % 4];
  return {u, {-u.y, u.x}};
}

Polygon rect(const ArmFrame & f, double s0, double s1, double d0, double d1)
{
  return geom::normalized(Polygon{{f.at(s0, d0), f.at(s1, d0), f.at(s1, d1), f.at(s0, d1)}});
}

Polyline line(Vec2 a, Vec2 b, double width) { return Polyline{{a, b}, width}; }

struct Layout
{
  MapDocument map;
  double lane_width{3.5};
  double half{10.0};  // intersection half size
  double park_offset{0.0};
  bool signalized{false};
  std::array<bool, kArms> bike{};
  /// True light states per frame (the map copy may contain unknowns).
  std::map<std::string, std::vector<LightState>> truth;
};

// Light cycle (seconds): straight+right for arms {0,2}, then protected lefts
// for {0,2}, then the same for {1,3}. Each green is followed by yellow.
constexpr double kStraightGreen = 12.0;
constexpr double kLeftGreen = 6.0;
constexpr double kYellow = 2.0;
constexpr double kCycle = 2.0 * (kStraightGreen + kYellow + kLeftGreen + kYellow);

LightState light_at(bool left, int arm, double t)
{
  const double c = std::fmod(t, kCycle);
  const int group = arm % 2;
  const double group_start = group * (kCycle / 2.0);
  double local = c - group_start;
  if (local < 0.0 || local >= kCycle / 2.0) return LightState::kRed;
  if (!left) {
    if (local < kStraightGreen) return LightState::kGreen;
    if (local < kStraightGreen + kYellow) return LightState::kYellow;
    return LightState::kRed;
  }
  local -= kStraightGreen + kYellow;
  if (local < 0.0) return LightState::kRed;
  if (local < kLeftGreen) return LightState::kGreen;
  if (local < kLeftGreen + kYellow) return LightState::kYellow;
  return LightState::kRed;
}

std::string light_id(bool left, int arm) { return (left ? "L" : "S") + std::to_string(arm); }

/// Cubic Bezier approximating the corner between two headings.
std::vector<Vec2> corner_curve(Vec2 p0, Vec2 h0, Vec2 p1, Vec2 h1, int segments)
{
  // Intersection of p0 + a*h0 and p1 - b*h1.
  const double den = geom::cross(h0, h1);
  double a = 0.5 * geom::norm(p1 - p0);
  double b = a;
  if (std::abs(den) > 1e-9) {
    a = geom::cross(p1 - p0, h1) / den;
    b = -geom::cross(p1 - p0, h0) / den;
  }
  constexpr double kArc = 0.5523;
  const Vec2 c0 = p0 + (kArc * a) * h0;
  const Vec2 c1 = p1 - (kArc * b) * h1;
  std::vector<Vec2> pts;
  for (int i = 0; i <= segments; ++i) {
    const double t = static_cast<double>(i) / segments;
    const double s = 1.0 - t;
    pts.push_back(
      (s * s * s) * p0 + (3.0 * s * s * t) * c0 + (3.0 * s * t * t) * c1 + (t * t * t) * p1);
  }
  return pts;
}

std::vector<Vec2> offset_polyline(const std::vector<Vec2> & pts, double d)
{
  std::vector<Vec2> out;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const Vec2 a = pts[i == 0 ? 0 : i - 1];
    const Vec2 b = pts[i + 1 < pts.size() ? i + 1 : i];
    const Vec2 t = b - a;
    const double len = geom::norm(t);
    const Vec2 nrm{-t.y / len, t.x / len};
    out.push_back(pts[i] + d * nrm);
  }
  return out;
}

LaneSegment straight_lane(
  int id, const ArmFrame & f, bool inward, double s0, double s1, double d_lo, double d_hi, BoundaryKind lo_kind,
  BoundaryKind hi_kind, double bw)
{
  LaneSegment l;
  l.id = id;
  const double dc = 0.5 * (d_lo + d_hi);
  // Direction of travel: inward (toward the center) or outward.
  const double sa = inward ? s1 : s0;
  const double sb = inward ? s0 : s1;
  l.centerline = line(f.at(sa, dc), f.at(sb, dc), bw);
  // Facing inward the left side is toward smaller d; facing outward larger d.
  const Boundary lo{line(f.at(sa, d_lo), f.at(sb, d_lo), bw), lo_kind};
  const Boundary hi{line(f.at(sa, d_hi), f.at(sb, d_hi), bw), hi_kind};
  l.left = inward ? lo : hi;
  l.right = inward ? hi : lo;
  l.surface = rect(f, s0, s1, d_lo, d_hi);
  return l;
}

LaneSegment connector(int id, const std::vector<Vec2> & center, double lw, double bw, TurnType turn)
{
  LaneSegment l;
  l.id = id;
  l.turn = turn;
  l.centerline = Polyline{center, bw};
  const auto left = offset_polyline(center, 0.5 * lw);
  const auto right = offset_polyline(center, -0.5 * lw);
  l.left = {Polyline{left, bw}, BoundaryKind::kCrossable};
  l.right = {Polyline{right, bw}, BoundaryKind::kCrossable};
  Polygon surf;
  surf.vertices = left;
  surf.vertices.insert(surf.vertices.end(), right.rbegin(), right.rend());
  l.surface = geom::normalized(surf);
  return l;
}

Layout make_layout(const GeneratorConfig & cfg, std::mt19937_64 & rng, int frames)
{
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  Layout lay;
  const double lw = cfg.lane_width;
  const double bw = cfg.boundary_width;
  const double bike_w = cfg.bike_lane_width;
  lay.lane_width = lw;
  lay.half = 2.0 * lw + bike_w + cfg.parking_width;
  lay.park_offset = 2.0 * lw + bike_w + 0.5 * cfg.parking_width;
  const double R = lay.half;
  const double L = cfg.arm_length;
  lay.signalized = u01(rng) < cfg.signal_prob;
  for (int a = 0; a < kArms; ++a) lay.bike[a] = u01(rng) < cfg.bike_lane_prob;
  const double phase = u01(rng) * kCycle;

  auto & map = lay.map;
  map.intersection_polygons.push_back(geom::normalized(Polygon{{{-R, -R}, {R, -R}, {R, R}, {-R, R}}}));
  map.road_polygons.push_back(map.intersection_polygons.back());

  for (int a = 0; a < kArms; ++a) {
    const ArmFrame f = arm_frame(a);
    map.road_polygons.push_back(rect(f, R, R + L, -R, R));
    map.crossing_polygons.push_back(rect(f, R + 0.5, R + 0.5 + kCrosswalk, -2.0 * lw, 2.0 * lw));

    auto in_inner = straight_lane(
      incoming_inner(a), f, true, R, R + L, 0.0, lw, BoundaryKind::kNonCrossable, BoundaryKind::kCrossable, bw);
    in_inner.turn = TurnType::kLeft;
    in_inner.successors = {connector_left(a)};
    auto in_outer = straight_lane(
      incoming_outer(a), f, true, R, R + L, lw, 2 * lw, BoundaryKind::kCrossable, BoundaryKind::kConditional, bw);
    in_outer.successors = {connector_straight(a), connector_right(a)};
    auto out_inner = straight_lane(
      outgoing_inner(a), f, false, R, R + L, -lw, 0.0, BoundaryKind::kCrossable, BoundaryKind::kNonCrossable, bw);
    auto out_outer = straight_lane(
      outgoing_outer(a), f, false, R, R + L, -2 * lw, -lw, BoundaryKind::kConditional, BoundaryKind::kCrossable, bw);
    map.lanes.push_back(in_inner);
    map.lanes.push_back(in_outer);
    map.lanes.push_back(out_inner);
    map.lanes.push_back(out_outer);
    if (lay.bike[a]) {
      auto bi = straight_lane(
        bike_in(a), f, true, R, R + L, 2 * lw, 2 * lw + bike_w, BoundaryKind::kConditional,
        BoundaryKind::kConditional, bw);
      bi.lane_class = LaneClass::kBike;
      auto bo = straight_lane(
        bike_out(a), f, false, R, R + L, -2 * lw - bike_w, -2 * lw, BoundaryKind::kConditional,
        BoundaryKind::kConditional, bw);
      bo.lane_class = LaneClass::kBike;
      map.lanes.push_back(bi);
      map.lanes.push_back(bo);
    }
  }

  // Connectors through the intersection.
  for (int a = 0; a < kArms; ++a) {
    const ArmFrame fa = arm_frame(a);
    const Vec2 h_in = -1.0 * fa.u;
    {
      const int b = (a + 3) % kArms;
      const ArmFrame fb = arm_frame(b);
      auto c = connector(
        connector_left(a), corner_curve(fa.at(R, 0.5 * lw), h_in, fb.at(R, -0.5 * lw), fb.u, 16), lw, bw,
        TurnType::kLeft);
      c.successors = {outgoing_inner(b)};
      c.is_protected = lay.signalized;
      if (lay.signalized) {
        c.control.light_id = light_id(true, a);
      } else {
        c.control.sign = SignKind::kStop;
      }
      map.lanes.push_back(c);
    }
    {
      const int b = (a + 2) % kArms;
      const ArmFrame fb = arm_frame(b);
      auto c = connector(
        connector_straight(a), {fa.at(R, 1.5 * lw), fb.at(R, -1.5 * lw)}, lw, bw, TurnType::kStraight);
      c.successors = {outgoing_outer(b)};
      if (lay.signalized) {
        c.control.light_id = light_id(false, a);
      } else {
        c.control.sign = SignKind::kStop;
      }
      map.lanes.push_back(c);
    }
    {
      const int b = (a + 1) % kArms;
      const ArmFrame fb = arm_frame(b);
      auto c = connector(
        connector_right(a), corner_curve(fa.at(R, 1.5 * lw), h_in, fb.at(R, -1.5 * lw), fb.u, 12), lw, bw,
        TurnType::kRight);
      c.successors = {outgoing_outer(b)};
      c.control.sign = lay.signalized ? SignKind::kYield : SignKind::kStop;
      map.lanes.push_back(c);
    }
  }
  for (const auto & l : map.lanes) {
    if (l.control.sign) map.signs.push_back({l.id, *l.control.sign});
  }

  if (lay.signalized) {
    for (int a = 0; a < kArms; ++a) {
      for (bool left : {false, true}) {
        std::vector<LightState> states(static_cast<std::size_t>(frames));
        for (int t = 0; t < frames; ++t) states[t] = light_at(left, a, phase + t * kFrameDt);
        lay.truth[light_id(left, a)] = states;
        if (u01(rng) < cfg.unknown_light_prob) std::fill(states.begin(), states.end(), LightState::kUnknown);
        map.traffic_lights[light_id(left, a)] = states;
      }
    }
  }
  return lay;
}

// --- Paths -----------------------------------------------------------------

/// Arc-length parametrized polyline with an optional lateral lane change.
class Path
{
public:
  explicit Path(std::vector<Vec2> pts)
  {
    for (const auto & p : pts) {
      if (pts_.empty() || geom::norm(p - pts_.back()) > 1e-9) pts_.push_back(p);
    }
    cum_.push_back(0.0);
    for (std::size_t i = 1; i < pts_.size(); ++i) cum_.push_back(cum_.back() + geom::norm(pts_[i] - pts_[i - 1]));
  }

  double length() const { return cum_.back(); }

  void set_lane_change(double start, double length, double offset)
  {
    lc_start_ = start;
    lc_length_ = length;
    lc_offset_ = offset;
  }

  /// Pose at arc length s: center and heading.
  std::pair<Vec2, double> at(double s) const
  {
    const auto it = std::upper_bound(cum_.begin(), cum_.end(), s);
    std::size_t i = it == cum_.begin() ? 0 : static_cast<std::size_t>(it - cum_.begin()) - 1;
    i = std::min(i, pts_.size() - 2);
    const double seg = cum_[i + 1] - cum_[i];
    const double t = (s - cum_[i]) / seg;
    const Vec2 dir = (1.0 / seg) * (pts_[i + 1] - pts_[i]);
    const Vec2 nrm{-dir.y, dir.x};
    Vec2 p = pts_[i] + (t * seg) * dir;
    double lateral = 0.0;
    double slope = 0.0;
    if (lc_length_ > 0.0 && s > lc_start_) {
      const double x = std::min(1.0, (s - lc_start_) / lc_length_);
      lateral = lc_offset_ * (3.0 * x * x - 2.0 * x * x * x);
      if (x < 1.0) slope = lc_offset_ * (6.0 * x - 6.0 * x * x) / lc_length_;
    }
    p = p + lateral * nrm;
    const Vec2 tangent = dir + slope * nrm;
    return {p, std::atan2(tangent.y, tangent.x)};
  }

  /// Arc length of the point of the polyline closest to `q`.
  double project(Vec2 q) const
  {
    double best = 1e300, arc = 0.0;
    for (std::size_t i = 0; i + 1 < pts_.size(); ++i) {
      const Vec2 ab = pts_[i + 1] - pts_[i];
      const double len2 = geom::dot(ab, ab);
      const double t = std::clamp(geom::dot(q - pts_[i], ab) / len2, 0.0, 1.0);
      const double d = geom::norm(q - (pts_[i] + t * ab));
      if (d < best) {
        best = d;
        arc = cum_[i] + t * std::sqrt(len2);
      }
    }
    return arc;
  }

private:
  std::vector<Vec2> pts_;
  std::vector<double> cum_;
  double lc_start_{0.0};
  double lc_length_{0.0};
  double lc_offset_{0.0};
};

Path route(const MapDocument & map, std::initializer_list<int> lane_ids)
{
  std::vector<Vec2> pts;
  for (int id : lane_ids) {
    const auto * l = map.find_lane(id);
    pts.insert(pts.end(), l->centerline.vertices.begin(), l->centerline.vertices.end());
  }
  return Path(std::move(pts));
}

/// Speed profile: constant speed, or constant deceleration to a stop.
struct Motion
{
  double s0{0.0};
  double v0{0.0};
  double decel{0.0};

  double at(double t) const
  {
    if (decel <= 0.0) return s0 + v0 * t;
    const double t_stop = v0 / decel;
    const double tt = std::min(t, t_stop);
    return s0 + v0 * tt - 0.5 * decel * tt * tt;
  }
};

struct Candidate
{
  std::vector<std::optional<OrientedBox2D>> boxes;
  int key_frame{0};
};

Candidate realize(const Path & path, const Motion & motion, double w, double h, int frames)
{
  Candidate c;
  c.boxes.resize(static_cast<std::size_t>(frames));
  for (int f = 0; f < frames; ++f) {
    const double s = motion.at(f * kFrameDt);
    if (s < 0.0 || s > path.length()) continue;
    const auto [p, heading] = path.at(s);
    c.boxes[f] = OrientedBox2D{p.x, p.y, w, h, geom::normalize_angle(heading)};
  }
  return c;
}

struct World
{
  const GeneratorConfig & cfg;
  const Layout & layout;
  std::vector<RigidPose> ego;
  OrientedBox2D ego_box;
  int frames;
};

Vec2 ego_xy(const World & w, int f) { return {w.ego[f].tx, w.ego[f].ty}; }

bool light_allows(const World & w, bool left, int arm, int frame)
{
  if (!w.layout.signalized) return true;
  if (frame < 0 || frame >= w.frames) return true;
  const auto s = w.layout.truth.at(light_id(left, arm))[frame];
  return s == LightState::kGreen || s == LightState::kYellow;
}

/// Frame at which the route passes arc length `s_mark`, if within the run.
std::optional<int> crossing_frame(const Motion & m, double s_mark, int frames)
{
  for (int f = 0; f < frames; ++f) {
    if (m.at(f * kFrameDt) >= s_mark) return f == 0 && m.s0 >= s_mark ? std::nullopt : std::optional<int>(f);
  }
  return std::nullopt;
}

std::optional<Candidate> propose(World & w, Action maneuver, std::mt19937_64 & rng)
{
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::uniform_int_distribution<int> arm_dist(0, kArms - 1);
  std::uniform_int_distribution<int> frame_dist(0, w.frames - 1);
  const auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * u01(rng); };
  const auto & map = w.layout.map;
  const double R = w.layout.half;
  const double L = w.cfg.arm_length;
  const double lw = w.layout.lane_width;
  const double veh_w = uniform(4.0, 5.0);
  const double veh_h = uniform(1.7, 2.0);
  const int arm = arm_dist(rng);

  const auto in_view = [&](const Candidate & c) {
    const auto & b = c.boxes[c.key_frame];
    return b && geom::norm(b->center() - ego_xy(w, c.key_frame)) <= w.cfg.view_radius;
  };

  switch (maneuver) {
    case Action::kKeepLane:
    case Action::kTurnLeft:
    case Action::kTurnRight: {
      const bool left = maneuver == Action::kTurnLeft;
      const bool right = maneuver == Action::kTurnRight;
      Path path = left    ? route(map, {incoming_inner(arm), connector_left(arm), outgoing_inner((arm + 3) % 4)})
                  : right ? route(map, {incoming_outer(arm), connector_right(arm), outgoing_outer((arm + 1) % 4)})
                          : route(map, {incoming_outer(arm), connector_straight(arm), outgoing_outer((arm + 2) % 4)});
      const double v = maneuver == Action::kKeepLane ? uniform(5.0, 9.0) : uniform(3.0, 6.0);
      const int key = frame_dist(rng);
      // Turners are keyed on the connector; lane keepers anywhere on the route.
      const double conn_len = path.length() - 2.0 * L;
      const double s_key = maneuver == Action::kKeepLane ? uniform(L - 25.0, L + conn_len + 25.0)
                                                         : uniform(L + 0.5, L + conn_len - 0.5);
      const Motion m{s_key - v * key * kFrameDt, v, 0.0};
      auto c = realize(path, m, veh_w, veh_h, w.frames);
      c.key_frame = key;
      if (!in_view(c)) return std::nullopt;
      if (const auto cross = crossing_frame(m, L, w.frames); cross && !light_allows(w, left, arm, *cross)) {
        return std::nullopt;
      }
      return c;
    }
    case Action::kLaneChangeLeft:
    case Action::kLaneChangeRight: {
      const bool to_left = maneuver == Action::kLaneChangeLeft;
      Path path = to_left ? route(map, {incoming_outer(arm), connector_straight(arm), outgoing_outer((arm + 2) % 4)})
                          : route(map, {incoming_inner(arm), connector_left(arm), outgoing_inner((arm + 3) % 4)});
      const double v = to_left ? uniform(6.0, 9.0) : uniform(5.0, 7.5);
      const double out_start = path.length() - L;
      const double lc_len = std::max(4.0 * v, 30.0);
      const double lc_start = out_start + uniform(1.0, 12.0);
      path.set_lane_change(lc_start, lc_len, to_left ? lw : -lw);
      // Pick the frame at which the centroid crosses the shared boundary.
      const int cross = frame_dist(rng);
      const double s_cross = lc_start + 0.5 * lc_len;
      const Motion m{s_cross - v * cross * kFrameDt, v, 0.0};
      auto c = realize(path, m, veh_w, veh_h, w.frames);
      c.key_frame = std::max(0, cross - 5);
      if (!in_view(c)) return std::nullopt;
      if (const auto entry = crossing_frame(m, L, w.frames); entry && !light_allows(w, !to_left, arm, *entry)) {
        return std::nullopt;
      }
      return c;
    }
    case Action::kStoppingStopped: {
      const bool inner = u01(rng) < 0.4;
      const int lane = inner ? incoming_inner(arm) : incoming_outer(arm);
      Path path = route(map, {lane});
      const int slot = std::uniform_int_distribution<int>(0, 3)(rng);
      const double stop_dist = 0.5 + kCrosswalk + 1.0 + 0.5 * veh_w + slot * (veh_w + 2.5);
      const double s_stop = path.length() - stop_dist;
      Motion m{s_stop, 0.0, 0.0};
      if (u01(rng) < 0.5) {
        const double v0 = uniform(3.0, 8.0);
        const double t_stop = uniform(0.8, 0.6 * w.frames * kFrameDt);
        m.decel = v0 / t_stop;
        m.v0 = v0;
        m.s0 = s_stop - 0.5 * v0 * t_stop;
      }
      auto c = realize(path, m, veh_w, veh_h, w.frames);
      c.key_frame = w.frames - 1;
      if (!in_view(c)) return std::nullopt;
      // Queued cars wait at a light that does not let them through.
      if (w.layout.signalized && light_allows(w, inner, arm, c.key_frame) && u01(rng) < 0.8) return std::nullopt;
      return c;
    }
    case Action::kParked:
    case Action::kOther: {
      const ArmFrame f = arm_frame(arm);
      const bool incoming_side = u01(rng) < 0.5;
      const double d = incoming_side ? w.layout.park_offset : -w.layout.park_offset;
      // Along the traffic direction of the adjacent lanes.
      Path path = incoming_side ? Path({f.at(R + L, d), f.at(R + 1.0, d)}) : Path({f.at(R + 1.0, d), f.at(R + L, d)});
      if (maneuver == Action::kParked) {
        const double s = uniform(4.0, 45.0);
        const double arc = incoming_side ? path.length() - s : s;
        auto c = realize(path, Motion{arc, 0.0, 0.0}, veh_w, veh_h, w.frames);
        c.key_frame = frame_dist(rng);
        if (!in_view(c)) return std::nullopt;
        return c;
      }
      const double v = uniform(1.5, 3.0);
      const int key = frame_dist(rng);
      const double s_key = uniform(3.0, path.length() - 3.0);
      auto c = realize(path, Motion{s_key - v * key * kFrameDt, v, 0.0}, veh_w, veh_h, w.frames);
      c.key_frame = key;
      if (!in_view(c)) return std::nullopt;
      return c;
    }
  }
  return std::nullopt;
}

OrientedBox2D dilate(const OrientedBox2D & b, double margin)
{
  OrientedBox2D d = b;
  d.w += 2.0 * margin;
  d.h += 2.0 * margin;
  return d;
}

bool collides(const Candidate & c, const std::vector<ActorTrack> & placed, const World & w)
{
  constexpr double kMargin = 0.3;
  for (int f = 0; f < w.frames; ++f) {
    if (!c.boxes[f]) continue;
    const auto mine = dilate(*c.boxes[f], kMargin);
    OrientedBox2D ego = w.ego_box;
    ego.cx = w.ego[f].tx;
    ego.cy = w.ego[f].ty;
    ego.phi = w.ego[f].yaw;
    if (geom::rotated_iou(mine, dilate(ego, kMargin)) > 0.0) return true;
    for (const auto & other : placed) {
      const auto & of = other.frames[f];
      if (of.present && geom::rotated_iou(mine, dilate(of.box, kMargin)) > 0.0) return true;
    }
  }
  return false;
}

/// Surface samples on the sides of `box` facing the sensor.
std::vector<Point3> sample_actor_points(
  const OrientedBox2D & box, Vec2 sensor, const GeneratorConfig & cfg, std::mt19937_64 & rng)
{
  const auto corners = box.corners();
  struct Edge
  {
    Vec2 a, b;
  };
  std::vector<Edge> visible;
  double perimeter = 0.0;
  for (int i = 0; i < 4; ++i) {
    const Vec2 a = corners[i];
    const Vec2 b = corners[(i + 1) % 4];
    const Vec2 e = b - a;
    const Vec2 outward{e.y, -e.x};  // CCW ring: right-hand normal points out
    const Vec2 mid = 0.5 * (a + b);
    if (geom::dot(outward, sensor - mid) > 0.0) {
      visible.push_back({a, b});
      perimeter += geom::norm(e);
    }
  }
  const double dist = std::max(1.0, geom::norm(box.center() - sensor));
  const int count = static_cast<int>(std::floor(cfg.point_density * perimeter / dist));
  std::vector<Point3> pts;
  if (count <= 0 || visible.empty()) return pts;
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::uniform_real_distribution<double> uz(0.3, 1.6);
  std::normal_distribution<double> gauss(0.0, cfg.noise_sigma);
  // Gaussian truncated at 3 sigma (radially in the ground plane) by resampling.
  const double limit = 3.0 * cfg.noise_sigma;
  const auto planar_noise = [&]() {
    for (;;) {
      const Vec2 n{gauss(rng), gauss(rng)};
      if (geom::norm(n) <= limit) return n;
    }
  };
  const auto height_noise = [&]() {
    for (;;) {
      const double n = gauss(rng);
      if (std::abs(n) <= limit) return n;
    }
  };
  for (int i = 0; i < count; ++i) {
    double s = u01(rng) * perimeter;
    std::size_t e = 0;
    while (e + 1 < visible.size() && s > geom::norm(visible[e].b - visible[e].a)) {
      s -= geom::norm(visible[e].b - visible[e].a);
      ++e;
    }
    const Vec2 dir = visible[e].b - visible[e].a;
    const double t = std::clamp(s / geom::norm(dir), 0.0, 1.0);
    const Vec2 p = visible[e].a + t * dir;
    const Vec2 n = planar_noise();
    const double z = uz(rng) + height_noise();
    pts.push_back({p.x + n.x, p.y + n.y, z});
  }
  return pts;
}

}  // namespace
void GeneratorConfig::validate() const
{
  const auto require = [](bool ok, const std::string & what) {
    if (!ok) throw ConfigError("generator: " + what);
  };
  require(frame_count >= 1, "frame_count must be >= 1");
  require(actors_min >= 0 && actors_max >= actors_min, "need 0 <= actors_min <= actors_max");
  double total = 0.0;
  for (double wgt : maneuver_weights) {
    require(wgt >= 0.0, "maneuver weights must be non-negative");
    total += wgt;
  }
  require(actors_max == 0 || total > 0.0, "maneuver weights must not all be zero");
  require(lane_width > 2.0, "lane_width must exceed 2 m");
  require(bike_lane_width > 0.0 && parking_width > 2.0, "bike_lane_width > 0 and parking_width > 2 m");
  require(arm_length > 20.0, "arm_length must exceed 20 m");
  require(boundary_width > 0.0, "boundary_width must be positive");
  require(point_density >= 0.0 && clutter_density >= 0.0, "densities must be non-negative");
  require(noise_sigma >= 0.0, "noise_sigma must be non-negative");
  require(view_radius > 0.0 && lidar_range > 0.0, "ranges must be positive");
  require(placement_attempts >= 1, "placement_attempts must be >= 1");
  for (double p : {bike_lane_prob, signal_prob, unknown_light_prob}) require(p >= 0.0 && p <= 1.0, "probabilities in [0,1]");
}

void apply_generator_key(GeneratorConfig & cfg, const std::string & key, const std::string & value)
{
  if (key == "frame_count") {
    cfg.frame_count = static_cast<int>(to_int(key, value));
  } else if (key == "actors_min") {
    cfg.actors_min = static_cast<int>(to_int(key, value));
  } else if (key == "actors_max") {
    cfg.actors_max = static_cast<int>(to_int(key, value));
  } else if (key == "lane_width") {
    cfg.lane_width = to_double(key, value);
  } else if (key == "bike_lane_width") {
    cfg.bike_lane_width = to_double(key, value);
  } else if (key == "parking_width") {
    cfg.parking_width = to_double(key, value);
  } else if (key == "arm_length") {
    cfg.arm_length = to_double(key, value);
  } else if (key == "boundary_width") {
    cfg.boundary_width = to_double(key, value);
  } else if (key == "bike_lane_prob") {
    cfg.bike_lane_prob = to_double(key, value);
  } else if (key == "signal_prob") {
    cfg.signal_prob = to_double(key, value);
  } else if (key == "unknown_light_prob") {
    cfg.unknown_light_prob = to_double(key, value);
  } else if (key == "point_density") {
    cfg.point_density = to_double(key, value);
  } else if (key == "clutter_density") {
    cfg.clutter_density = to_double(key, value);
  } else if (key == "clutter_extent") {
    cfg.clutter_extent = to_double(key, value);
  } else if (key == "noise_sigma") {
    cfg.noise_sigma = to_double(key, value);
  } else if (key == "lidar_range") {
    cfg.lidar_range = to_double(key, value);
  } else if (key == "view_radius") {
    cfg.view_radius = to_double(key, value);
  } else if (key == "ego_speed") {
    cfg.ego_speed = to_double(key, value);
  } else if (key == "placement_attempts") {
    cfg.placement_attempts = static_cast<int>(to_int(key, value));
  } else if (key.starts_with("weight.")) {
    const auto action = parse_action(key.substr(7));
    if (!action) throw ConfigError(key + ": unknown action '" + key.substr(7) + "'");
    cfg.maneuver_weights[index_of(*action)] = to_double(key, value);
  } else if (key == "mix") {
    // Shorthand: mix = turn_left:1, keep_lane:0.5 (unlisted classes get 0).
    cfg.maneuver_weights.fill(0.0);
    std::size_t pos = 0;
    while (pos < value.size()) {
      auto comma = value.find(',', pos);
      if (comma == std::string::npos) comma = value.size();
      std::string item = value.substr(pos, comma - pos);
      item.erase(0, item.find_first_not_of(' '));
      item.erase(item.find_last_not_of(' ') + 1);
      const auto colon = item.find(':');
      if (colon == std::string::npos) throw ConfigError("mix: expected label:weight, got '" + item + "'");
      const auto action = parse_action(item.substr(0, colon));
      if (!action) throw ConfigError("mix: unknown action '" + item.substr(0, colon) + "'");
      cfg.maneuver_weights[index_of(*action)] = to_double(key, item.substr(colon + 1));
      pos = comma + 1;
    }
  } else {
    throw ConfigError("generator: unknown key '" + key + "'");
  }
}

GeneratorFile parse_generator_config(std::string_view text, const std::string & source)
{
  GeneratorFile out;
  bool have_seed = false;
  for (const auto & kv : parse_key_values(text, source)) {
    try {
      if (kv.key == "seed") {
        out.seed = to_u64(kv.key, kv.value);
        have_seed = true;
      } else {
        apply_generator_key(out.config, kv.key, kv.value);
      }
    } catch (const ConfigError & e) {
      throw ParseError(source + ":" + std::to_string(kv.line), e.what());
    }
  }
  if (!have_seed) throw ParseError(source, "missing mandatory key 'seed'");
  out.config.validate();
  return out;
}

GeneratorFile load_generator_config(const std::filesystem::path & path)
{
  return parse_generator_config(read_text_file(path), path.string());
}

MapDocument build_intersection_map(const GeneratorConfig & config, std::uint64_t seed, int frame_count)
{
  config.validate();
  std::mt19937_64 rng(seed);
  return make_layout(config, rng, frame_count).map;
}

Scenario generate_scenario(const GeneratorConfig & config, std::uint64_t seed)
{
  config.validate();
  if (config.actors_max > kMaxCapacity) {
    throw GenerationError(
      "actors_max " + std::to_string(config.actors_max) + " exceeds intersection capacity " +
      std::to_string(static_cast<int>(kMaxCapacity)));
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const int frames = config.frame_count;
  const Layout layout = make_layout(config, rng, frames);

  // Ego rides one of the through lanes, some distance from the center.
  World world{config, layout, {}, {}, frames};
  {
    const int arm = std::uniform_int_distribution<int>(0, kArms - 1)(rng);
    const int which = std::uniform_int_distribution<int>(0, 3)(rng);
    const int lane_id = arm * 10 + which;
    const auto & lane = *layout.map.find_lane(lane_id);
    const Vec2 a = lane.centerline.vertices.front();
    const Vec2 b = lane.centerline.vertices.back();
    const Vec2 dir = (1.0 / geom::norm(b - a)) * (b - a);
    const double heading = std::atan2(dir.y, dir.x);
    // Distance from the intersection edge, measured along the lane.
    const double gap = 3.0 + 12.0 * u01(rng);
    const bool inward = which < 2;
    const Vec2 start = inward ? b - gap * dir : a + gap * dir;
    const double yaw = geom::normalize_angle(heading + (u01(rng) - 0.5) * (6.0 * kPi / 180.0));
    for (int f = 0; f < frames; ++f) {
      const double travelled = config.ego_speed * f * kFrameDt;
      const Vec2 p = start + travelled * Vec2{std::cos(yaw), std::sin(yaw)};
      world.ego.push_back(RigidPose{p.x, p.y, 0.0, yaw, 0.0, 0.0});
    }
    world.ego_box = OrientedBox2D{start.x, start.y, 4.6, 1.9, yaw};
  }

  Scenario sc;
  sc.seed = seed;
  sc.map = layout.map;
  const LaneIndex index(sc.map);

  std::discrete_distribution<int> pick(config.maneuver_weights.begin(), config.maneuver_weights.end());
  const int wanted = std::uniform_int_distribution<int>(config.actors_min, config.actors_max)(rng);
  int next_id = 1;
  // Actors that cannot be placed are skipped; extra draws top the count up
  // to actors_min.
  const int max_draws = wanted + 4 * std::max(1, config.actors_min);
  for (int i = 0; i < max_draws; ++i) {
    if (i >= wanted && static_cast<int>(sc.tracks.size()) >= config.actors_min) break;
    const auto maneuver = static_cast<Action>(pick(rng));
    for (int attempt = 0; attempt < config.placement_attempts; ++attempt) {
      // Geometric proposals are cheap; only collision-checked ones count.
      std::optional<Candidate> cand;
      for (int k = 0; k < kProposalsPerAttempt && !cand; ++k) cand = propose(world, maneuver, rng);
      if (!cand || collides(*cand, sc.tracks, world)) continue;
      const auto labels = label_actions(cand->boxes, index);
      if (labels[cand->key_frame] != maneuver) continue;
      ActorTrack track;
      track.id = next_id++;
      track.maneuver = maneuver;
      track.frames.resize(static_cast<std::size_t>(frames));
      for (int f = 0; f < frames; ++f) {
        if (!cand->boxes[f]) continue;
        track.frames[f].present = true;
        track.frames[f].box = *cand->boxes[f];
        track.frames[f].action = labels[f];
      }
      sc.tracks.push_back(std::move(track));
      break;
    }
  }
  if (static_cast<int>(sc.tracks.size()) < config.actors_min) {
    throw GenerationError(
      "placed only " + std::to_string(sc.tracks.size()) + " of at least " + std::to_string(config.actors_min) +
      " actors without collisions; lower actors_min or enlarge the map");
  }

  // LiDAR sweeps.
  std::uniform_real_distribution<double> uc(-config.clutter_extent, config.clutter_extent);
  std::uniform_real_distribution<double> uz(0.0, 0.15);
  const int clutter =
    static_cast<int>(std::round(config.clutter_density * 4.0 * config.clutter_extent * config.clutter_extent));
  for (int f = 0; f < frames; ++f) {
    Sweep sweep;
    sweep.timestamp = f * kFrameDt;
    sweep.ego_pose = world.ego[f];
    std::vector<Point3> world_pts;
    const Vec2 sensor = ego_xy(world, f);
    for (auto & track : sc.tracks) {
      auto & fr = track.frames[f];
      if (!fr.present || geom::norm(fr.box.center() - sensor) > config.lidar_range) continue;
      const auto pts = sample_actor_points(fr.box, sensor, config, rng);
      fr.lidar_point_count = static_cast<int>(pts.size());
      world_pts.insert(world_pts.end(), pts.begin(), pts.end());
    }
    auto local = geom::transform_points(world_pts, RigidPose{}, sweep.ego_pose);
    for (int i = 0; i < clutter; ++i) local.push_back({uc(rng), uc(rng), uz(rng)});
    sweep.points = std::move(local);
    sc.sweeps.push_back(std::move(sweep));
  }
  return sc;
}

}  // namespace bevintent::scene
