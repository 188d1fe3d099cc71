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

// Scenario JSON. The top level is written by hand so that the map, every
// sweep and every track sit on their own line; a syntax error then points at
// a useful line number.

#include <nlohmann/json.hpp>

#include "bevintent/errors.hpp"
#include "bevintent/kvfile.hpp"
#include "bevintent/scene.hpp"

namespace bevintent::scene
{

namespace
{

using nlohmann::json;

json vec_list(const std::vector<geom::Vec2> & pts)
{
  json out = json::array();
  for (const auto & p : pts) out.push_back({p.x, p.y});
  return out;
}

json polyline_json(const Polyline & l) { return {{"vertices", vec_list(l.vertices)}, {"width", l.width}}; }
json polygon_json(const Polygon & p) { return vec_list(p.vertices); }

json polygons_json(const std::vector<Polygon> & polys)
{
  json out = json::array();
  for (const auto & p : polys) out.push_back(polygon_json(p));
  return out;
}

json box_json(const OrientedBox2D & b) { return {b.cx, b.cy, b.w, b.h, b.phi}; }
json pose_json(const RigidPose & p) { return {p.tx, p.ty, p.tz, p.yaw, p.pitch, p.roll}; }

json map_json(const MapDocument & m)
{
  json lanes = json::array();
  for (const auto & l : m.lanes) {
    json control = json::object();
    if (l.control.light_id) control["light"] = *l.control.light_id;
    if (l.control.sign) control["sign"] = to_string(*l.control.sign);
    lanes.push_back({
      {"id", l.id},
      {"centerline", polyline_json(l.centerline)},
      {"left", {{"line", polyline_json(l.left.line)}, {"kind", to_string(l.left.kind)}}},
      {"right", {{"line", polyline_json(l.right.line)}, {"kind", to_string(l.right.kind)}}},
      {"surface", polygon_json(l.surface)},
      {"turn", to_string(l.turn)},
      {"class", to_string(l.lane_class)},
      {"successors", l.successors},
      {"control", control},
      {"protected", l.is_protected},
    });
  }
  json lights = json::object();
  for (const auto & [id, states] : m.traffic_lights) {
    json s = json::array();
    for (auto st : states) s.push_back(to_string(st));
    lights[id] = s;
  }
  json signs = json::array();
  for (const auto & s : m.signs) signs.push_back({{"lane", s.lane_id}, {"kind", to_string(s.kind)}});
  return {
    {"road_polygons", polygons_json(m.road_polygons)},
    {"intersection_polygons", polygons_json(m.intersection_polygons)},
    {"crossing_polygons", polygons_json(m.crossing_polygons)},
    {"lanes", lanes},
    {"traffic_lights", lights},
    {"signs", signs},
  };
}

// --- Reading -----------------------------------------------------------------

/// Typed field access that reports the JSON path on failure.
class Reader
{
public:
  Reader(const json & j, std::string path) : j_(j), path_(std::move(path)) {}

  Reader operator()(const char * key) const
  {
    if (!j_.is_object()) fail("expected an object");
    const auto it = j_.find(key);
    const std::string sub = path_.empty() ? key : path_ + "." + key;
    if (it == j_.end()) throw ParseError(sub, "missing field");
    return Reader(*it, sub);
  }
  Reader operator[](std::size_t i) const { return Reader(j_.at(i), path_ + "[" + std::to_string(i) + "]"); }
  bool has(const char * key) const { return j_.is_object() && j_.contains(key); }

  std::size_t size(std::optional<std::size_t> expect = std::nullopt) const
  {
    if (!j_.is_array()) fail("expected an array");
    if (expect && j_.size() != *expect) {
      fail("expected " + std::to_string(*expect) + " elements, got " + std::to_string(j_.size()));
    }
    return j_.size();
  }
  double num() const
  {
    if (!j_.is_number()) fail("expected a number");
    return j_.get<double>();
  }
  int integer() const
  {
    if (!j_.is_number_integer()) fail("expected an integer");
    return j_.get<int>();
  }
  std::uint64_t u64() const
  {
    if (!j_.is_number_unsigned() && !(j_.is_number_integer() && j_.get<long long>() >= 0)) {
      fail("expected a non-negative integer");
    }
    return j_.get<std::uint64_t>();
  }
  bool boolean() const
  {
    if (!j_.is_boolean()) fail("expected a boolean");
    return j_.get<bool>();
  }
  std::string str() const
  {
    if (!j_.is_string()) fail("expected a string");
    return j_.get<std::string>();
  }
  const json & raw() const { return j_; }
  const std::string & path() const { return path_; }

  [[noreturn]] void fail(const std::string & what) const { throw ParseError(path_.empty() ? "<root>" : path_, what); }

private:
  const json & j_;
  std::string path_;
};

template <typename E, typename F>
E parse_enum(const Reader & r, F && to_str, std::initializer_list<E> values)
{
  const auto s = r.str();
  for (auto v : values) {
    if (to_str(v) == s) return v;
  }
  r.fail("unknown value '" + s + "'");
}

std::vector<geom::Vec2> read_vecs(const Reader & r)
{
  std::vector<geom::Vec2> out;
  const auto n = r.size();
  for (std::size_t i = 0; i < n; ++i) {
    const auto p = r[i];
    p.size(2);
    out.push_back({p[0].num(), p[1].num()});
  }
  return out;
}

Polyline read_polyline(const Reader & r) { return Polyline{read_vecs(r("vertices")), r("width").num()}; }

std::vector<Polygon> read_polygons(const Reader & r)
{
  std::vector<Polygon> out;
  const auto n = r.size();
  for (std::size_t i = 0; i < n; ++i) out.push_back(Polygon{read_vecs(r[i])});
  return out;
}

OrientedBox2D read_box(const Reader & r)
{
  r.size(5);
  return {r[0].num(), r[1].num(), r[2].num(), r[3].num(), r[4].num()};
}

RigidPose read_pose(const Reader & r)
{
  r.size(6);
  return {r[0].num(), r[1].num(), r[2].num(), r[3].num(), r[4].num(), r[5].num()};
}

BoundaryKind read_boundary_kind(const Reader & r)
{
  return parse_enum<BoundaryKind>(
    r, [](BoundaryKind k) { return to_string(k); },
    {BoundaryKind::kCrossable, BoundaryKind::kNonCrossable, BoundaryKind::kConditional});
}

SignKind read_sign(const Reader & r)
{
  return parse_enum<SignKind>(r, [](SignKind k) { return to_string(k); }, {SignKind::kYield, SignKind::kStop});
}

Action read_action(const Reader & r)
{
  const auto s = r.str();
  const auto a = parse_action(s);
  if (!a) r.fail("unknown action label '" + s + "'");
  return *a;
}

MapDocument read_map(const Reader & r)
{
  MapDocument m;
  m.road_polygons = read_polygons(r("road_polygons"));
  m.intersection_polygons = read_polygons(r("intersection_polygons"));
  m.crossing_polygons = read_polygons(r("crossing_polygons"));
  const auto lanes = r("lanes");
  for (std::size_t i = 0, n = lanes.size(); i < n; ++i) {
    const auto l = lanes[i];
    LaneSegment s;
    s.id = l("id").integer();
    s.centerline = read_polyline(l("centerline"));
    s.left = {read_polyline(l("left")("line")), read_boundary_kind(l("left")("kind"))};
    s.right = {read_polyline(l("right")("line")), read_boundary_kind(l("right")("kind"))};
    s.surface = Polygon{read_vecs(l("surface"))};
    s.turn = parse_enum<TurnType>(
      l("turn"), [](TurnType t) { return to_string(t); }, {TurnType::kStraight, TurnType::kLeft, TurnType::kRight});
    s.lane_class = parse_enum<LaneClass>(
      l("class"), [](LaneClass c) { return to_string(c); }, {LaneClass::kVehicle, LaneClass::kBike, LaneClass::kBus});
    const auto succ = l("successors");
    for (std::size_t k = 0, ns = succ.size(); k < ns; ++k) s.successors.push_back(succ[k].integer());
    const auto control = l("control");
    if (control.has("light")) s.control.light_id = control("light").str();
    if (control.has("sign")) s.control.sign = read_sign(control("sign"));
    s.is_protected = l("protected").boolean();
    m.lanes.push_back(std::move(s));
  }
  const auto lights = r("traffic_lights");
  if (!lights.raw().is_object()) lights.fail("expected an object");
  for (const auto & [id, _] : lights.raw().items()) {
    const auto states = lights(id.c_str());
    std::vector<LightState> v;
    for (std::size_t k = 0, n = states.size(); k < n; ++k) {
      v.push_back(parse_enum<LightState>(
        states[k], [](LightState s) { return to_string(s); },
        {LightState::kGreen, LightState::kYellow, LightState::kRed, LightState::kUnknown}));
    }
    m.traffic_lights[id] = std::move(v);
  }
  const auto signs = r("signs");
  for (std::size_t i = 0, n = signs.size(); i < n; ++i) {
    m.signs.push_back({signs[i]("lane").integer(), read_sign(signs[i]("kind"))});
  }
  return m;
}

int line_of(std::string_view text, std::size_t byte)
{
  byte = std::min(byte, text.size());
  return 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(byte), '\n'));
}

}  // namespace

std::string serialize_scenario(const Scenario & s)
{
  std::string out = "{\"format\":" + json(kScenarioFormat).dump() + ",\"version\":" + json(kScenarioVersion).dump() +
                    ",\"units\":{\"length\":\"m\",\"angle\":\"rad\",\"time\":\"s\"},\"seed\":" +
                    std::to_string(s.seed) + ",\n\"map\":" + map_json(s.map).dump() + ",\n\"sweeps\":[";
  for (std::size_t i = 0; i < s.sweeps.size(); ++i) {
    const auto & sw = s.sweeps[i];
    json pts = json::array();
    for (const auto & p : sw.points) {
      pts.push_back(p.x);
      pts.push_back(p.y);
      pts.push_back(p.z);
    }
    const json j{{"timestamp", sw.timestamp}, {"ego_pose", pose_json(sw.ego_pose)}, {"points", pts}};
    out += (i ? ",\n" : "\n") + j.dump();
  }
  out += "],\n\"tracks\":[";
  for (std::size_t i = 0; i < s.tracks.size(); ++i) {
    const auto & t = s.tracks[i];
    json frames = json::array();
    for (const auto & f : t.frames) {
      if (!f.present) {
        frames.push_back(nullptr);
      } else {
        frames.push_back(
          {{"box", box_json(f.box)}, {"action", to_string(f.action)}, {"lidar_points", f.lidar_point_count}});
      }
    }
    const json j{{"id", t.id}, {"maneuver", to_string(t.maneuver)}, {"frames", frames}};
    out += (i ? ",\n" : "\n") + j.dump();
  }
  out += "]}\n";
  return out;
}

Scenario deserialize_scenario(std::string_view text)
{
  json doc;
  try {
    doc = json::parse(text.begin(), text.end());
  } catch (const json::parse_error & e) {
    throw ParseError("line " + std::to_string(line_of(text, e.byte == 0 ? 0 : e.byte - 1)), e.what());
  }
  const Reader root(doc, "");
  if (!doc.is_object()) root.fail("expected a JSON object");
  if (!root.has("format") || root("format").str() != kScenarioFormat) {
    throw VersionError("not a bevintent scenario file (missing or wrong 'format')");
  }
  const auto version = root("version").str();
  if (version != kScenarioVersion) {
    throw VersionError(
      "unsupported scenario version '" + version + "' (this build reads '" + std::string(kScenarioVersion) + "')");
  }

  Scenario s;
  s.seed = root("seed").u64();
  s.map = read_map(root("map"));
  const auto sweeps = root("sweeps");
  for (std::size_t i = 0, n = sweeps.size(); i < n; ++i) {
    const auto sw = sweeps[i];
    Sweep out;
    out.timestamp = sw("timestamp").num();
    out.ego_pose = read_pose(sw("ego_pose"));
    const auto pts = sw("points");
    const auto np = pts.size();
    if (np % 3 != 0) pts.fail("point array length must be a multiple of 3");
    out.points.reserve(np / 3);
    for (std::size_t k = 0; k < np; k += 3) out.points.push_back({pts[k].num(), pts[k + 1].num(), pts[k + 2].num()});
    s.sweeps.push_back(std::move(out));
  }
  const int frames = s.frame_count();
  const auto tracks = root("tracks");
  for (std::size_t i = 0, n = tracks.size(); i < n; ++i) {
    const auto t = tracks[i];
    ActorTrack out;
    out.id = t("id").integer();
    out.maneuver = read_action(t("maneuver"));
    const auto fr = t("frames");
    fr.size(static_cast<std::size_t>(frames));
    for (std::size_t k = 0; k < static_cast<std::size_t>(frames); ++k) {
      ActorFrame f;
      const auto e = fr[k];
      if (!e.raw().is_null()) {
        f.present = true;
        f.box = read_box(e("box"));
        f.action = read_action(e("action"));
        f.lidar_point_count = e("lidar_points").integer();
      }
      out.frames.push_back(f);
    }
    s.tracks.push_back(std::move(out));
  }
  validate(s.map, frames);
  return s;
}

void save_scenario(const Scenario & s, const std::filesystem::path & path)
{
  write_text_file(path, serialize_scenario(s));
}

Scenario load_scenario(const std::filesystem::path & path)
{
  const auto text = read_text_file(path);
  try {
    return deserialize_scenario(text);
  } catch (const ParseError & e) {
    throw ParseError(path.string() + ": " + e.where(), std::string(e.what()).substr(e.where().size() + 2));
  }
}

}  // namespace bevintent::scene
