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

// Scenario data model: HD map, LiDAR sweeps and labelled actor tracks, plus
// the synthetic generator and the versioned on-disk format.

#ifndef BEVINTENT_SCENE_HPP_
#define BEVINTENT_SCENE_HPP_

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "bevintent/geom.hpp"

namespace bevintent::scene
{

using geom::OrientedBox2D;
using geom::Point3;
using geom::Polygon;
using geom::Polyline;
using geom::RigidPose;

/// Nominal LiDAR rate.
inline constexpr double kFrameDt = 0.1;

enum class Action : std::uint8_t {
  kKeepLane = 0,
  kTurnLeft,
  kTurnRight,
  kLaneChangeLeft,
  kLaneChangeRight,
  kStoppingStopped,
  kParked,
  kOther,
};
inline constexpr int kNumActions = 8;

std::string_view to_string(Action a);
std::optional<Action> parse_action(std::string_view s);
inline int index_of(Action a) { return static_cast<int>(a); }

enum class BoundaryKind : std::uint8_t { kCrossable = 0, kNonCrossable, kConditional };
enum class TurnType : std::uint8_t { kStraight = 0, kLeft, kRight };
enum class LaneClass : std::uint8_t { kVehicle = 0, kBike, kBus };
enum class LightState : std::uint8_t { kGreen = 0, kYellow, kRed, kUnknown };
enum class SignKind : std::uint8_t { kYield = 0, kStop };

std::string_view to_string(BoundaryKind k);
std::string_view to_string(TurnType t);
std::string_view to_string(LaneClass c);
std::string_view to_string(LightState s);
std::string_view to_string(SignKind s);

struct Boundary
{
  Polyline line;
  BoundaryKind kind{BoundaryKind::kCrossable};
  friend bool operator==(const Boundary &, const Boundary &) = default;
};

/// Traffic control attached to a lane: either a light id or a sign.
struct Control
{
  std::optional<std::string> light_id;
  std::optional<SignKind> sign;
  friend bool operator==(const Control &, const Control &) = default;
};

struct LaneSegment
{
  int id{0};
  Polyline centerline;
  Boundary left;
  Boundary right;
  Polygon surface;
  TurnType turn{TurnType::kStraight};
  LaneClass lane_class{LaneClass::kVehicle};
  std::vector<int> successors;
  Control control;
  bool is_protected{false};

  friend bool operator==(const LaneSegment &, const LaneSegment &) = default;
};

struct SignPlacement
{
  int lane_id{0};
  SignKind kind{SignKind::kStop};
  friend bool operator==(const SignPlacement &, const SignPlacement &) = default;
};

struct MapDocument
{
  std::vector<Polygon> road_polygons;
  std::vector<Polygon> intersection_polygons;
  std::vector<Polygon> crossing_polygons;
  std::vector<LaneSegment> lanes;
  /// Light id -> state per scenario frame.
  std::map<std::string, std::vector<LightState>> traffic_lights;
  std::vector<SignPlacement> signs;

  const LaneSegment * find_lane(int id) const;
  friend bool operator==(const MapDocument &, const MapDocument &) = default;
};

/// Throws ParseError naming the offending field when the map is inconsistent.
void validate(const MapDocument & map, int frame_count);

struct Sweep
{
  double timestamp{0.0};
  RigidPose ego_pose;
  /// Points in the ego frame at capture time.
  std::vector<Point3> points;
  friend bool operator==(const Sweep &, const Sweep &) = default;
};

struct ActorFrame
{
  bool present{false};
  OrientedBox2D box;
  Action action{Action::kOther};
  int lidar_point_count{0};
  friend bool operator==(const ActorFrame &, const ActorFrame &) = default;
};

struct ActorTrack
{
  int id{0};
  /// Maneuver the generator scripted for this actor.
  Action maneuver{Action::kKeepLane};
  std::vector<ActorFrame> frames;
  friend bool operator==(const ActorTrack &, const ActorTrack &) = default;
};

struct Scenario
{
  MapDocument map;
  std::vector<Sweep> sweeps;
  std::vector<ActorTrack> tracks;
  std::uint64_t seed{0};

  int frame_count() const { return static_cast<int>(sweeps.size()); }
  friend bool operator==(const Scenario &, const Scenario &) = default;
};

// --- Action labelling ------------------------------------------------------

/// Thresholds of the map-grounded labelling convention.
struct LabelRules
{
  double stop_speed{0.5};        // m/s
  double turn_heading_deg{45.0};
  double lane_change_heading_deg{15.0};
};

/// Precomputed lane adjacency and lookup structures for a map.
class LaneIndex
{
public:
  explicit LaneIndex(const MapDocument & map);

  /// Vehicle and bus lanes whose surface contains `p`.
  std::vector<int> lanes_at(geom::Vec2 p) const;
  bool on_vehicle_lane(geom::Vec2 p) const { return !lanes_at(p).empty(); }
  bool in_intersection(geom::Vec2 p) const;
  /// Lane sharing `id`'s left (or right) boundary, travelling the same way.
  std::optional<int> left_neighbor(int id) const;
  std::optional<int> right_neighbor(int id) const;
  const LaneSegment & lane(int id) const;

private:
  const MapDocument * map_;
  std::map<int, std::size_t> by_id_;
  std::map<int, int> left_;
  std::map<int, int> right_;
  std::vector<std::array<double, 4>> bbox_;  // xmin, ymin, xmax, ymax per lane
};

/// Per-frame labels for one actor. `boxes[t]` is empty where the actor is
/// absent; labels at absent frames are kOther and carry no meaning.
std::vector<Action> label_actions(
  const std::vector<std::optional<OrientedBox2D>> & boxes, const LaneIndex & lanes, int horizon_frames = 30,
  const LabelRules & rules = {});
std::vector<Action> label_actions(
  const std::vector<std::optional<OrientedBox2D>> & boxes, const MapDocument & map, int horizon_frames = 30,
  const LabelRules & rules = {});

// --- Synthetic generator ---------------------------------------------------

struct GeneratorConfig
{
  int frame_count{60};
  int actors_min{6};
  int actors_max{12};
  /// Sampling weights per Action, indexed by index_of(Action).
  std::array<double, kNumActions> maneuver_weights{0.30, 0.12, 0.12, 0.08, 0.08, 0.12, 0.12, 0.06};
  double lane_width{3.5};
  double bike_lane_width{1.2};
  double parking_width{2.4};
  double arm_length{70.0};
  double boundary_width{0.5};
  double bike_lane_prob{0.5};
  double signal_prob{0.75};
  double unknown_light_prob{0.15};
  /// Points per meter of visible perimeter, per meter of range.
  double point_density{160.0};
  /// Ground clutter points per square meter.
  double clutter_density{0.05};
  double clutter_extent{30.0};
  double noise_sigma{0.03};
  double lidar_range{60.0};
  /// Actors are placed so their maneuver happens within this distance of ego.
  double view_radius{20.0};
  double ego_speed{0.0};
  int placement_attempts{200};

  /// Throws ConfigError on out-of-range values.
  void validate() const;
};

/// Key-value loader; every key is optional except `seed`.
struct GeneratorFile
{
  GeneratorConfig config;
  std::uint64_t seed{0};
};
GeneratorFile load_generator_config(const std::filesystem::path & path);
GeneratorFile parse_generator_config(std::string_view text, const std::string & source = "<config>");
void apply_generator_key(GeneratorConfig & cfg, const std::string & key, const std::string & value);

/// Deterministic for a fixed (config, seed). Throws GenerationError when the
/// requested actor count cannot be placed without collisions.
Scenario generate_scenario(const GeneratorConfig & config, std::uint64_t seed);

/// Builds the intersection map alone (exposed for tests and tools).
MapDocument build_intersection_map(const GeneratorConfig & config, std::uint64_t seed, int frame_count);

// --- Persistence -------------------------------------------------------------

inline constexpr std::string_view kScenarioFormat = "bevintent.scenario";
inline constexpr std::string_view kScenarioVersion = "v1";

std::string serialize_scenario(const Scenario & s);
/// Throws ParseError (line or field path) or VersionError; never returns a
/// partially filled scenario.
Scenario deserialize_scenario(std::string_view text);
void save_scenario(const Scenario & s, const std::filesystem::path & path);
Scenario load_scenario(const std::filesystem::path & path);

}  // namespace bevintent::scene

#endif  // BEVINTENT_SCENE_HPP_
