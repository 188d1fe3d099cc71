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

#include <algorithm>
#include <filesystem>
#include <random>
#include <set>

#include "bevintent/encoder.hpp"
#include "bevintent/errors.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace bevintent;
using namespace bevintent::encoder;
using geom::Vec2;
using scene::LightState;

namespace
{

encoder::VoxelConfig small_config()
{
  VoxelConfig cfg;
  cfg.length = 40.0;
  cfg.width = 40.0;
  cfg.height = 2.4;
  cfg.dl = cfg.dw = 0.4;
  cfg.dh = 0.6;
  cfg.t_past = 3;
  return cfg;
}

scene::LaneSegment straight_lane(int id, double y0)
{
  scene::LaneSegment l;
  l.id = id;
  l.centerline = {{{-10, y0 + 1.75}, {10, y0 + 1.75}}, 0.5};
  l.right = {{{{-10, y0}, {10, y0}}, 0.5}, scene::BoundaryKind::kConditional};
  l.left = {{{{-10, y0 + 3.5}, {10, y0 + 3.5}}, 0.5}, scene::BoundaryKind::kCrossable};
  l.surface = geom::normalized(geom::Polygon{{{-10, y0}, {10, y0}, {10, y0 + 3.5}, {-10, y0 + 3.5}}});
  return l;
}

std::set<std::pair<int, int>> cells_of(const MapTensor & t, int ch)
{
  std::set<std::pair<int, int>> out;
  for (int r = 0; r < t.dim(1); ++r) {
    for (int c = 0; c < t.dim(2); ++c) {
      if (t.at(ch, r, c) == 1) out.insert({r, c});
    }
  }
  return out;
}

std::set<std::pair<int, int>> as_set(const std::vector<geom::CellIndex> & cells)
{
  std::set<std::pair<int, int>> out;
  for (const auto & c : cells) out.insert({c.row, c.col});
  return out;
}

scene::MapDocument forced_light_map(std::uint64_t seed)
{
  scene::GeneratorConfig cfg;
  cfg.signal_prob = 1.0;
  cfg.unknown_light_prob = 0.0;
  return scene::build_intersection_map(cfg, seed, 440);
}

}  // namespace

TEST_CASE("default tensor shapes and empty inputs")
{
  const VoxelConfig cfg;
  CHECK(cfg.rows() == 720);
  CHECK(cfg.cols() == 400);
  CHECK(cfg.height_bins() == 29);
  const std::vector<scene::Sweep> sweeps(3);
  const auto lidar = voxelize_sweeps(sweeps, {}, cfg);
  CHECK(lidar.shape == std::vector<int>{290, 720, 400});
  CHECK(std::all_of(lidar.data.begin(), lidar.data.end(), [](auto v) { return v == 0; }));

  const auto map = rasterize_map(scene::MapDocument{}, 0, cfg, {});
  CHECK(map.shape == std::vector<int>{17, 720, 400});
  CHECK(std::all_of(map.data.begin(), map.data.end(), [](auto v) { return v == -1; }));
}

TEST_CASE("voxelize: single point index arithmetic and half-open extent")
{
  const VoxelConfig cfg;
  std::vector<scene::Sweep> sweeps(10);
  const auto grid = cfg.grid();
  const Vec2 c = grid.cell_center(360, 200);
  sweeps.back().points.push_back({c.x, c.y, 14.5 * 0.2});
  const auto t = voxelize_sweeps(sweeps, {}, cfg);
  std::size_t set = 0;
  for (auto v : t.data) set += v;
  CHECK(set == 1);
  CHECK(t.at(9 * 29 + 14, 360, 200) == 1);

  std::vector<scene::Sweep> edge(1);
  edge[0].points = {{72.0, 0.0, 1.0}, {0.0, 40.0, 1.0}, {0.0, 0.0, 5.8}, {-72.0, -40.0, 0.0}};
  const auto e = voxelize_sweeps(edge, {}, cfg);
  std::size_t n = 0;
  for (auto v : e.data) n += v;
  CHECK(n == 1);
  CHECK(e.at(9 * 29 + 0, 0, 0) == 1);
}

TEST_CASE("voxelize: fewer sweeps fill the newest slots, extra sweeps are ignored")
{
  const auto cfg = small_config();
  std::vector<scene::Sweep> one(1);
  one[0].points = {{0.1, 0.1, 0.1}};
  const auto t = voxelize_sweeps(one, {}, cfg);
  const int hb = cfg.height_bins();
  CHECK(t.at((cfg.t_past - 1) * hb, 50, 50) == 1);

  std::vector<scene::Sweep> many(5);
  many[0].points = {{0.1, 0.1, 0.1}};
  many[4].points = {{1.1, 0.1, 0.1}};
  const auto m = voxelize_sweeps(many, {}, cfg);
  std::size_t n = 0;
  for (auto v : m.data) n += v;
  CHECK(n == 1);
  CHECK(m.at((cfg.t_past - 1) * hb, 52, 50) == 1);
}

TEST_CASE("voxelize is permutation invariant within a sweep")
{
  const auto cfg = small_config();
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-25, 25), z(-0.5, 3.0);
  std::vector<scene::Sweep> s(1);
  for (int i = 0; i < 3000; ++i) s[0].points.push_back({u(rng), u(rng), z(rng)});
  const auto a = voxelize_sweeps(s, {}, cfg);
  std::shuffle(s[0].points.begin(), s[0].points.end(), rng);
  CHECK(voxelize_sweeps(s, {}, cfg) == a);
}

TEST_CASE("voxelize: ego-motion consistency across poses")
{
  // A static world seen from two ego poses. Re-aligning occupied voxels of
  // one view into the other must agree on at least 99% of them (one cell of
  // discretization slack).
  auto cfg = small_config();
  cfg.t_past = 1;
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-30, 30), z(0.0, 2.3);
  std::vector<geom::Point3> world;
  for (int i = 0; i < 4000; ++i) world.push_back({u(rng), u(rng), z(rng)});

  const geom::RigidPose pa{1.3, -2.1, 0.0, 0.4, 0.0, 0.0};
  const geom::RigidPose pb{-3.7, 1.9, 0.0, -0.9, 0.0, 0.0};
  const auto view = [&](const geom::RigidPose & ego) {
    std::vector<scene::Sweep> s(1);
    s[0].ego_pose = ego;
    s[0].points = geom::transform_points(world, geom::RigidPose{}, ego);
    return voxelize_sweeps(s, ego, cfg);
  };
  const auto ta = view(pa);
  const auto tb = view(pb);
  const auto grid = cfg.grid();
  int occupied = 0, agree = 0;
  for (int h = 0; h < ta.dim(0); ++h) {
    for (int r = 0; r < grid.rows; ++r) {
      for (int c = 0; c < grid.cols; ++c) {
        if (!ta.at(h, r, c)) continue;
        const Vec2 p = geom::transform_point2(grid.cell_center(r, c), pa, pb);
        const int rb = static_cast<int>(std::floor((p.x - grid.origin.x) / grid.resolution));
        const int cb = static_cast<int>(std::floor((p.y - grid.origin.y) / grid.resolution));
        if (rb < 1 || cb < 1 || rb >= grid.rows - 1 || cb >= grid.cols - 1) continue;
        ++occupied;
        bool hit = false;
        for (int dr = -1; dr <= 1 && !hit; ++dr) {
          for (int dc = -1; dc <= 1 && !hit; ++dc) hit = tb.at(h, rb + dr, cb + dc) != 0;
        }
        agree += hit ? 1 : 0;
      }
    }
  }
  REQUIRE(occupied > 500);
  CHECK(agree >= 0.99 * occupied);

  // Grid-aligned motion (whole cells, quarter turns) re-aligns exactly.
  const geom::RigidPose qa{0.0, 0.0, 0.0, 0.0, 0.0, 0.0};
  const geom::RigidPose qb{0.8, -1.2, 0.0, std::numbers::pi / 2, 0.0, 0.0};
  const auto xa = view(qa);
  const auto xb = view(qb);
  int exact_total = 0, exact_agree = 0;
  for (int h = 0; h < xa.dim(0); ++h) {
    for (int r = 0; r < grid.rows; ++r) {
      for (int c = 0; c < grid.cols; ++c) {
        if (!xa.at(h, r, c)) continue;
        const Vec2 p = geom::transform_point2(grid.cell_center(r, c), qa, qb);
        const int rb = static_cast<int>(std::floor((p.x - grid.origin.x) / grid.resolution));
        const int cb = static_cast<int>(std::floor((p.y - grid.origin.y) / grid.resolution));
        if (rb < 0 || cb < 0 || rb >= grid.rows || cb >= grid.cols) continue;
        ++exact_total;
        exact_agree += xb.at(h, rb, cb) ? 1 : 0;
      }
    }
  }
  REQUIRE(exact_total > 500);
  CHECK(exact_agree >= 0.99 * exact_total);
}

TEST_CASE("rasterize_map: straight lane with a green light")
{
  const auto cfg = small_config();
  scene::MapDocument map;
  auto lane = straight_lane(1, 0.0);
  lane.control.light_id = "S";
  map.lanes.push_back(lane);
  map.traffic_lights["S"] = {LightState::kGreen};
  const auto t = rasterize_map(map, 0, cfg, {});
  const auto expect = as_set(oracle::raster_polygon(lane.surface, cfg.grid()));
  REQUIRE(!expect.empty());
  CHECK(cells_of(t, kLaneStraight) == expect);
  CHECK(cells_of(t, kLightGreen) == expect);
  for (int ch : {kLaneLeft, kLaneRight, kBikeLane, kBusLane, kLightYellow, kLightRed, kProtected, kYield, kStop}) {
    CHECK_MESSAGE(cells_of(t, ch).empty(), map_channel_name(ch));
  }
  CHECK(cells_of(t, kBoundaryCrossable) == as_set(oracle::raster_polyline(lane.left.line, cfg.grid())));
  CHECK(cells_of(t, kBoundaryConditional) == as_set(oracle::raster_polyline(lane.right.line, cfg.grid())));
}

TEST_CASE("rasterize_map: sign routing, bike and bus lanes")
{
  const auto cfg = small_config();
  scene::MapDocument map;
  auto stop = straight_lane(1, 0.0);
  stop.control.sign = scene::SignKind::kStop;
  map.lanes.push_back(stop);
  const auto t = rasterize_map(map, 0, cfg, {});
  const auto expect = as_set(oracle::raster_polygon(stop.surface, cfg.grid()));
  CHECK(cells_of(t, kStop) == expect);
  for (int ch = kLightGreen; ch <= kYield; ++ch) CHECK(cells_of(t, ch).empty());

  scene::MapDocument m2;
  auto bike = straight_lane(1, 0.0);
  bike.lane_class = scene::LaneClass::kBike;
  auto bus = straight_lane(2, 3.5);
  bus.lane_class = scene::LaneClass::kBus;
  bus.turn = scene::TurnType::kRight;
  m2.lanes = {bike, bus};
  const auto t2 = rasterize_map(m2, 0, cfg, {});
  CHECK(cells_of(t2, kBikeLane) == as_set(oracle::raster_polygon(bike.surface, cfg.grid())));
  CHECK(cells_of(t2, kBusLane) == as_set(oracle::raster_polygon(bus.surface, cfg.grid())));
  CHECK(cells_of(t2, kLaneRight) == as_set(oracle::raster_polygon(bus.surface, cfg.grid())));
  CHECK(cells_of(t2, kLaneStraight).empty());
}

TEST_CASE("rasterize_map: geometry follows the ego pose")
{
  const auto cfg = small_config();
  scene::MapDocument map;
  map.road_polygons.push_back(geom::normalized(geom::Polygon{{{5, 5}, {9, 5}, {9, 7}, {5, 7}}}));
  const geom::RigidPose ego{5.0, 5.0, 0.0, std::numbers::pi / 2, 0.0, 0.0};
  const auto t = rasterize_map(map, 0, cfg, ego);
  geom::Polygon local;
  for (const auto & v : map.road_polygons[0].vertices) local.vertices.push_back(geom::transform_point2(v, {}, ego));
  CHECK(cells_of(t, kRoad) == as_set(oracle::raster_polygon(local, cfg.grid())));
}

TEST_CASE("infer_unobserved_lights")
{
  auto map = forced_light_map(1);
  // Find a frame where L0 is green: S1 and S3 cross its path.
  int frame = -1;
  for (int f = 0; f < 440; ++f) {
    if (map.traffic_lights.at("L0")[f] == LightState::kGreen) {
      frame = f;
      break;
    }
  }
  REQUIRE(frame >= 0);

  SUBCASE("unknown straight lane conflicting with a green protected turn becomes red")
  {
    auto m = map;
    m.traffic_lights["S1"][frame] = LightState::kUnknown;
    CHECK(infer_unobserved_lights(m, frame).at("S1") == LightState::kRed);
  }
  SUBCASE("conflict with a red protected turn leaves it unknown")
  {
    auto m = map;
    for (const char * id : {"L0", "L1", "L2", "L3"}) m.traffic_lights[id][frame] = LightState::kRed;
    m.traffic_lights["S1"][frame] = LightState::kUnknown;
    CHECK(infer_unobserved_lights(m, frame).at("S1") == LightState::kUnknown);
  }
  SUBCASE("no conflicts leaves states unchanged")
  {
    const auto states = infer_unobserved_lights(map, frame);
    for (const auto & [id, timeline] : map.traffic_lights) CHECK(states.at(id) == timeline[frame]);
  }
  SUBCASE("adjacent lanes sharing an edge do not conflict")
  {
    auto m = map;
    // S0's connector starts next to L0's; they share an edge but never cross.
    m.traffic_lights["S0"][frame] = LightState::kUnknown;
    for (const char * id : {"L1", "L2", "L3"}) m.traffic_lights[id][frame] = LightState::kRed;
    const auto states = infer_unobserved_lights(m, frame);
    CHECK(states.at("S0") == LightState::kUnknown);
  }
}

TEST_CASE("rasterize_map: light channels exclusive and +1 cells inside their sources")
{
  auto cfg = small_config();
  cfg.length = cfg.width = 48.0;
  scene::GeneratorConfig gcfg;
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const auto map = scene::build_intersection_map(gcfg, seed, 60);
    const geom::RigidPose ego{3.0 * seed, -2.0, 0.0, 0.3 * seed, 0.0, 0.0};
    const int frame = static_cast<int>(seed * 13 % 60);
    const auto t = rasterize_map(map, frame, cfg, ego);
    const auto grid = cfg.grid();

    for (int r = 0; r < grid.rows; ++r) {
      for (int c = 0; c < grid.cols; ++c) {
        int lit = 0;
        for (int ch = kLightGreen; ch <= kLightRed; ++ch) lit += t.at(ch, r, c) == 1;
        CHECK(lit <= 1);
      }
    }
    for (auto v : t.data) CHECK((v == 1 || v == -1));

    std::array<std::set<std::pair<int, int>>, kMapChannels> allowed;
    const auto local_poly = [&](const geom::Polygon & p) {
      geom::Polygon out;
      for (const auto & v : p.vertices) out.vertices.push_back(geom::transform_point2(v, {}, ego));
      return out;
    };
    const auto local_line = [&](const geom::Polyline & l) {
      geom::Polyline out{{}, l.width};
      for (const auto & v : l.vertices) out.vertices.push_back(geom::transform_point2(v, {}, ego));
      return out;
    };
    const auto states = infer_unobserved_lights(map, frame);
    for (const auto & lane : map.lanes) {
      for (const auto * b : {&lane.left, &lane.right}) {
        const int ch = kBoundaryCrossable + static_cast<int>(b->kind);
        for (const auto & cell : oracle::raster_polyline(local_line(b->line), grid)) {
          allowed[ch].insert({cell.row, cell.col});
        }
      }
      const auto surf = as_set(oracle::raster_polygon(local_poly(lane.surface), grid));
      std::vector<int> chans;
      if (lane.lane_class == scene::LaneClass::kBike) {
        chans.push_back(kBikeLane);
      } else {
        chans.push_back(kLaneStraight + static_cast<int>(lane.turn));
      }
      if (lane.control.light_id) {
        const auto s = states.at(*lane.control.light_id);
        if (s != LightState::kUnknown) chans.push_back(kLightGreen + static_cast<int>(s));
        if (lane.is_protected && s == LightState::kGreen) chans.push_back(kProtected);
      }
      if (lane.control.sign) chans.push_back(lane.control.sign == scene::SignKind::kYield ? kYield : kStop);
      for (int ch : chans) allowed[ch].insert(surf.begin(), surf.end());
    }
    for (int ch = kBoundaryCrossable; ch < kMapChannels; ++ch) {
      for (const auto & cell : cells_of(t, ch)) {
        CHECK_MESSAGE(allowed[ch].contains(cell), map_channel_name(ch) << " " << cell.first << "," << cell.second);
      }
    }
  }
}

TEST_CASE("tensor dump round trip and diagnostics")
{
  Tensor<float> t({2, 3, 4});
  for (std::size_t i = 0; i < t.size(); ++i) t.data[i] = 0.5f * static_cast<float>(i) - 3.0f;
  const auto bytes = encode_tensor(t);
  CHECK(bytes.starts_with("BEVT v1 f32 3 2 3 4\n"));
  CHECK(decode_tensor<float>(bytes) == t);
  CHECK_THROWS_AS(decode_tensor<double>(bytes), ParseError);
  CHECK_THROWS_AS(decode_tensor<float>(bytes.substr(0, bytes.size() - 1)), ParseError);
  auto v2 = bytes;
  v2.replace(5, 2, "v2");
  CHECK_THROWS_AS(decode_tensor<float>(v2), VersionError);

  const auto dir = std::filesystem::temp_directory_path() / "bevintent_test_tensor";
  std::filesystem::create_directories(dir);
  MapTensor m({17, 5, 6}, -1);
  m.at(3, 2, 1) = 1;
  write_tensor(dir / "m.bevt", m);
  CHECK(read_tensor<std::int8_t>(dir / "m.bevt") == m);
  std::filesystem::remove_all(dir);
}

TEST_CASE("voxel config validation")
{
  VoxelConfig cfg;
  cfg.length = 144.1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = VoxelConfig{};
  cfg.t_past = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
