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
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "bevintent/errors.hpp"
#include "bevintent/pipeline.hpp"
#include "doctest.h"

using namespace bevintent;
using namespace bevintent::pipeline;

namespace
{

RunConfig tiny_config()
{
  auto c = toy_config();
  c.network.stream_widths = {4, 8, 8};
  c.network.fusion_width = 8;
  c.network.header_width = 8;
  c.network.intent_embedding = 4;
  c.train.steps = 6;
  c.train.batch_size = 2;
  c.master_seed = 99;
  return c;
}

struct Fixture
{
  RunConfig cfg = tiny_config();
  anchors::AnchorGrid grid = anchors::build_anchor_grid(cfg.voxel, cfg.anchor);
  std::vector<scene::Scenario> scenarios;
  std::vector<Sample> samples;

  explicit Fixture(int n = 2, int stride = 6)
  {
    for (int i = 0; i < n; ++i) {
      scenarios.push_back(scene::generate_scenario(cfg.generator, derive_seed(cfg.master_seed, SeedPurpose::kScenario, i)));
    }
    samples = build_samples(scenarios, cfg, grid, stride);
  }
};

}  // namespace

TEST_CASE("seed fan-out is deterministic and collision free")
{
  std::uint64_t s = 0;
  CHECK(splitmix64(s) == 0xe220a8397b1dcdafULL);
  CHECK(derive_seed(1, SeedPurpose::kInit, 3) == derive_seed(1, SeedPurpose::kInit, 3));
  std::set<std::uint64_t> seen;
  for (std::uint64_t m : {0ULL, 1ULL, 42ULL}) {
    for (auto p : {SeedPurpose::kScenario, SeedPurpose::kInit, SeedPurpose::kShuffle, SeedPurpose::kDownsample,
                   SeedPurpose::kAugment}) {
      for (std::uint64_t i = 0; i < 50; ++i) seen.insert(derive_seed(m, p, i));
    }
  }
  CHECK(seen.size() == 3 * 5 * 50);
}

TEST_CASE("run config keys, presets and validation")
{
  auto c = toy_config();
  CHECK_NOTHROW(c.validate());
  CHECK(c.network.lidar_channels == 20);
  CHECK(c.voxel.rows() == 160);
  CHECK_NOTHROW(default_config().validate());
  CHECK(default_config().network.lidar_channels == 290);

  apply_run_key(c, "seed", "7");
  apply_run_key(c, "train.steps", "12");
  apply_run_key(c, "adam.lr", "0.002");
  apply_run_key(c, "loss.alpha", "0.5");
  apply_run_key(c, "tracker.gate", "3");
  apply_run_key(c, "eval.min_points", "2");
  apply_run_key(c, "anchor.ratios", "1:1,1:2,2:1,1:5,5:1");
  CHECK(c.master_seed == 7);
  CHECK(c.train.steps == 12);
  CHECK(c.train.adam.lr == 0.002);
  CHECK(c.loss.alpha == 0.5);
  CHECK(c.tracker.gate == 3.0);
  CHECK(c.eval.min_points == 2);
  CHECK(c.anchor.ratios[3] == std::pair<double, double>{1, 5});
  CHECK_THROWS_AS(apply_run_key(c, "train.nope", "1"), ConfigError);
  CHECK_THROWS_AS(apply_run_key(c, "bogus.key", "1"), ConfigError);
  CHECK_THROWS_AS(apply_run_key(c, "train.steps", "many"), ConfigError);

  apply_run_key(c, "preset", "default");
  CHECK(c.master_seed == 7);
  CHECK(c.network.lidar_channels == 290);

  auto bad = toy_config();
  bad.voxel.t_past = 4;
  CHECK_THROWS_AS(bad.validate(), ConfigError);  // lidar channel mismatch
  bad = toy_config();
  bad.voxel.length = 44.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);  // 110 rows, not divisible by 8
  bad = toy_config();
  bad.loss.intent_steps = 2;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = toy_config();
  bad.train.batch_size = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  const auto j = to_json(toy_config());
  CHECK(j.at("voxel").at("t_past") == 5);
  CHECK(j.at("network").at("lidar_channels") == 20);
}

TEST_CASE("config files apply in order and report the line")
{
  const auto dir = std::filesystem::temp_directory_path() / "bevintent_test_pipeline";
  std::filesystem::create_directories(dir);
  const auto path = dir / "run.cfg";
  {
    std::ofstream os(path);
    os << "# toy run\npreset = toy\nseed = 5\ntrain.steps = 30\n";
  }
  RunConfig c;
  apply_config_file(c, path);
  CHECK(c.master_seed == 5);
  CHECK(c.train.steps == 30);
  CHECK(c.voxel.t_past == 5);
  {
    std::ofstream os(path);
    os << "preset = toy\n\ntrain.batch_size = x\n";
  }
  try {
    apply_config_file(c, path);
    FAIL("expected ConfigError");
  } catch (const ConfigError & e) {
    CHECK(std::string(e.what()).find("run.cfg:3") != std::string::npos);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("samples carry consistent supervision")
{
  Fixture fx(2, 8);
  REQUIRE(!fx.samples.empty());
  const auto [first, last] = usable_frames(fx.scenarios[0], fx.cfg);
  CHECK(first == 4);
  CHECK(last == 60 - 1 - 30);
  for (const auto & s : fx.samples) {
    CHECK(s.lidar.shape == std::vector<int>{20, 160, 160});
    CHECK(s.map.shape == std::vector<int>{17, 160, 160});
    REQUIRE(s.targets.cell_labels.size() == 1);
    CHECK(s.targets.cell_labels[0].size() == 20u * 20u);
    // Every vehicle has a positive anchor, and the regression list matches q.
    std::vector<int> hits(s.ground_truth.size(), 0);
    std::size_t positives = 0;
    for (std::size_t a = 0; a < fx.grid.size(); ++a) {
      if (!s.targets.assignment.q[a]) continue;
      ++positives;
      ++hits[static_cast<std::size_t>(s.targets.assignment.matched[a])];
    }
    CHECK(positives == s.targets.regression.size());
    for (int h : hits) CHECK(h >= 1);
    for (const auto & g : s.ground_truth) {
      CHECK(g.future.size() == 6);
      CHECK(g.action >= 0);
      CHECK(g.action < 8);
      const auto grid = fx.cfg.voxel.grid();
      CHECK(g.box.cx >= grid.origin.x);
      CHECK(g.box.cx < grid.x_max());
    }
  }
}

TEST_CASE("ground truth is expressed in the ego frame of its frame")
{
  auto cfg = tiny_config();
  cfg.generator.ego_speed = 5.0;
  const auto sc = scene::generate_scenario(cfg.generator, 3);
  const int frame = 10;
  const auto gt = ground_truth_at(sc, frame, cfg);
  const auto & ego = sc.sweeps[frame].ego_pose;
  for (const auto & g : gt) {
    const auto & track = *std::find_if(sc.tracks.begin(), sc.tracks.end(), [&](const auto & t) { return t.id == g.id; });
    const auto back = geom::transform_box(g.box, ego, geom::RigidPose{});
    CHECK(back.cx == doctest::Approx(track.frames[frame].box.cx));
    CHECK(back.cy == doctest::Approx(track.frames[frame].box.cy));
    if (g.future[1]) {
      const auto fb = geom::transform_box(*g.future[1], ego, geom::RigidPose{});
      CHECK(fb.cx == doctest::Approx(track.frames[frame + 10].box.cx));
    }
  }
  CHECK_THROWS_AS(ground_truth_at(sc, 60, cfg), ConfigError);
}

TEST_CASE("cell labels cover box interiors and centres")
{
  const auto cfg = tiny_config();
  const auto grid = anchors::build_anchor_grid(cfg.voxel, cfg.anchor);
  metrics::GroundTruth a;
  a.box = {0.0, 0.0, 4.5, 3.6, 0.0};
  a.action = 1;
  metrics::GroundTruth b;
  b.box = {10.0, 10.0, 1.0, 1.0, 0.3};  // smaller than a cell
  b.action = 5;
  const std::vector<metrics::GroundTruth> gt{a, b};
  const auto labels = cell_labels(gt, grid);
  int ones = 0, fives = 0;
  for (int v : labels) {
    ones += v == 1;
    fives += v == 5;
  }
  // Box centred on a cell corner covers the four cells around the origin.
  CHECK(ones == 4);
  CHECK(fives == 1);
  const auto c = grid.cell_center(9, 9);
  CHECK(labels[9 * 20 + 9] == 1);
  CHECK(c.x == doctest::Approx(-0.8));
  // A narrow car covers no cell centre across its width; only its centre
  // cell is labelled.
  metrics::GroundTruth narrow = a;
  narrow.box.h = 1.4;
  const auto one = cell_labels(std::vector<metrics::GroundTruth>{narrow}, grid);
  CHECK(std::count(one.begin(), one.end(), 1) == 1);
  CHECK(one[10 * 20 + 10] == 1);
}

TEST_CASE("quarter-turn rotation is exact and cycles after four turns")
{
  Fixture fx(1, 12);
  const auto & s = fx.samples.front();
  const auto r1 = rotate_sample(s, 1, fx.grid);
  const auto r4 = rotate_sample(rotate_sample(r1, 2, fx.grid), 1, fx.grid);
  CHECK(r4.lidar == s.lidar);
  CHECK(r4.map == s.map);
  CHECK(r4.targets.assignment.q == s.targets.assignment.q);
  for (std::size_t i = 0; i < s.ground_truth.size(); ++i) {
    CHECK(r1.ground_truth[i].box.cx == doctest::Approx(-s.ground_truth[i].box.cy));
    CHECK(r1.ground_truth[i].box.cy == doctest::Approx(s.ground_truth[i].box.cx));
    CHECK(r4.ground_truth[i].box.cx == doctest::Approx(s.ground_truth[i].box.cx));
  }
  // Lidar cell (a, b) of the rotation is (b, n - 1 - a) of the source.
  CHECK(r1.lidar.at(3, 10, 20) == s.lidar.at(3, 20, 111 - 10));
  CHECK(r1.targets.assignment.positives() >= r1.ground_truth.size());
}

TEST_CASE("batches walk a fresh permutation every epoch")
{
  Fixture fx(1, 3);
  auto cfg = fx.cfg;
  cfg.train.batch_size = 3;
  Trainer tr(cfg, fx.samples);
  const std::size_t n = fx.samples.size();
  const long steps_per_epoch = static_cast<long>(n / 3);
  std::vector<std::size_t> seen;
  for (long s = 0; s < steps_per_epoch; ++s) {
    const auto b = tr.batch_indices(s);
    seen.insert(seen.end(), b.begin(), b.end());
  }
  std::sort(seen.begin(), seen.end());
  CHECK(std::adjacent_find(seen.begin(), seen.end()) == seen.end());
  CHECK(tr.batch_indices(5) == tr.batch_indices(5));
}

TEST_CASE("training is deterministic and resumes exactly")
{
  Fixture fx(2, 6);
  std::vector<double> a, b;
  {
    Trainer tr(fx.cfg, fx.samples);
    tr.run([&](long, const loss::LossBreakdown & l) { a.push_back(l.total); });
  }
  {
    Trainer tr(fx.cfg, fx.samples);
    for (int i = 0; i < 3; ++i) b.push_back(tr.step().total);
    const auto dir = std::filesystem::temp_directory_path() / "bevintent_test_resume";
    std::filesystem::create_directories(dir);
    net::save_checkpoint(tr.checkpoint(), dir / "c.ckpt");
    Trainer again(fx.cfg, fx.samples);
    again.resume(net::load_checkpoint(dir / "c.ckpt"));
    CHECK(again.steps_done() == 3);
    again.run([&](long step, const loss::LossBreakdown & l) {
      CHECK(step >= 4);
      b.push_back(l.total);
    });
    std::filesystem::remove_all(dir);
  }
  REQUIRE(a.size() == 6);
  CHECK(a == b);
}

TEST_CASE("a short run lowers the loss")
{
  Fixture fx(5, 4);
  auto cfg = fx.cfg;
  cfg.train.steps = 50;
  cfg.train.batch_size = 2;
  Trainer tr(cfg, fx.samples);
  double first = 0.0, last = 0.0;
  tr.run([&](long step, const loss::LossBreakdown & l) {
    if (step == 1) first = l.total;
    if (step == 50) last = l.total;
  });
  CHECK(last < first);
}

TEST_CASE("prediction and evaluation plumbing")
{
  Fixture fx(1, 1);
  Trainer tr(fx.cfg, fx.samples);
  const auto pred = predict_scenario(tr.network(), fx.scenarios[0], fx.samples, fx.cfg, fx.grid);
  CHECK(pred.frames.size() == fx.samples.size());
  CHECK(pred.scenario_seed == fx.scenarios[0].seed);
  for (const auto & f : pred.frames) CHECK(f.track_ids.size() == f.detections.size());
  const auto frames = eval_frames(pred, fx.samples);
  const auto report = metrics::evaluate(frames, fx.cfg.eval);
  for (const auto & a : report.ap) {
    CHECK(a.ap >= 0.0);
    CHECK(a.ap <= 1.0);
  }
  const auto base = constant_position(frames);
  for (const auto & f : base) {
    for (const auto & d : f.detections) {
      for (const auto & w : d.waypoints) CHECK(w == d.box);
    }
  }
  // Ground truth fed back as predictions scores perfectly.
  const auto perfect = pipeline::ground_truth_as_predictions(frames);
  const auto pr = metrics::evaluate(perfect, fx.cfg.eval);
  CHECK(pr.ap[0].ap == doctest::Approx(1.0));
  CHECK(pr.regression.horizons[0].l2 == doctest::Approx(0.0));
  CHECK(pr.intention.mean_accuracy == 1.0);
}
