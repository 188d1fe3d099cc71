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

#include <doctest.h>

#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <regex>
#include <sstream>

#include "bevintent/cli/commands.hpp"
#include "bevintent/errors.hpp"
#include "bevintent/kvfile.hpp"

using namespace bevintent;
using namespace bevintent::cli;
namespace fs = std::filesystem;

namespace
{

struct TempDir
{
  fs::path path;
  explicit TempDir(const std::string & tag)
  {
    path = fs::temp_directory_path() / ("bevintent_cli_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

struct Run
{
  int code{0};
  std::string out;
  std::string err;
};

Run run(std::vector<std::string> args)
{
  args.insert(args.begin(), "bevintent");
  std::vector<const char *> argv;
  for (const auto & a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  Run r;
  r.code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

const std::vector<std::string> kTiny = {
  "--seed", "7",
  "--set", "network.stream_widths=4,8,8",
  "--set", "network.fusion_width=8",
  "--set", "network.header_width=8",
  "--set", "network.intent_embedding=4",
  "--set", "train.batch_size=2",
  "--set", "train.frame_stride=4",
};

std::vector<std::string> tiny(std::vector<std::string> extra)
{
  auto args = kTiny;
  args.insert(args.end(), extra.begin(), extra.end());
  return args;
}

std::string slurp(const fs::path & p) { return read_text_file(p); }

std::vector<std::string> csv_lines(const fs::path & p)
{
  std::vector<std::string> out;
  std::stringstream ss(slurp(p));
  for (std::string line; std::getline(ss, line);) out.push_back(line);
  return out;
}

double intent_arrow_length(const std::string & svg, const std::string & action)
{
  const std::regex re("<line class=\"intent\" data-action=\"" + action +
                      "\"[^>]*x1=\"([-0-9.]+)\" y1=\"([-0-9.]+)\" x2=\"([-0-9.]+)\" y2=\"([-0-9.]+)\"");
  std::smatch m;
  if (!std::regex_search(svg, m, re)) return -1.0;
  return std::hypot(std::stod(m[3]) - std::stod(m[1]), std::stod(m[4]) - std::stod(m[2]));
}

}  // namespace

TEST_CASE("manifest round trip and parse errors")
{
  Manifest m;
  m.entries.push_back({"a.json", 12345678901234567890ULL, "train", {1, 2, 3, 4, 5, 6, 7, 8}});
  m.entries.push_back({"b.json", 3, "test", {}});
  const auto text = serialize_manifest(m);
  const auto back = parse_manifest(text, "m.csv");
  REQUIRE(back.entries.size() == 2);
  CHECK(back.entries[0].seed == 12345678901234567890ULL);
  CHECK(back.entries[0].maneuvers == m.entries[0].maneuvers);
  CHECK(back.entries[1].split == "test");
  CHECK(serialize_manifest(back) == text);
  CHECK(back.split("train").size() == 1);
  CHECK(back.split("all").size() == 2);

  try {
    parse_manifest(text + "c.json,x,train,0,0,0,0,0,0,0,0\n", "m.csv");
    FAIL("expected ParseError");
  } catch (const ParseError & e) {
    CHECK(e.where() == "m.csv:4");
  }
  CHECK_THROWS_AS(parse_manifest("path,seed\n", "m.csv"), VersionError);
}

TEST_CASE("synth is deterministic, handles n = 0 and refuses unwritable targets")
{
  TempDir tmp("synth");
  const auto a = tmp.path / "a";
  const auto b = tmp.path / "b";
  REQUIRE(run({"--seed", "5", "--dataset", a.string(), "synth", "-n", "1"}).code == 0);
  REQUIRE(run({"--seed", "5", "--dataset", b.string(), "synth", "-n", "1"}).code == 0);
  CHECK(slurp(a / "scenario_0000.json") == slurp(b / "scenario_0000.json"));
  CHECK(slurp(a / "manifest.csv") == slurp(b / "manifest.csv"));
  CHECK_FALSE(fs::exists(a / kLockName));

  const auto e = tmp.path / "empty";
  REQUIRE(run({"--dataset", e.string(), "synth", "-n", "0"}).code == 0);
  CHECK(load_manifest(e / "manifest.csv").entries.empty());

  // A regular file where the directory should be.
  write_text_file(tmp.path / "blocker", "x");
  const auto bad = tmp.path / "blocker" / "ds";
  const auto r = run({"--dataset", bad.string(), "synth", "-n", "2"});
  CHECK(r.code == 1);
  CHECK(r.err.find("cannot create") != std::string::npos);
  CHECK_FALSE(fs::exists(bad / "manifest.csv"));

  CHECK(run({"--dataset", e.string(), "synth", "-n", "2", "--holdout", "3"}).code == 1);
}

TEST_CASE("synth maneuver histogram follows the configured weights")
{
  TempDir tmp("hist");
  REQUIRE(run({"--seed", "11", "--dataset", tmp.path.string(), "synth", "-n", "100"}).code == 0);
  const auto m = load_manifest(tmp.path / "manifest.csv");
  REQUIRE(m.entries.size() == 100);
  std::array<double, scene::kNumActions> counts{};
  double total = 0.0;
  for (const auto & e : m.entries) {
    for (int a = 0; a < scene::kNumActions; ++a) {
      counts[static_cast<std::size_t>(a)] += e.maneuvers[static_cast<std::size_t>(a)];
      total += e.maneuvers[static_cast<std::size_t>(a)];
    }
  }
  const scene::GeneratorConfig g;
  double wsum = 0.0;
  for (double w : g.maneuver_weights) wsum += w;
  for (int a = 0; a < scene::kNumActions; ++a) {
    CAPTURE(a);
    CHECK(std::abs(counts[static_cast<std::size_t>(a)] / total - g.maneuver_weights[static_cast<std::size_t>(a)] / wsum) <= 0.05);
  }
}

TEST_CASE("usage and configuration errors exit with 1")
{
  CHECK(run({}).code == 1);
  CHECK(run({"frobnicate"}).code == 1);
  CHECK(run({"--help"}).code == 0);
  CHECK(run({"--set", "voxel.dl=-1", "synth", "-n", "1", "--dataset", "/tmp/never"}).code == 1);
  CHECK_FALSE(fs::exists("/tmp/never"));
  CHECK(run({"--set", "nonsense", "synth", "-n", "1"}).code == 1);
  CHECK(run({"--preset", "huge", "synth", "-n", "1"}).code == 1);

  TempDir tmp("cfgfile");
  write_text_file(tmp.path / "run.cfg", "train.steps = 10\nvoxel.bogus = 3\n");
  const auto r = run({"--config", (tmp.path / "run.cfg").string(), "synth", "-n", "0"});
  CHECK(r.code == 1);
  CHECK(r.err.find("run.cfg:2") != std::string::npos);

  // Missing manifest is caught before anything is written.
  const auto out = tmp.path / "out";
  CHECK(run({"--dataset", (tmp.path / "nothing").string(), "--output", out.string(), "train"}).code == 1);
  CHECK_FALSE(fs::exists(out));
}

TEST_CASE("a held lock is a runtime error")
{
  TempDir tmp("lock");
  REQUIRE(run({"--dataset", tmp.path.string(), "synth", "-n", "0"}).code == 0);
  const OutputLock held(tmp.path);
  CHECK_THROWS_AS(OutputLock(tmp.path), std::runtime_error);
  const auto r = run({"--dataset", tmp.path.string(), "synth", "-n", "0"});
  CHECK(r.code == 2);
  CHECK(r.err.find("locked") != std::string::npos);
}

TEST_CASE("train, resume, eval, predict and viz on a toy set")
{
  TempDir tmp("e2e");
  const auto ds = (tmp.path / "ds").string();
  REQUIRE(run(tiny({"--dataset", ds, "synth", "-n", "6", "--holdout", "1"})).code == 0);

  const auto r1 = (tmp.path / "r1").string();
  const auto r2 = (tmp.path / "r2").string();
  const auto steps = std::vector<std::string>{"--set", "train.steps=50", "--set", "train.checkpoint_every=25"};
  auto a1 = tiny({"--dataset", ds, "--output", r1});
  a1.insert(a1.end(), steps.begin(), steps.end());
  a1.push_back("train");
  REQUIRE(run(a1).code == 0);

  SUBCASE("loss decreases and the log parses")
  {
    const auto lines = csv_lines(fs::path(r1) / "train.csv");
    REQUIRE(lines.size() == 51);
    const auto first = loss::parse_breakdown_csv_row(lines[1], 1, 7);
    const auto last = loss::parse_breakdown_csv_row(lines[50], 1, 7);
    CHECK(first.first == 1);
    CHECK(last.first == 50);
    CHECK(last.second.total < first.second.total);
    CHECK(loss::breakdown_csv_row(last.first, last.second) == lines[50]);
    CHECK(fs::exists(fs::path(r1) / "checkpoint_000025.ckpt"));
    CHECK(fs::exists(fs::path(r1) / "model.ckpt"));
  }

  SUBCASE("same seed gives an identical log; resume continues it")
  {
    auto a2 = tiny({"--dataset", ds, "--output", r2});
    a2.insert(a2.end(), steps.begin(), steps.end());
    a2.push_back("train");
    REQUIRE(run(a2).code == 0);
    CHECK(slurp(fs::path(r1) / "train.csv") == slurp(fs::path(r2) / "train.csv"));

    auto a3 = a2;
    a3.push_back("--resume");
    a3.push_back((fs::path(r2) / "checkpoint_000025.ckpt").string());
    const auto r = run(a3);
    REQUIRE(r.code == 0);
    CHECK(r.err.find("resumed at step 25") != std::string::npos);
    CHECK(slurp(fs::path(r1) / "train.csv") == slurp(fs::path(r2) / "train.csv"));
    const auto c1 = net::load_checkpoint(fs::path(r1) / "model.ckpt");
    const auto c2 = net::load_checkpoint(fs::path(r2) / "model.ckpt");
    CHECK(c1.step == c2.step);
    for (const auto & [name, t] : c1.params) {
      CAPTURE(name);
      CHECK(t.data == c2.params.at(name).data);
    }
  }

  SUBCASE("eval reports parse and rates lie in [0, 1]")
  {
    const auto ev = tmp.path / "ev";
    const auto r = run(tiny({"--dataset", ds, "--output", ev.string(), "--checkpoint", (fs::path(r1) / "model.ckpt").string(), "eval"}));
    REQUIRE(r.code == 0);
    const auto text = slurp(ev / "report.csv");
    const auto rep = metrics::parse_report_csv(text, "report.csv");
    CHECK(metrics::report_csv(rep) == text);
    for (const auto & ap : rep.ap) {
      CHECK(ap.ap >= 0.0);
      CHECK(ap.ap <= 1.0);
      CHECK(ap.recall >= 0.0);
      CHECK(ap.recall <= 1.0);
    }
    for (const auto & c : rep.intention.classes) {
      if (!c.present) continue;
      for (double v : {c.accuracy, c.precision, c.recall, c.f1}) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
      }
    }
    CHECK(fs::exists(ev / "report.txt"));
    CHECK(fs::exists(ev / "by_action.csv"));
  }

  SUBCASE("config and checkpoint mismatch names the tensor")
  {
    const auto ev = tmp.path / "bad";
    const auto r = run({"--dataset", ds, "--output", ev.string(), "--checkpoint", (fs::path(r1) / "model.ckpt").string(), "eval"});
    CHECK(r.code == 1);
    CHECK(r.err.find("tensor 'lidar.stage0.block0.conv1.weight'") != std::string::npos);
    CHECK_FALSE(fs::exists(ev / "report.csv"));
  }

  SUBCASE("saved predictions evaluate like live inference; viz renders them")
  {
    const auto pr = tmp.path / "pr";
    const auto ckpt = (fs::path(r1) / "model.ckpt").string();
    REQUIRE(run(tiny({"--dataset", ds, "--output", pr.string(), "--checkpoint", ckpt, "predict"})).code == 0);
    const auto pfile = pr / "scenario_0005.predictions.jsonl";
    REQUIRE(fs::exists(pfile));
    const auto live = tmp.path / "live";
    const auto saved = tmp.path / "saved";
    REQUIRE(run(tiny({"--dataset", ds, "--output", live.string(), "--checkpoint", ckpt, "eval"})).code == 0);
    REQUIRE(run(tiny({"--dataset", ds, "--output", saved.string(), "eval", "--predictions", pr.string()})).code == 0);
    CHECK(slurp(live / "report.csv") == slurp(saved / "report.csv"));

    const auto svg1 = tmp.path / "a.svg";
    const auto svg2 = tmp.path / "b.svg";
    const auto scen = (fs::path(ds) / "scenario_0005.json").string();
    REQUIRE(run({"viz", scen, "--predictions", pfile.string(), "--frame", "20", "-o", svg1.string()}).code == 0);
    REQUIRE(run({"viz", scen, "--predictions", pfile.string(), "--frame", "20", "-o", svg2.string()}).code == 0);
    CHECK(slurp(svg1) == slurp(svg2));
    CHECK(slurp(svg1).find("<g id=\"predictions\"") != std::string::npos);
  }
}

TEST_CASE("eval of ground truth and of an empty split")
{
  TempDir tmp("evalgt");
  const auto ds = (tmp.path / "ds").string();
  REQUIRE(run({"--dataset", ds, "synth", "-n", "2", "--holdout", "1"}).code == 0);
  const auto ev = tmp.path / "gt";
  REQUIRE(run({"--dataset", ds, "--output", ev.string(), "eval", "--ground-truth"}).code == 0);
  const auto rep = metrics::parse_report_csv(slurp(ev / "report.csv"));
  CHECK(rep.ap[0].ap == 1.0);
  CHECK(rep.ap[4].ap == 1.0);
  for (const auto & h : rep.regression.horizons) {
    CHECK(h.l2 == 0.0);
    CHECK(h.heading == 0.0);
  }
  CHECK(rep.intention.mean_accuracy == 1.0);

  const auto empty = tmp.path / "empty";
  const auto r = run({"--dataset", ds, "--output", empty.string(), "eval", "--split", "validation", "--ground-truth"});
  CHECK(r.code == 0);
  CHECK(r.err.find("warning") != std::string::npos);
  CHECK(metrics::parse_report_csv(slurp(empty / "report.csv")).frames == 0);
}

TEST_CASE("non-finite loss keeps the last good checkpoint")
{
  TempDir tmp("nan");
  const auto ds = (tmp.path / "ds").string();
  REQUIRE(run({"--dataset", ds, "synth", "-n", "1"}).code == 0);
  const auto out = tmp.path / "out";
  const auto r = run(tiny({"--dataset", ds, "--output", out.string(), "--set", "adam.lr=1e30", "--set", "adam.weight_decay=0",
                           "--set", "train.steps=20", "train"}));
  CHECK(r.code == 2);
  CHECK(r.err.find("last good") != std::string::npos);
  REQUIRE(fs::exists(out / "last_good.ckpt"));
  const auto ckpt = net::load_checkpoint(out / "last_good.ckpt");
  for (const auto & [name, t] : ckpt.params) {
    for (const float x : t.data) REQUIRE(std::isfinite(x));
  }
  CHECK_FALSE(fs::exists(out / "model.ckpt"));
}

TEST_CASE("viz: ground truth only, styles, range errors and glyph scaling")
{
  TempDir tmp("viz");
  scene::GeneratorConfig g;
  const auto s = scene::generate_scenario(g, 21);
  encoder::VoxelConfig v;
  v.length = 40.0;
  v.width = 40.0;

  const auto svg = render_svg(s, nullptr, 10, v);
  CHECK(svg == render_svg(s, nullptr, 10, v));
  CHECK(svg.find("<g id=\"map\">") != std::string::npos);
  CHECK(svg.find("<g id=\"predictions\"") == std::string::npos);
  CHECK(svg.find("class=\"gt") != std::string::npos);

  int unseen = 0, seen = 0;
  for (const auto & t : s.tracks) {
    const auto & f = t.frames[10];
    if (f.present) (f.lidar_point_count == 0 ? unseen : seen)++;
  }
  const auto count = [&](const std::string & needle) {
    int n = 0;
    for (auto p = svg.find(needle); p != std::string::npos; p = svg.find(needle, p + 1)) ++n;
    return n;
  };
  CHECK(count("class=\"gt\"") == seen);
  CHECK(count("class=\"gt-unseen\"") == unseen);

  try {
    render_svg(s, nullptr, s.frame_count(), v);
    FAIL("expected ConfigError");
  } catch (const ConfigError & e) {
    CHECK(std::string(e.what()).find("0..59") != std::string::npos);
  }

  infer::FramePredictions fp;
  fp.frame = 10;
  infer::Detection d;
  d.box = {2.0, -3.0, 4.5, 2.0, 0.3};
  d.score = 0.8;
  d.intent[0] = 0.9;
  d.intent[1] = 0.1;
  d.waypoints = {{3.0, -3.0, 4.5, 2.0, 0.3}, {4.0, -2.5, 4.5, 2.0, 0.4}};
  fp.detections.push_back(d);
  fp.track_ids.push_back(3);
  const auto with = render_svg(s, &fp, 10, v);
  const double keep = intent_arrow_length(with, "keep_lane");
  const double left = intent_arrow_length(with, "turn_left");
  REQUIRE(left > 0.0);
  CHECK(keep / left == doctest::Approx(9.0).epsilon(1e-3));
  CHECK(intent_arrow_length(with, "parked") < 0.0);
  CHECK(with.find("class=\"trail\"") != std::string::npos);
  CHECK(with.find("data-track=\"3\"") != std::string::npos);

  REQUIRE(run({"--dataset", (tmp.path / "ds").string(), "synth", "-n", "1"}).code == 0);
  const auto r = run({"viz", (tmp.path / "ds" / "scenario_0000.json").string(), "--frame", "60", "-o", (tmp.path / "x.svg").string()});
  CHECK(r.code == 1);
  CHECK(r.err.find("valid frames are 0..59") != std::string::npos);
  CHECK_FALSE(fs::exists(tmp.path / "x.svg"));
}
