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

#include "bevintent/cli/commands.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>

#include "bevintent/errors.hpp"
#include "bevintent/kvfile.hpp"

namespace bevintent::cli
{

namespace fs = std::filesystem;

namespace
{

void require_file(const fs::path & p, const std::string & what)
{
  if (p.empty()) throw ConfigError(what + " path is not set");
  if (!fs::is_regular_file(p)) throw ConfigError(what + " not found: " + p.string());
}

void require_dir(const fs::path & p, const std::string & what)
{
  if (p.empty()) throw ConfigError(what + " path is not set");
  if (!fs::is_directory(p)) throw ConfigError(what + " not found: " + p.string());
}

fs::path manifest_path(const pipeline::RunConfig & cfg)
{
  return cfg.dataset / kManifestName;
}

std::string frame_name(const std::string & prefix, int frame)
{
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%04d.tensor", prefix.c_str(), frame);
  return buf;
}

/// Scenarios of one split, in manifest order, loaded lazily one at a time.
struct SplitFiles
{
  std::vector<fs::path> paths;
};

SplitFiles split_files(const pipeline::RunConfig & cfg, const std::string & split)
{
  require_file(manifest_path(cfg), "dataset manifest");
  const auto manifest = load_manifest(manifest_path(cfg));
  SplitFiles out;
  for (const auto * e : manifest.split(split)) {
    const auto p = cfg.dataset / e->path;
    require_file(p, "scenario");
    out.paths.push_back(p);
  }
  return out;
}

net::IntentNet<float> load_network(const pipeline::RunConfig & cfg)
{
  net::init_blas();
  const auto ckpt = net::load_checkpoint(cfg.checkpoint);
  net::IntentNet<float> network(cfg.network, 0);
  net::restore(network, ckpt);
  return network;
}

double seconds_since(std::chrono::steady_clock::time_point t0)
{
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

Manifest cmd_synth(const pipeline::RunConfig & cfg, const SynthOptions & opts, std::ostream & log)
{
  cfg.validate();
  if (opts.count < 0) throw ConfigError("count must be >= 0");
  if (opts.holdout < 0 || opts.holdout > opts.count) throw ConfigError("holdout must be in [0, count]");
  if (cfg.dataset.empty()) throw ConfigError("dataset path is not set");
  const OutputLock lock(cfg.dataset);

  Manifest m;
  for (int i = 0; i < opts.count; ++i) {
    const auto seed = pipeline::derive_seed(cfg.master_seed, pipeline::SeedPurpose::kScenario, static_cast<std::uint64_t>(i));
    const auto s = scene::generate_scenario(cfg.generator, seed);
    char name[32];
    std::snprintf(name, sizeof name, "scenario_%04d.json", i);
    scene::save_scenario(s, cfg.dataset / name);
    ManifestEntry e;
    e.path = name;
    e.seed = seed;
    e.split = i < opts.count - opts.holdout ? "train" : "test";
    for (const auto & t : s.tracks) ++e.maneuvers[static_cast<std::size_t>(scene::index_of(t.maneuver))];
    m.entries.push_back(std::move(e));
    log << "synth: " << name << " seed " << seed << " actors " << s.tracks.size() << "\n";
  }
  // The manifest appears only once every scenario is on disk.
  const auto tmp = cfg.dataset / (std::string(kManifestName) + ".tmp");
  write_text_file(tmp, serialize_manifest(m));
  fs::rename(tmp, manifest_path(cfg));
  log << "synth: wrote " << m.entries.size() << " scenarios to " << cfg.dataset.string() << "\n";
  return m;
}

int cmd_encode(const pipeline::RunConfig & cfg, const EncodeOptions & opts, std::ostream & log)
{
  cfg.validate();
  require_file(opts.scenario, "scenario");
  if (cfg.output.empty()) throw ConfigError("output path is not set");
  const auto s = scene::load_scenario(opts.scenario);
  int first = 0;
  int last = s.frame_count() - 1;
  if (opts.frame) {
    if (*opts.frame < 0 || *opts.frame >= s.frame_count()) {
      throw ConfigError(
        "frame " + std::to_string(*opts.frame) + " out of range; valid frames are 0.." + std::to_string(s.frame_count() - 1));
    }
    first = last = *opts.frame;
  } else {
    std::tie(first, last) = pipeline::usable_frames(s, cfg);
  }
  const OutputLock lock(cfg.output);
  int written = 0;
  for (int f = first; f <= last; ++f) {
    const auto & ego = s.sweeps[static_cast<std::size_t>(f)].ego_pose;
    const int begin = std::max(0, f - cfg.voxel.t_past + 1);
    const auto lidar = encoder::voxelize_sweeps(
      std::span<const scene::Sweep>(s.sweeps.data() + begin, static_cast<std::size_t>(f - begin + 1)), ego, cfg.voxel);
    const auto map = encoder::rasterize_map(s.map, f, cfg.voxel, ego);
    write_tensor(cfg.output / frame_name("lidar", f), lidar);
    write_tensor(cfg.output / frame_name("map", f), map);
    ++written;
  }
  log << "encode: wrote " << written << " frames to " << cfg.output.string() << "\n";
  return written;
}

void cmd_train(const pipeline::RunConfig & cfg, const TrainOptions & opts, std::ostream & log)
{
  cfg.validate();
  if (cfg.output.empty()) throw ConfigError("output path is not set");
  const auto files = split_files(cfg, opts.split);
  if (opts.resume) require_file(*opts.resume, "resume checkpoint");
  const OutputLock lock(cfg.output);

  const auto t0 = std::chrono::steady_clock::now();
  std::vector<scene::Scenario> scenarios;
  for (const auto & p : files.paths) scenarios.push_back(scene::load_scenario(p));
  const auto grid = anchors::build_anchor_grid(cfg.voxel, cfg.anchor);
  const auto samples = pipeline::build_samples(scenarios, cfg, grid, cfg.train.frame_stride);
  scenarios.clear();
  log << "train: " << samples.size() << " samples from " << files.paths.size() << " scenarios ("
      << seconds_since(t0) << " s)\n";

  pipeline::Trainer trainer(cfg, samples);
  const auto log_path = cfg.output / kTrainLogName;
  const std::string header =
    loss::breakdown_csv_header(cfg.loss.intent_steps, cfg.network.future_steps + 1) + "\n";
  std::string kept = header;
  if (opts.resume) {
    const auto ckpt = net::load_checkpoint(*opts.resume);
    trainer.resume(ckpt);
    if (fs::exists(log_path)) {
      // Rows past the checkpoint belong to the abandoned continuation.
      std::stringstream ss(read_text_file(log_path));
      std::string line;
      std::getline(ss, line);
      if (line + "\n" != header) throw ConfigError(log_path.string() + ": log header does not match the config");
      while (std::getline(ss, line)) {
        if (line.empty()) continue;
        if (std::stol(line.substr(0, line.find(','))) <= ckpt.step) kept += line + "\n";
      }
    }
    log << "train: resumed at step " << ckpt.step << "\n";
  }
  write_text_file(log_path, kept);
  std::ofstream csv(log_path, std::ios::app | std::ios::binary);

  const auto save = [&](const fs::path & p) { net::save_checkpoint(trainer.checkpoint(), p); };
  const auto t1 = std::chrono::steady_clock::now();
  while (trainer.steps_done() < cfg.train.steps) {
    loss::LossBreakdown b;
    try {
      b = trainer.step();
    } catch (const TrainingError & e) {
      save(cfg.output / kLastGoodName);
      log << "train: " << e.what() << "; last good weights (step " << trainer.steps_done() << ") saved to "
          << (cfg.output / kLastGoodName).string() << "\n";
      throw;
    }
    const long step = trainer.steps_done();
    if (step % cfg.train.log_every == 0) {
      csv << loss::breakdown_csv_row(step, b) << "\n";
      csv.flush();
    }
    if (step % 100 == 0 || step == cfg.train.steps) {
      log << "train: step " << step << " loss " << b.total << " (" << seconds_since(t1) << " s)\n";
    }
    if (cfg.train.checkpoint_every > 0 && step % cfg.train.checkpoint_every == 0) {
      char name[40];
      std::snprintf(name, sizeof name, "checkpoint_%06ld.ckpt", step);
      save(cfg.output / name);
    }
  }
  save(cfg.output / kModelName);
  log << "train: wrote " << (cfg.output / kModelName).string() << "\n";
}

std::string predictions_name(const fs::path & scenario)
{
  return scenario.stem().string() + ".predictions.jsonl";
}

metrics::EvalReport cmd_eval(const pipeline::RunConfig & cfg, const EvalOptions & opts, std::ostream & log)
{
  cfg.validate();
  if (cfg.output.empty()) throw ConfigError("output path is not set");
  if (opts.ground_truth && opts.predictions) throw ConfigError("choose either ground truth or saved predictions");
  const auto files = split_files(cfg, opts.split);
  if (opts.predictions) {
    require_dir(*opts.predictions, "predictions directory");
    for (const auto & p : files.paths) require_file(*opts.predictions / predictions_name(p), "prediction file");
  } else if (!opts.ground_truth) {
    require_file(cfg.checkpoint, "checkpoint");
  }
  // Shape mismatches surface before any output is written.
  std::optional<net::IntentNet<float>> network;
  if (!opts.ground_truth && !opts.predictions) network.emplace(load_network(cfg));
  const OutputLock lock(cfg.output);

  const auto grid = anchors::build_anchor_grid(cfg.voxel, cfg.anchor);
  std::vector<metrics::EvalFrame> frames;
  for (const auto & p : files.paths) {
    const auto s = scene::load_scenario(p);
    const std::vector<scene::Scenario> one{s};
    const auto samples = pipeline::build_samples(one, cfg, grid, 1);
    infer::PredictionFile pred;
    if (opts.predictions) pred = infer::load_predictions(*opts.predictions / predictions_name(p));
    else if (network) pred = pipeline::predict_scenario(*network, s, samples, cfg, grid);
    else {
      for (const auto & sample : samples) pred.frames.push_back({sample.frame, {}, {}});
    }
    auto ef = pipeline::eval_frames(pred, samples);
    if (opts.ground_truth) ef = pipeline::ground_truth_as_predictions(std::move(ef));
    frames.insert(frames.end(), std::make_move_iterator(ef.begin()), std::make_move_iterator(ef.end()));
    log << "eval: " << p.filename().string() << " " << samples.size() << " frames\n";
  }
  if (files.paths.empty()) log << "warning: split '" << opts.split << "' is empty; writing an empty report\n";

  const auto report = metrics::evaluate(frames, cfg.eval);
  write_text_file(cfg.output / kReportCsvName, metrics::report_csv(report));
  write_text_file(cfg.output / kReportTextName, metrics::report_text(report));
  write_text_file(cfg.output / kByActionName, metrics::by_action_csv(report));
  log << "eval: wrote reports to " << cfg.output.string() << "\n";
  return report;
}

int cmd_predict(const pipeline::RunConfig & cfg, const PredictOptions & opts, std::ostream & log)
{
  cfg.validate();
  if (cfg.output.empty()) throw ConfigError("output path is not set");
  const auto files = split_files(cfg, opts.split);
  require_file(cfg.checkpoint, "checkpoint");
  auto network = load_network(cfg);
  const OutputLock lock(cfg.output);

  const auto grid = anchors::build_anchor_grid(cfg.voxel, cfg.anchor);
  int written = 0;
  for (const auto & p : files.paths) {
    const auto s = scene::load_scenario(p);
    const std::vector<scene::Scenario> one{s};
    const auto samples = pipeline::build_samples(one, cfg, grid, 1);
    const auto pred = pipeline::predict_scenario(network, s, samples, cfg, grid);
    infer::save_predictions(pred, cfg.output / predictions_name(p));
    ++written;
    log << "predict: " << predictions_name(p) << " " << pred.frames.size() << " frames\n";
  }
  return written;
}

void cmd_viz(const pipeline::RunConfig & cfg, const VizOptions & opts, std::ostream & log)
{
  cfg.validate();
  require_file(opts.scenario, "scenario");
  if (opts.predictions) require_file(*opts.predictions, "predictions");
  if (opts.out.empty()) throw ConfigError("output image path is not set");
  const auto s = scene::load_scenario(opts.scenario);
  std::optional<infer::PredictionFile> pred;
  if (opts.predictions) pred = infer::load_predictions(*opts.predictions);
  const infer::FramePredictions * fp = nullptr;
  if (pred) {
    for (const auto & f : pred->frames) {
      if (f.frame == opts.frame) fp = &f;
    }
  }
  const auto svg = render_svg(s, fp, opts.frame, cfg.voxel);
  if (opts.out.has_parent_path()) fs::create_directories(opts.out.parent_path());
  write_text_file(opts.out, svg);
  log << "viz: wrote " << opts.out.string() << (pred && !fp ? " (no predictions for this frame)" : "") << "\n";
}

}  // namespace bevintent::cli
