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

#include "bevintent/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include "bevintent/errors.hpp"
#include "bevintent/kvfile.hpp"

namespace bevintent::pipeline
{

std::uint64_t splitmix64(std::uint64_t & state)
{
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t derive_seed(std::uint64_t master, SeedPurpose purpose, std::uint64_t index)
{
  std::uint64_t state = master ^ (static_cast<std::uint64_t>(purpose) << 56);
  std::uint64_t out = 0;
  for (std::uint64_t i = 0; i <= index; ++i) out = splitmix64(state);
  return out;
}

// -------------------------------------------------------------------- config

void RunConfig::validate() const
{
  generator.validate();
  voxel.validate();
  anchor.validate();
  network.validate();
  loss.validate();
  tracker.validate();
  eval.validate();
  if (voxel.rows() % anchors::kStride != 0 || voxel.cols() % anchors::kStride != 0) {
    throw ConfigError("voxel grid " + std::to_string(voxel.rows()) + "x" + std::to_string(voxel.cols()) +
                      " is not divisible by the stride 8");
  }
  if (network.lidar_channels != voxel.lidar_channels()) {
    throw ConfigError("network.lidar_channels is " + std::to_string(network.lidar_channels) +
                      " but the voxel config produces " + std::to_string(voxel.lidar_channels()));
  }
  if (network.map_channels != encoder::kMapChannels) {
    throw ConfigError("network.map_channels must be " + std::to_string(encoder::kMapChannels));
  }
  if (network.anchors_per_cell != static_cast<int>(anchor.ratios.size())) {
    throw ConfigError("network.anchors_per_cell does not match the number of anchor ratios");
  }
  if (loss.intent_steps != 1) throw ConfigError("loss.intent_steps: only the current frame is supervised (1)");
  if (train.steps < 0) throw ConfigError("train.steps must be >= 0");
  if (train.batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (train.frame_stride < 1) throw ConfigError("train.frame_stride must be >= 1");
  if (train.log_every < 1) throw ConfigError("train.log_every must be >= 1");
  if (train.augment_rotations && voxel.rows() != voxel.cols()) {
    throw ConfigError("train.augment_rotations needs a square BEV grid (voxel.length == voxel.width)");
  }
  if (train.lr_drop_step < 0) throw ConfigError("train.lr_drop_step must be >= 0");
  if (!(train.lr_drop_factor > 0.0 && train.lr_drop_factor <= 1.0)) throw ConfigError("train.lr_drop_factor must be in (0, 1]");
  if (train.checkpoint_every < 0) throw ConfigError("train.checkpoint_every must be >= 0");
  const auto & a = train.adam;
  if (!(a.lr > 0.0)) throw ConfigError("adam.lr must be positive");
  if (!(a.beta1 >= 0.0 && a.beta1 < 1.0) || !(a.beta2 >= 0.0 && a.beta2 < 1.0)) {
    throw ConfigError("adam betas must be in [0, 1)");
  }
  if (!(a.eps > 0.0)) throw ConfigError("adam.eps must be positive");
  if (!(a.weight_decay >= 0.0)) throw ConfigError("adam.weight_decay must be >= 0");
}

RunConfig default_config()
{
  RunConfig c;
  c.train.adam.lr = 1e-4;
  return c;
}

RunConfig toy_config()
{
  RunConfig c;
  c.voxel.length = 32.0;
  c.voxel.width = 32.0;
  c.voxel.height = 2.4;
  c.voxel.dl = 0.2;
  c.voxel.dw = 0.2;
  c.voxel.dh = 0.6;
  c.voxel.t_past = 5;
  c.network.lidar_channels = c.voxel.lidar_channels();
  c.network.stream_widths = {8, 16, 32};
  c.network.fusion_width = 64;
  c.network.fusion_blocks = 1;
  c.network.header_width = 32;
  c.network.intent_embedding = 8;
  c.train.steps = 2000;
  c.train.batch_size = 4;
  c.train.adam.lr = 1e-3;
  c.train.lr_drop_step = 1500;
  c.loss.beta = 2.0;
  return c;
}

namespace
{

std::vector<std::pair<double, double>> to_ratios(const std::string & key, const std::string & value)
{
  std::vector<std::pair<double, double>> out;
  std::stringstream ss(value);
  for (std::string item; std::getline(ss, item, ',');) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw ConfigError(key + ": expected r:s pairs, got '" + item + "'");
    out.emplace_back(to_double(key, item.substr(0, colon)), to_double(key, item.substr(colon + 1)));
  }
  return out;
}

void apply_voxel_key(encoder::VoxelConfig & v, const std::string & k, const std::string & value)
{
  const std::string key = "voxel." + k;
  if (k == "length") v.length = to_double(key, value);
  else if (k == "width") v.width = to_double(key, value);
  else if (k == "height") v.height = to_double(key, value);
  else if (k == "z_min") v.z_min = to_double(key, value);
  else if (k == "dl") v.dl = to_double(key, value);
  else if (k == "dw") v.dw = to_double(key, value);
  else if (k == "dh") v.dh = to_double(key, value);
  else if (k == "resolution") v.dl = v.dw = to_double(key, value);
  else if (k == "t_past") v.t_past = static_cast<int>(to_int(key, value));
  else throw ConfigError("unknown key '" + key + "'");
}

void apply_train_key(TrainConfig & t, const std::string & k, const std::string & value)
{
  const std::string key = "train." + k;
  if (k == "steps") t.steps = static_cast<long>(to_int(key, value));
  else if (k == "batch_size") t.batch_size = static_cast<int>(to_int(key, value));
  else if (k == "frame_stride") t.frame_stride = static_cast<int>(to_int(key, value));
  else if (k == "log_every") t.log_every = static_cast<long>(to_int(key, value));
  else if (k == "checkpoint_every") t.checkpoint_every = static_cast<long>(to_int(key, value));
  else if (k == "zero_map") t.zero_map = to_bool(key, value);
  else if (k == "augment_rotations") t.augment_rotations = to_bool(key, value);
  else if (k == "lr_drop_step") t.lr_drop_step = static_cast<long>(to_int(key, value));
  else if (k == "lr_drop_factor") t.lr_drop_factor = to_double(key, value);
  else throw ConfigError("unknown key '" + key + "'");
}

void apply_adam_key(net::AdamConfig & a, const std::string & k, const std::string & value)
{
  const std::string key = "adam." + k;
  if (k == "lr") a.lr = to_double(key, value);
  else if (k == "beta1") a.beta1 = to_double(key, value);
  else if (k == "beta2") a.beta2 = to_double(key, value);
  else if (k == "eps") a.eps = to_double(key, value);
  else if (k == "weight_decay") a.weight_decay = to_double(key, value);
  else throw ConfigError("unknown key '" + key + "'");
}

}  // namespace

void apply_run_key(RunConfig & cfg, const std::string & key, const std::string & value)
{
  const auto dot = key.find('.');
  if (dot == std::string::npos) {
    if (key == "seed") cfg.master_seed = to_u64(key, value);
    else if (key == "dataset") cfg.dataset = value;
    else if (key == "checkpoint") cfg.checkpoint = value;
    else if (key == "output") cfg.output = value;
    else if (key == "preset") {
      RunConfig p;
      if (value == "toy") p = toy_config();
      else if (value == "default") p = default_config();
      else throw ConfigError("preset: unknown preset '" + value + "' (toy, default)");
      p.dataset = cfg.dataset;
      p.checkpoint = cfg.checkpoint;
      p.output = cfg.output;
      p.master_seed = cfg.master_seed;
      cfg = std::move(p);
    } else {
      throw ConfigError("unknown key '" + key + "'");
    }
    return;
  }
  const auto section = key.substr(0, dot);
  const auto k = key.substr(dot + 1);
  if (section == "generator") scene::apply_generator_key(cfg.generator, k, value);
  else if (section == "voxel") apply_voxel_key(cfg.voxel, k, value);
  else if (section == "anchor") {
    if (k == "size") cfg.anchor.size = to_double(key, value);
    else if (k == "ratios") cfg.anchor.ratios = to_ratios(key, value);
    else throw ConfigError("unknown key '" + key + "'");
  } else if (section == "network") net::apply_network_key(cfg.network, k, value);
  else if (section == "loss") loss::apply_loss_key(cfg.loss, k, value);
  else if (section == "tracker") infer::apply_tracker_key(cfg.tracker, k, value);
  else if (section == "eval") {
    if (k == "min_points") cfg.eval.min_points = static_cast<int>(to_int(key, value));
    else throw ConfigError("unknown key '" + key + "'");
  } else if (section == "train") apply_train_key(cfg.train, k, value);
  else if (section == "adam") apply_adam_key(cfg.train.adam, k, value);
  else throw ConfigError("unknown config section '" + section + "'");
}

void apply_config_file(RunConfig & cfg, const std::filesystem::path & path)
{
  for (const auto & kv : read_key_values(path)) {
    try {
      apply_run_key(cfg, kv.key, kv.value);
    } catch (const ConfigError & e) {
      throw ConfigError(path.string() + ":" + std::to_string(kv.line) + ": " + e.what());
    }
  }
}

nlohmann::json to_json(const RunConfig & c)
{
  using nlohmann::json;
  json ratios = json::array();
  for (const auto & [r, s] : c.anchor.ratios) ratios.push_back({r, s});
  const auto & g = c.generator;
  return json{
    {"seed", c.master_seed},
    {"dataset", c.dataset.string()},
    {"checkpoint", c.checkpoint.string()},
    {"output", c.output.string()},
    {"generator",
     {{"frame_count", g.frame_count},
      {"actors_min", g.actors_min},
      {"actors_max", g.actors_max},
      {"maneuver_weights", g.maneuver_weights},
      {"point_density", g.point_density},
      {"ego_speed", g.ego_speed},
      {"view_radius", g.view_radius}}},
    {"voxel",
     {{"length", c.voxel.length},
      {"width", c.voxel.width},
      {"height", c.voxel.height},
      {"z_min", c.voxel.z_min},
      {"dl", c.voxel.dl},
      {"dw", c.voxel.dw},
      {"dh", c.voxel.dh},
      {"t_past", c.voxel.t_past}}},
    {"anchor", {{"size", c.anchor.size}, {"ratios", ratios}}},
    {"network", net::to_json(c.network)},
    {"loss",
     {{"alpha", c.loss.alpha},
      {"beta", c.loss.beta},
      {"lambda", c.loss.lambda},
      {"chi", c.loss.chi},
      {"neg_pos_ratio", c.loss.neg_pos_ratio},
      {"focal_gamma", c.loss.focal_gamma},
      {"downsample_keep", c.loss.downsample_keep},
      {"zero_positive_negatives", c.loss.zero_positive_negatives},
      {"normalize", c.loss.normalize},
      {"intent_steps", c.loss.intent_steps}}},
    {"tracker",
     {{"gate", c.tracker.gate},
      {"ema", c.tracker.ema},
      {"coast_limit", c.tracker.coast_limit},
      {"coast_decay", c.tracker.coast_decay},
      {"frames_per_step", c.tracker.frames_per_step}}},
    {"eval", {{"min_points", c.eval.min_points}}},
    {"train",
     {{"steps", c.train.steps},
      {"batch_size", c.train.batch_size},
      {"frame_stride", c.train.frame_stride},
      {"log_every", c.train.log_every},
      {"checkpoint_every", c.train.checkpoint_every},
      {"zero_map", c.train.zero_map},
      {"augment_rotations", c.train.augment_rotations},
      {"lr_drop_step", c.train.lr_drop_step},
      {"lr_drop_factor", c.train.lr_drop_factor}}},
    {"adam",
     {{"lr", c.train.adam.lr},
      {"beta1", c.train.adam.beta1},
      {"beta2", c.train.adam.beta2},
      {"eps", c.train.adam.eps},
      {"weight_decay", c.train.adam.weight_decay}}},
  };
}

// ------------------------------------------------------------------- samples

std::pair<int, int> usable_frames(const scene::Scenario & s, const RunConfig & cfg)
{
  const int first = cfg.voxel.t_past - 1;
  const int last = s.frame_count() - 1 - cfg.tracker.frames_per_step * cfg.network.future_steps;
  return {first, last};
}

std::vector<metrics::GroundTruth> ground_truth_at(
  const scene::Scenario & s, int frame, const RunConfig & cfg, int frames_per_step)
{
  if (frame < 0 || frame >= s.frame_count()) {
    throw ConfigError("frame " + std::to_string(frame) + " outside [0, " + std::to_string(s.frame_count() - 1) + "]");
  }
  const auto & ego = s.sweeps[static_cast<std::size_t>(frame)].ego_pose;
  const auto grid = cfg.voxel.grid();
  const geom::RigidPose world{};
  std::vector<metrics::GroundTruth> out;
  for (const auto & track : s.tracks) {
    const auto & af = track.frames[static_cast<std::size_t>(frame)];
    if (!af.present) continue;
    metrics::GroundTruth g;
    g.box = geom::transform_box(af.box, world, ego);
    if (g.box.cx < grid.origin.x || g.box.cx >= grid.x_max() || g.box.cy < grid.origin.y || g.box.cy >= grid.y_max()) {
      continue;
    }
    g.lidar_points = af.lidar_point_count;
    g.action = scene::index_of(af.action);
    g.id = track.id;
    for (int t = 1; t <= cfg.network.future_steps; ++t) {
      const int f = frame + t * frames_per_step;
      if (f < s.frame_count() && track.frames[static_cast<std::size_t>(f)].present) {
        g.future.push_back(geom::transform_box(track.frames[static_cast<std::size_t>(f)].box, world, ego));
      } else {
        g.future.push_back(std::nullopt);
      }
    }
    out.push_back(std::move(g));
  }
  return out;
}

std::vector<int> cell_labels(std::span<const metrics::GroundTruth> gt, const anchors::AnchorGrid & grid)
{
  const std::size_t cells = static_cast<std::size_t>(grid.rows) * grid.cols;
  std::vector<int> labels(cells, -1);
  std::vector<double> owner_dist(cells, 0.0);
  if (grid.rows == 0 || grid.cols == 0) return labels;
  const auto c00 = grid.cell_center(0, 0);
  const double step = grid.rows > 1 ? grid.cell_center(1, 0).x - c00.x : grid.cell_center(0, 1).y - c00.y;
  const auto claim = [&](int i, int j, const metrics::GroundTruth & g) {
    if (i < 0 || j < 0 || i >= grid.rows || j >= grid.cols) return;
    const auto c = grid.cell_center(i, j);
    const double d = std::hypot(c.x - g.box.cx, c.y - g.box.cy);
    const auto idx = static_cast<std::size_t>(i) * grid.cols + j;
    if (labels[idx] < 0 || d < owner_dist[idx]) {
      labels[idx] = g.action;
      owner_dist[idx] = d;
    }
  };
  for (const auto & g : gt) {
    if (g.action < 0) continue;
    const double cs = std::cos(g.box.phi), sn = std::sin(g.box.phi);
    const double reach = 0.5 * std::hypot(g.box.w, g.box.h);
    const int i0 = static_cast<int>(std::floor((g.box.cx - reach - c00.x) / step));
    const int i1 = static_cast<int>(std::ceil((g.box.cx + reach - c00.x) / step));
    const int j0 = static_cast<int>(std::floor((g.box.cy - reach - c00.y) / step));
    const int j1 = static_cast<int>(std::ceil((g.box.cy + reach - c00.y) / step));
    for (int i = std::max(0, i0); i <= std::min(grid.rows - 1, i1); ++i) {
      for (int j = std::max(0, j0); j <= std::min(grid.cols - 1, j1); ++j) {
        const auto c = grid.cell_center(i, j);
        const double dx = c.x - g.box.cx, dy = c.y - g.box.cy;
        if (std::abs(dx * cs + dy * sn) <= 0.5 * g.box.w && std::abs(-dx * sn + dy * cs) <= 0.5 * g.box.h) claim(i, j, g);
      }
    }
    claim(static_cast<int>(std::floor((g.box.cx - c00.x) / step + 0.5)),
          static_cast<int>(std::floor((g.box.cy - c00.y) / step + 0.5)), g);
  }
  return labels;
}

Sample build_sample(
  const scene::Scenario & s, std::size_t scenario_index, int frame, const RunConfig & cfg,
  const anchors::AnchorGrid & grid)
{
  Sample out;
  out.scenario = scenario_index;
  out.frame = frame;
  const auto & ego = s.sweeps[static_cast<std::size_t>(frame)].ego_pose;
  const int first = std::max(0, frame - cfg.voxel.t_past + 1);
  out.lidar = encoder::voxelize_sweeps(
    std::span<const scene::Sweep>(s.sweeps.data() + first, static_cast<std::size_t>(frame - first + 1)), ego, cfg.voxel);
  out.map = encoder::rasterize_map(s.map, frame, cfg.voxel, ego);
  out.ground_truth = ground_truth_at(s, frame, cfg, cfg.tracker.frames_per_step);

  try {
    out.targets = make_targets(out.ground_truth, grid);
  } catch (const GenerationError & e) {
    throw GenerationError("scenario " + std::to_string(s.seed) + " frame " + std::to_string(frame) + ": " + e.what());
  }
  return out;
}

loss::SampleTargets make_targets(std::span<const metrics::GroundTruth> gt, const anchors::AnchorGrid & grid)
{
  std::vector<geom::OrientedBox2D> boxes;
  for (const auto & g : gt) boxes.push_back(g.box);
  loss::SampleTargets t;
  t.assignment = anchors::assign_targets(grid, boxes);
  std::vector<int> hits(boxes.size(), 0);
  for (std::size_t a = 0; a < grid.size(); ++a) {
    if (!t.assignment.q[a]) continue;
    const auto g = static_cast<std::size_t>(t.assignment.matched[a]);
    ++hits[g];
    std::vector<std::optional<geom::OrientedBox2D>> track{gt[g].box};
    track.insert(track.end(), gt[g].future.begin(), gt[g].future.end());
    t.regression.emplace_back(a, anchors::encode_targets(track, grid.boxes[a]));
  }
  for (std::size_t g = 0; g < hits.size(); ++g) {
    if (hits[g] == 0) throw GenerationError("vehicle " + std::to_string(gt[g].id) + " has no positive anchor");
  }
  t.cell_labels = {cell_labels(gt, grid)};
  return t;
}

namespace
{

/// Quarter turn counter-clockwise about the grid centre: cell (a, b) of the
/// result is cell (b, n - 1 - a) of the input.
template <typename V>
Tensor<V> rotate_quarter(const Tensor<V> & in)
{
  const int c = in.dim(0), n = in.dim(1);
  Tensor<V> out(in.shape);
  for (int k = 0; k < c; ++k) {
    for (int a = 0; a < n; ++a) {
      for (int b = 0; b < n; ++b) out.at(k, a, b) = in.at(k, b, n - 1 - a);
    }
  }
  return out;
}

geom::OrientedBox2D rotate_box(const geom::OrientedBox2D & b)
{
  return {-b.cy, b.cx, b.w, b.h, geom::normalize_angle(b.phi + 0.5 * std::numbers::pi)};
}

}  // namespace

Sample rotate_sample(const Sample & s, int quarter_turns, const anchors::AnchorGrid & grid)
{
  if (s.lidar.dim(1) != s.lidar.dim(2) || grid.rows != grid.cols) {
    throw ConfigError("rotation augmentation needs a square BEV grid");
  }
  Sample out = s;
  for (int q = 0; q < ((quarter_turns % 4) + 4) % 4; ++q) {
    out.lidar = rotate_quarter(out.lidar);
    out.map = rotate_quarter(out.map);
    for (auto & g : out.ground_truth) {
      g.box = rotate_box(g.box);
      for (auto & f : g.future) {
        if (f) f = rotate_box(*f);
      }
    }
  }
  out.targets = make_targets(out.ground_truth, grid);
  return out;
}

std::vector<Sample> build_samples(
  std::span<const scene::Scenario> scenarios, const RunConfig & cfg, const anchors::AnchorGrid & grid,
  int frame_stride)
{
  std::vector<Sample> out;
  for (std::size_t i = 0; i < scenarios.size(); ++i) {
    const auto [first, last] = usable_frames(scenarios[i], cfg);
    for (int f = first; f <= last; f += frame_stride) out.push_back(build_sample(scenarios[i], i, f, cfg, grid));
  }
  return out;
}

std::pair<Tensor<float>, Tensor<float>> batch_inputs(std::span<const Sample * const> batch, bool zero_map)
{
  if (batch.empty()) throw ConfigError("batch_inputs: empty batch");
  const auto & l0 = batch[0]->lidar;
  const auto & m0 = batch[0]->map;
  const int n = static_cast<int>(batch.size());
  Tensor<float> lidar({n, l0.dim(0), l0.dim(1), l0.dim(2)});
  Tensor<float> map({n, m0.dim(0), m0.dim(1), m0.dim(2)});
  for (int b = 0; b < n; ++b) {
    const auto & s = *batch[static_cast<std::size_t>(b)];
    if (s.lidar.shape != l0.shape || s.map.shape != m0.shape) throw ConfigError("batch_inputs: mixed sample shapes");
    std::transform(s.lidar.data.begin(), s.lidar.data.end(), lidar.data.begin() + static_cast<std::ptrdiff_t>(b * l0.size()),
                   [](std::uint8_t v) { return static_cast<float>(v); });
    if (!zero_map) {
      std::transform(s.map.data.begin(), s.map.data.end(), map.data.begin() + static_cast<std::ptrdiff_t>(b * m0.size()),
                     [](std::int8_t v) { return static_cast<float>(v); });
    }
  }
  return {std::move(lidar), std::move(map)};
}

// ------------------------------------------------------------------ training

Trainer::Trainer(RunConfig cfg, std::span<const Sample> samples)
: cfg_((cfg.validate(), std::move(cfg))),
  samples_(samples),
  net_(cfg_.network, derive_seed(cfg_.master_seed, SeedPurpose::kInit)),
  grid_(anchors::build_anchor_grid(cfg_.voxel, cfg_.anchor))
{
  net::init_blas();
  if (samples_.empty()) throw ConfigError("training set is empty");
}

std::vector<std::size_t> Trainer::batch_indices(long step) const
{
  const std::size_t n = samples_.size();
  const std::size_t b = static_cast<std::size_t>(cfg_.train.batch_size);
  std::vector<std::size_t> out;
  std::uint64_t epoch = ~0ULL;
  std::vector<std::size_t> perm(n);
  for (std::size_t k = 0; k < b; ++k) {
    const std::size_t pos = static_cast<std::size_t>(step) * b + k;
    if (pos / n != epoch) {
      epoch = pos / n;
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      std::mt19937_64 rng(derive_seed(cfg_.master_seed, SeedPurpose::kShuffle, epoch));
      // Fisher-Yates with our own index draws so the order is portable.
      for (std::size_t i = n; i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng() % i);
        std::swap(perm[i - 1], perm[j]);
      }
    }
    out.push_back(perm[pos % n]);
  }
  return out;
}

loss::LossBreakdown Trainer::step()
{
  const auto idx = batch_indices(step_);
  std::vector<const Sample *> batch;
  std::vector<loss::SampleTargets> targets;
  std::vector<Sample> rotated;
  rotated.reserve(idx.size());
  std::mt19937_64 aug(derive_seed(cfg_.master_seed, SeedPurpose::kAugment, static_cast<std::uint64_t>(step_)));
  for (const auto i : idx) {
    const Sample * s = &samples_[i];
    const int turns = cfg_.train.augment_rotations ? static_cast<int>(aug() % 4) : 0;
    if (turns != 0) {
      rotated.push_back(rotate_sample(*s, turns, grid_));
      s = &rotated.back();
    }
    batch.push_back(s);
    targets.push_back(s->targets);
  }
  auto [lidar, map] = batch_inputs(batch, cfg_.train.zero_map);
  net::Tape<float> tape;
  const auto f = net_.forward(tape, lidar, map);
  const auto out = net_.outputs(tape, f);
  std::mt19937_64 rng(derive_seed(cfg_.master_seed, SeedPurpose::kDownsample, static_cast<std::uint64_t>(step_)));
  auto res = loss::compute_loss(out, std::span<const loss::SampleTargets>(targets), cfg_.loss, rng);
  if (!std::isfinite(res.breakdown.total)) {
    throw TrainingError("non-finite loss at step " + std::to_string(step_ + 1));
  }
  net_.params().zero_grad();
  tape.backward({{f.det, std::move(res.d_det)}, {f.intent, std::move(res.d_intent)}, {f.reg, std::move(res.d_reg)}});
  auto adam_cfg = cfg_.train.adam;
  if (cfg_.train.lr_drop_step > 0 && step_ >= cfg_.train.lr_drop_step) adam_cfg.lr *= cfg_.train.lr_drop_factor;
  net::adam_step(net_.params(), adam_, adam_cfg);
  ++step_;
  return res.breakdown;
}

void Trainer::run(const std::function<void(long, const loss::LossBreakdown &)> & on_step)
{
  while (step_ < cfg_.train.steps) {
    const auto b = step();
    if (on_step) on_step(step_, b);
  }
}

net::Checkpoint Trainer::checkpoint() const { return net::make_checkpoint(net_, adam_, step_, to_json(cfg_)); }

void Trainer::resume(const net::Checkpoint & ckpt)
{
  net::restore(net_, ckpt, &adam_);
  step_ = ckpt.step;
}

// ----------------------------------------------------------------- inference

std::vector<infer::Detection> detect(
  net::IntentNet<float> & network, const Sample & sample, const anchors::AnchorGrid & grid, bool zero_map)
{
  const Sample * one[] = {&sample};
  auto [lidar, map] = batch_inputs(one, zero_map);
  net::Tape<float> tape;
  const auto f = network.forward(tape, lidar, map);
  return infer::nms(infer::decode_detections(network.outputs(tape, f), 0, grid));
}

infer::PredictionFile predict_scenario(
  net::IntentNet<float> & network, const scene::Scenario & scenario, std::span<const Sample> samples,
  const RunConfig & cfg, const anchors::AnchorGrid & grid)
{
  infer::PredictionFile out;
  out.scenario_seed = scenario.seed;
  out.step_seconds = cfg.tracker.frames_per_step * scene::kFrameDt;
  std::vector<const Sample *> ordered;
  for (const auto & s : samples) ordered.push_back(&s);
  std::stable_sort(ordered.begin(), ordered.end(), [](const Sample * a, const Sample * b) { return a->frame < b->frame; });
  infer::Tracker tracker(cfg.tracker);
  const geom::RigidPose world{};
  for (const auto * s : ordered) {
    infer::FramePredictions fp;
    fp.frame = s->frame;
    fp.detections = detect(network, *s, grid, cfg.train.zero_map);
    const auto & ego = scenario.sweeps[static_cast<std::size_t>(s->frame)].ego_pose;
    std::vector<infer::Detection> in_world;
    for (const auto & d : fp.detections) in_world.push_back(infer::transform_detection(d, ego, world));
    fp.track_ids = tracker.update_tracks(in_world, s->frame);
    out.frames.push_back(std::move(fp));
  }
  return out;
}

std::vector<metrics::EvalFrame> eval_frames(const infer::PredictionFile & predictions, std::span<const Sample> samples)
{
  std::map<int, const Sample *> by_frame;
  for (const auto & s : samples) by_frame[s.frame] = &s;
  std::vector<metrics::EvalFrame> out;
  for (const auto & fp : predictions.frames) {
    const auto it = by_frame.find(fp.frame);
    if (it == by_frame.end()) throw ConfigError("predictions for frame " + std::to_string(fp.frame) + " have no sample");
    out.push_back({fp.frame, fp.detections, it->second->ground_truth});
  }
  return out;
}

std::vector<metrics::EvalFrame> constant_position(std::vector<metrics::EvalFrame> frames)
{
  for (auto & f : frames) {
    for (auto & d : f.detections) {
      for (auto & w : d.waypoints) w = d.box;
    }
  }
  return frames;
}

std::vector<metrics::EvalFrame> ground_truth_as_predictions(std::vector<metrics::EvalFrame> frames)
{
  for (auto & f : frames) {
    f.detections.clear();
    for (const auto & g : f.ground_truth) {
      infer::Detection d;
      d.box = g.box;
      d.score = 1.0;
      d.intent[static_cast<std::size_t>(g.action)] = 1.0;
      for (const auto & w : g.future) d.waypoints.push_back(w ? *w : g.box);
      f.detections.push_back(std::move(d));
    }
  }
  return frames;
}

}  // namespace bevintent::pipeline
