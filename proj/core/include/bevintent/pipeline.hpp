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

// End-to-end plumbing shared by the command line tools and the acceptance
// suite: run configuration, seed fan-out, sample encoding, the training
// loop and scenario-level inference/evaluation.

#ifndef BEVINTENT_PIPELINE_HPP_
#define BEVINTENT_PIPELINE_HPP_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bevintent/anchors.hpp"
#include "bevintent/encoder.hpp"
#include "bevintent/infer.hpp"
#include "bevintent/loss.hpp"
#include "bevintent/metrics.hpp"
#include "bevintent/net.hpp"
#include "bevintent/scene.hpp"

namespace bevintent::pipeline
{

/// SplitMix64 step: advances `state` and returns the next output.
std::uint64_t splitmix64(std::uint64_t & state);

/// Seed streams derived from the master seed.
enum class SeedPurpose : std::uint64_t {
  kScenario = 1,
  kInit = 2,
  kShuffle = 3,
  kDownsample = 4,
  kAugment = 5,
};

/// Output of SplitMix64 seeded with master ^ (purpose << 56), advanced
/// `index + 1` times.
std::uint64_t derive_seed(std::uint64_t master, SeedPurpose purpose, std::uint64_t index = 0);

struct TrainConfig
{
  long steps{2000};
  int batch_size{4};
  /// Every `frame_stride`-th usable frame becomes a training sample.
  int frame_stride{1};
  long log_every{1};
  long checkpoint_every{500};
  /// Feed an all-zero map tensor (ablation).
  bool zero_map{false};
  /// Rotate each training sample by a random multiple of 90 degrees.
  bool augment_rotations{false};
  /// From this step on (0 = never) the learning rate is scaled by
  /// `lr_drop_factor`.
  long lr_drop_step{0};
  double lr_drop_factor{0.1};
  net::AdamConfig adam;
};

struct RunConfig
{
  std::filesystem::path dataset;
  std::filesystem::path checkpoint;
  std::filesystem::path output;
  scene::GeneratorConfig generator;
  encoder::VoxelConfig voxel;
  anchors::AnchorSpec anchor;
  net::NetworkConfig network;
  loss::LossConfig loss;
  infer::TrackerConfig tracker;
  metrics::EvalFilter eval;
  TrainConfig train;
  std::uint64_t master_seed{0};

  /// Every numeric field against its module's rules, plus cross-field
  /// consistency (channel counts, anchor count, future steps).
  void validate() const;
};

/// Desk-scale preset: 44.8 m square at 0.4 m, 2.4 m tall at 0.6 m, five past
/// sweeps, narrow streams.
RunConfig toy_config();
/// Full-size preset matching the reference implementation details.
RunConfig default_config();

/// `section.key = value`. Sections: generator, voxel, anchor, network, loss,
/// tracker, eval, train, adam; plus top-level seed, dataset, checkpoint,
/// output, preset.
void apply_run_key(RunConfig & cfg, const std::string & key, const std::string & value);
/// Applies every line of a config file in order.
void apply_config_file(RunConfig & cfg, const std::filesystem::path & path);

nlohmann::json to_json(const RunConfig & cfg);

/// First and last frame (inclusive) with a full past window and a full
/// future horizon.
std::pair<int, int> usable_frames(const scene::Scenario & s, const RunConfig & cfg);

/// One encoded training or evaluation frame.
struct Sample
{
  std::size_t scenario{0};
  int frame{0};
  encoder::LidarTensor lidar;
  encoder::MapTensor map;
  loss::SampleTargets targets;
  /// Vehicles inside the grid, in the current ego frame.
  std::vector<metrics::GroundTruth> ground_truth;
};

/// Ground truth at `frame` in that frame's ego coordinates, with futures
/// sampled every `frames_per_step` frames.
std::vector<metrics::GroundTruth> ground_truth_at(
  const scene::Scenario & s, int frame, const RunConfig & cfg, int frames_per_step = 5);

/// Feature-cell intention labels: each cell whose centre lies inside a box
/// takes that vehicle's action, as does the cell holding each box centre.
/// Overlaps go to the vehicle whose centre is nearest the cell centre.
std::vector<int> cell_labels(
  std::span<const metrics::GroundTruth> gt, const anchors::AnchorGrid & grid);

/// Encodes LiDAR, map and supervision. Throws GenerationError if the
/// force-match rule leaves a ground truth without a positive anchor.
Sample build_sample(
  const scene::Scenario & s, std::size_t scenario_index, int frame, const RunConfig & cfg,
  const anchors::AnchorGrid & grid);

/// Anchor assignment, regression targets and cell labels. Throws
/// GenerationError if a vehicle ends up without a positive anchor.
loss::SampleTargets make_targets(std::span<const metrics::GroundTruth> gt, const anchors::AnchorGrid & grid);

/// The sample as seen after rotating the scene by `quarter_turns` x 90
/// degrees counter-clockwise; targets are rebuilt. Needs a square grid.
Sample rotate_sample(const Sample & s, int quarter_turns, const anchors::AnchorGrid & grid);

std::vector<Sample> build_samples(
  std::span<const scene::Scenario> scenarios, const RunConfig & cfg, const anchors::AnchorGrid & grid,
  int frame_stride);

/// Float network inputs for a batch of samples.
std::pair<Tensor<float>, Tensor<float>> batch_inputs(
  std::span<const Sample * const> batch, bool zero_map);

class Trainer
{
public:
  Trainer(RunConfig cfg, std::span<const Sample> samples);

  /// Runs one optimisation step and returns its loss breakdown. Throws
  /// TrainingError on a non-finite loss or gradient, leaving the weights
  /// of the last good step in place.
  loss::LossBreakdown step();
  /// Runs until `cfg.train.steps`, calling `on_step` after each step.
  void run(const std::function<void(long, const loss::LossBreakdown &)> & on_step = {});

  long steps_done() const { return step_; }
  net::IntentNet<float> & network() { return net_; }
  const net::AdamState<float> & adam() const { return adam_; }
  net::Checkpoint checkpoint() const;
  void resume(const net::Checkpoint & ckpt);

  /// Sample indices used by `step` (0-based).
  std::vector<std::size_t> batch_indices(long step) const;

private:
  RunConfig cfg_;
  std::span<const Sample> samples_;
  net::IntentNet<float> net_;
  net::AdamState<float> adam_;
  anchors::AnchorGrid grid_;
  long step_{0};
};

/// Post-NMS detections for one sample, in its ego frame.
std::vector<infer::Detection> detect(
  net::IntentNet<float> & network, const Sample & sample, const anchors::AnchorGrid & grid, bool zero_map);

/// Runs detection and the tracker over consecutive samples of one scenario.
infer::PredictionFile predict_scenario(
  net::IntentNet<float> & network, const scene::Scenario & scenario, std::span<const Sample> samples,
  const RunConfig & cfg, const anchors::AnchorGrid & grid);

/// Pairs predictions with the ground truth of the samples they came from.
std::vector<metrics::EvalFrame> eval_frames(
  const infer::PredictionFile & predictions, std::span<const Sample> samples);

/// Replaces every waypoint with the current box (constant-position model).
std::vector<metrics::EvalFrame> constant_position(std::vector<metrics::EvalFrame> frames);

/// Replaces the detections with the ground truth itself (score 1, one-hot
/// intention, missing futures held at the current box).
std::vector<metrics::EvalFrame> ground_truth_as_predictions(std::vector<metrics::EvalFrame> frames);

}  // namespace bevintent::pipeline

#endif  // BEVINTENT_PIPELINE_HPP_
