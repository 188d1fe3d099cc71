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

// Batch commands behind the `bevintent` executable. Each command validates
// its configuration and paths before touching the file system.

#ifndef BEVINTENT_CLI_COMMANDS_HPP_
#define BEVINTENT_CLI_COMMANDS_HPP_

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "bevintent/infer.hpp"
#include "bevintent/pipeline.hpp"
#include "bevintent/scene.hpp"

namespace bevintent::cli
{

// --- Dataset manifest --------------------------------------------------------

inline constexpr std::string_view kManifestName = "manifest.csv";

struct ManifestEntry
{
  /// Relative to the manifest's directory.
  std::string path;
  std::uint64_t seed{0};
  std::string split;
  /// Scripted maneuver of every actor, counted per action.
  std::array<int, scene::kNumActions> maneuvers{};
};

struct Manifest
{
  std::vector<ManifestEntry> entries;

  std::vector<const ManifestEntry *> split(const std::string & name) const;
};

std::string serialize_manifest(const Manifest & m);
Manifest parse_manifest(const std::string & text, const std::string & source = "<manifest>");
Manifest load_manifest(const std::filesystem::path & path);

// --- Output directory lock ---------------------------------------------------

inline constexpr std::string_view kLockName = ".bevintent.lock";

/// Exclusive writer lock on an output directory, released on destruction.
/// Creates the directory if needed. Throws ConfigError when the directory
/// cannot be created or written, and std::runtime_error when another
/// process holds the lock.
class OutputLock
{
public:
  explicit OutputLock(const std::filesystem::path & dir);
  ~OutputLock();
  OutputLock(const OutputLock &) = delete;
  OutputLock & operator=(const OutputLock &) = delete;

private:
  std::filesystem::path path_;
};

// --- Commands ------------------------------------------------------------------

struct SynthOptions
{
  int count{0};
  /// The last `holdout` scenarios go to the "test" split.
  int holdout{0};
};

/// Writes `count` scenarios and the manifest into `cfg.dataset`.
Manifest cmd_synth(const pipeline::RunConfig & cfg, const SynthOptions & opts, std::ostream & log);

struct EncodeOptions
{
  std::filesystem::path scenario;
  /// Every usable frame when empty.
  std::optional<int> frame;
};

/// Dumps the LiDAR and map tensors of the chosen frames into `cfg.output`.
/// Returns the number of frames written.
int cmd_encode(const pipeline::RunConfig & cfg, const EncodeOptions & opts, std::ostream & log);

struct TrainOptions
{
  std::string split{"train"};
  /// Checkpoint to continue from.
  std::optional<std::filesystem::path> resume;
};

inline constexpr std::string_view kTrainLogName = "train.csv";
inline constexpr std::string_view kModelName = "model.ckpt";
inline constexpr std::string_view kLastGoodName = "last_good.ckpt";

/// Trains on the manifest split. Writes train.csv, periodic checkpoints and
/// the final model into `cfg.output`. On a non-finite loss the last good
/// weights are saved to last_good.ckpt and the TrainingError is rethrown.
void cmd_train(const pipeline::RunConfig & cfg, const TrainOptions & opts, std::ostream & log);

struct EvalOptions
{
  std::string split{"test"};
  /// Score the ground truth itself instead of a model.
  bool ground_truth{false};
  /// Evaluate saved prediction files from this directory instead of
  /// running the model.
  std::optional<std::filesystem::path> predictions;
};

inline constexpr std::string_view kReportCsvName = "report.csv";
inline constexpr std::string_view kReportTextName = "report.txt";
inline constexpr std::string_view kByActionName = "by_action.csv";

/// Writes report.csv, report.txt and by_action.csv into `cfg.output`.
metrics::EvalReport cmd_eval(const pipeline::RunConfig & cfg, const EvalOptions & opts, std::ostream & log);

struct PredictOptions
{
  std::string split{"test"};
};

/// Writes `<scenario stem>.predictions.jsonl` per scenario into `cfg.output`.
/// Returns the number of files written.
int cmd_predict(const pipeline::RunConfig & cfg, const PredictOptions & opts, std::ostream & log);

/// Name of the prediction file for a scenario file.
std::string predictions_name(const std::filesystem::path & scenario);

// --- Visualisation -------------------------------------------------------------

struct VizOptions
{
  std::filesystem::path scenario;
  std::optional<std::filesystem::path> predictions;
  int frame{0};
  std::filesystem::path out;
};

struct SvgStyle
{
  /// Pixels per meter.
  double scale{12.0};
  /// Arrow length in meters at probability 1.
  double arrow_length{4.0};
  /// Every n-th LiDAR point is drawn.
  int point_stride{1};
};

/// Renders one frame in the ego frame of that sweep, covering the voxel
/// grid extent. Throws ConfigError listing the valid range when `frame` is
/// out of range.
std::string render_svg(
  const scene::Scenario & s, const infer::FramePredictions * predictions, int frame,
  const encoder::VoxelConfig & voxel, const SvgStyle & style = {});

/// Direction of the intention glyph for each action, in radians relative to
/// the box heading.
double intent_glyph_angle(scene::Action a);

void cmd_viz(const pipeline::RunConfig & cfg, const VizOptions & opts, std::ostream & log);

// --- Entry point -----------------------------------------------------------------

/// Runs the command line; returns 0 on success, 1 on a usage or
/// configuration error, 2 on a runtime error. Logs go to `err`.
int run_cli(int argc, const char * const * argv, std::ostream & out, std::ostream & err);

}  // namespace bevintent::cli

#endif  // BEVINTENT_CLI_COMMANDS_HPP_
