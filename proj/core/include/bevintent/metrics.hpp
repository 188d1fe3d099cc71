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

// Evaluation: rotated-IoU average precision, trajectory errors over true
// positives and one-vs-rest intention scores.

#ifndef BEVINTENT_METRICS_HPP_
#define BEVINTENT_METRICS_HPP_

#include <array>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bevintent/geom.hpp"
#include "bevintent/infer.hpp"

namespace bevintent::metrics
{

using geom::OrientedBox2D;

struct EvalFilter
{
  /// Ground truths with fewer LiDAR points are ignored.
  int min_points{1};

  void validate() const;
};

struct GroundTruth
{
  OrientedBox2D box;
  int lidar_points{0};
  /// Action label at the current frame.
  int action{-1};
  /// Boxes at future steps 1..T_f, absent when the vehicle leaves the scene.
  std::vector<std::optional<OrientedBox2D>> future;
  /// Stable vehicle id, used to intersect true-positive sets.
  long id{-1};
};

struct EvalFrame
{
  int frame{0};
  std::vector<infer::Detection> detections;
  std::vector<GroundTruth> ground_truth;
};

inline constexpr std::array<double, 5> kApThresholds{0.5, 0.6, 0.7, 0.8, 0.9};
inline constexpr double kTpIou = 0.5;

struct ApResult
{
  double ap{0.0};
  double recall{0.0};
  std::size_t ground_truths{0};
  std::size_t detections{0};
  std::size_t true_positives{0};
  /// Detections discarded because they matched an ignored ground truth.
  std::size_t discarded{0};
  /// Set when both ground truth and detections are empty (AP reported as 1).
  bool empty{false};
};

/// Area under the all-point interpolated precision-recall curve, given the
/// TP flag of each scored detection in descending score order.
double average_precision(std::span<const std::uint8_t> tp_in_score_order, std::size_t positives);

ApResult detection_ap(std::span<const EvalFrame> frames, double iou_threshold, const EvalFilter & filter);

struct TruePositive
{
  std::size_t frame_index{0};
  infer::Detection detection;
  GroundTruth ground_truth;

  std::pair<int, long> key(std::span<const EvalFrame> frames) const;
};

/// Greedy score-ordered matching per frame against unignored ground truth.
std::vector<TruePositive> match_true_positives(
  std::span<const EvalFrame> frames, double iou_threshold, const EvalFilter & filter);

/// Keeps the pairs whose (frame, ground-truth id) appears in every set.
std::vector<std::vector<TruePositive>> intersect_true_positives(
  const std::vector<std::vector<TruePositive>> & sets, std::span<const EvalFrame> frames);

struct PairError
{
  double along{0.0};
  double across{0.0};
  double l2{0.0};
  /// Degrees in [0, 90]; orientations are compared modulo 180.
  double heading{0.0};
};

PairError pair_error(const OrientedBox2D & pred, const OrientedBox2D & gt);

/// Future steps evaluated: 0, 1, 2, 3 s at 0.5 s per step.
inline constexpr std::array<int, 4> kHorizonSteps{0, 2, 4, 6};

struct HorizonErrors
{
  double along{0.0};
  double across{0.0};
  double l2{0.0};
  double heading{0.0};
  std::size_t count{0};
  /// Pairs without ground truth at this horizon.
  std::size_t skipped{0};
};

struct RegressionReport
{
  std::array<HorizonErrors, kHorizonSteps.size()> horizons{};
};

RegressionReport regression_errors(std::span<const TruePositive> pairs);
/// Same as regression_errors, grouped by ground-truth action.
std::map<int, RegressionReport> regression_errors_by_action(std::span<const TruePositive> pairs);

struct ClassScores
{
  bool present{false};
  std::size_t support{0};
  double accuracy{0.0};
  double precision{0.0};
  double recall{0.0};
  double f1{0.0};
};

struct IntentionReport
{
  std::array<ClassScores, 8> classes{};
  double mean_accuracy{0.0};
  double mean_f1{0.0};
  std::size_t samples{0};
  /// Classes absent from both predictions and labels.
  std::vector<int> excluded;
};

IntentionReport intention_metrics(std::span<const int> predicted, std::span<const int> labels);

struct EvalReport
{
  std::array<ApResult, kApThresholds.size()> ap{};
  RegressionReport regression;
  std::map<int, RegressionReport> regression_by_action;
  IntentionReport intention;
  std::size_t frames{0};
};

EvalReport evaluate(std::span<const EvalFrame> frames, const EvalFilter & filter);

/// Long-format CSV: section,key,metric,value.
std::string report_csv(const EvalReport & r);
EvalReport parse_report_csv(const std::string & text, const std::string & source = "<report>");
/// Per-action regression breakdown.
std::string by_action_csv(const EvalReport & r);
/// Plain-text tables for detection, regression and intention.
std::string report_text(const EvalReport & r);

}  // namespace bevintent::metrics

#endif  // BEVINTENT_METRICS_HPP_
