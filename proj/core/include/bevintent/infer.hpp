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

// Inference: thresholded decoding, rotated NMS and the prediction-based
// tracklet decoder.

#ifndef BEVINTENT_INFER_HPP_
#define BEVINTENT_INFER_HPP_

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "bevintent/anchors.hpp"
#include "bevintent/geom.hpp"
#include "bevintent/net.hpp"

namespace bevintent::infer
{

using geom::OrientedBox2D;

inline constexpr double kScoreThreshold = 0.1;
inline constexpr double kNmsIou = 0.1;

struct Detection
{
  OrientedBox2D box;
  double score{0.0};
  std::array<double, 8> intent{};
  /// Boxes at t = 1..T_f, spaced by the future step.
  std::vector<OrientedBox2D> waypoints;
  /// Anchor index the detection was decoded from, or -1.
  long anchor{-1};

  int intent_argmax() const;
};

struct DecodeStats
{
  std::size_t candidates{0};
  std::size_t dropped{0};
};

/// Detections of batch element `n` with vehicle probability >= threshold,
/// in anchor-index order.
template <typename T>
std::vector<Detection> decode_detections(
  const net::HeadOutputs<T> & out, int n, const anchors::AnchorGrid & grid, double threshold = kScoreThreshold,
  DecodeStats * stats = nullptr);

/// Greedy rotated NMS; ties in score keep input order.
std::vector<Detection> nms(const std::vector<Detection> & dets, double iou_threshold = kNmsIou);

/// Expresses a detection given in the `from` frame in the `to` frame.
Detection transform_detection(const Detection & d, const geom::RigidPose & from, const geom::RigidPose & to);

struct TrackerConfig
{
  double gate{2.0};
  double ema{0.5};
  int coast_limit{2};
  double coast_decay{0.5};
  /// Frames between consecutive waypoints.
  int frames_per_step{5};

  void validate() const;
};

void apply_tracker_key(TrackerConfig & cfg, const std::string & key, const std::string & value);

struct TrackEntry
{
  int frame{0};
  Detection detection;
  bool coasted{false};
};

struct Tracklet
{
  int id{0};
  std::vector<TrackEntry> history;
  double score{0.0};
  int coasted{0};

  /// Box predicted for `frame` from the last observed detection.
  OrientedBox2D predict(int frame, int frames_per_step) const;
  const TrackEntry & last_observed() const;
};

class Tracker
{
public:
  explicit Tracker(TrackerConfig cfg = {});

  /// Associates post-NMS detections for `frame` (strictly increasing).
  /// Returns the tracklet id assigned to each detection.
  std::vector<int> update_tracks(const std::vector<Detection> & dets, int frame);

  const std::vector<Tracklet> & live() const { return live_; }
  const std::vector<Tracklet> & retired() const { return retired_; }

private:
  TrackerConfig cfg_;
  std::vector<Tracklet> live_;
  std::vector<Tracklet> retired_;
  int next_id_{0};
  int last_frame_{-1};
};

struct FramePredictions
{
  int frame{0};
  std::vector<Detection> detections;
  std::vector<int> track_ids;
};

inline constexpr std::string_view kPredictionFormat = "bevintent.predictions";
inline constexpr std::string_view kPredictionVersion = "v1";

struct PredictionFile
{
  std::uint64_t scenario_seed{0};
  double step_seconds{0.5};
  std::vector<FramePredictions> frames;
};

std::string serialize_predictions(const PredictionFile & p);
PredictionFile deserialize_predictions(const std::string & text, const std::string & source = "<predictions>");
void save_predictions(const PredictionFile & p, const std::filesystem::path & path);
PredictionFile load_predictions(const std::filesystem::path & path);

}  // namespace bevintent::infer

#endif  // BEVINTENT_INFER_HPP_
