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

#include "bevintent/infer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "bevintent/errors.hpp"

namespace bevintent::infer
{

int Detection::intent_argmax() const
{
  return static_cast<int>(std::max_element(intent.begin(), intent.end()) - intent.begin());
}

template <typename T>
std::vector<Detection> decode_detections(
  const net::HeadOutputs<T> & out, int n, const anchors::AnchorGrid & grid, double threshold, DecodeStats * stats)
{
  if (out.rows() != grid.rows || out.cols() != grid.cols || out.anchors != grid.per_cell) {
    throw ConfigError("decode_detections: head outputs " + std::to_string(out.rows()) + "x" +
                      std::to_string(out.cols()) + " do not match the anchor grid " + std::to_string(grid.rows) + "x" +
                      std::to_string(grid.cols));
  }
  DecodeStats local;
  std::vector<Detection> dets;
  std::vector<double> values(static_cast<std::size_t>(out.reg_width));
  const int classes = out.intent.dim(1);
  for (int i = 0; i < grid.rows; ++i) {
    for (int j = 0; j < grid.cols; ++j) {
      for (int k = 0; k < grid.per_cell; ++k) {
        const double p = static_cast<double>(out.vehicle_prob(n, i, j, k));
        if (!(p >= threshold)) continue;
        ++local.candidates;
        for (int r = 0; r < out.reg_width; ++r) {
          values[static_cast<std::size_t>(r)] = static_cast<double>(out.reg_value(n, i, j, k, r));
        }
        const auto idx = grid.index(i, j, k);
        std::vector<OrientedBox2D> boxes;
        try {
          boxes = anchors::decode_targets(values, grid.boxes[idx]);
        } catch (const DecodeError &) {
          ++local.dropped;
          continue;
        }
        Detection d;
        d.box = boxes[0];
        d.score = p;
        d.waypoints.assign(boxes.begin() + 1, boxes.end());
        d.anchor = static_cast<long>(idx);
        double mx = -1e300;
        for (int c = 0; c < classes; ++c) mx = std::max(mx, static_cast<double>(out.intent_logit(n, i, j, c)));
        double sum = 0.0;
        for (int c = 0; c < classes && c < 8; ++c) {
          d.intent[static_cast<std::size_t>(c)] = std::exp(static_cast<double>(out.intent_logit(n, i, j, c)) - mx);
          sum += d.intent[static_cast<std::size_t>(c)];
        }
        for (auto & v : d.intent) v /= sum;
        dets.push_back(std::move(d));
      }
    }
  }
  if (stats) *stats = local;
  return dets;
}

template std::vector<Detection> decode_detections(
  const net::HeadOutputs<float> &, int, const anchors::AnchorGrid &, double, DecodeStats *);
template std::vector<Detection> decode_detections(
  const net::HeadOutputs<double> &, int, const anchors::AnchorGrid &, double, DecodeStats *);

std::vector<Detection> nms(const std::vector<Detection> & dets, double iou_threshold)
{
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });
  std::vector<Detection> kept;
  for (const auto i : order) {
    bool keep = true;
    for (const auto & k : kept) {
      if (geom::rotated_iou(k.box, dets[i].box) >= iou_threshold) {
        keep = false;
        break;
      }
    }
    if (keep) kept.push_back(dets[i]);
  }
  return kept;
}

Detection transform_detection(const Detection & d, const geom::RigidPose & from, const geom::RigidPose & to)
{
  Detection out = d;
  out.box = geom::transform_box(d.box, from, to);
  for (auto & w : out.waypoints) w = geom::transform_box(w, from, to);
  return out;
}

// ------------------------------------------------------------------- tracker

void TrackerConfig::validate() const
{
  if (!(gate > 0.0)) throw ConfigError("tracker.gate must be positive");
  if (!(ema >= 0.0 && ema <= 1.0)) throw ConfigError("tracker.ema must be in [0, 1]");
  if (coast_limit < 0) throw ConfigError("tracker.coast_limit must be >= 0");
  if (!(coast_decay >= 0.0 && coast_decay <= 1.0)) throw ConfigError("tracker.coast_decay must be in [0, 1]");
  if (frames_per_step < 1) throw ConfigError("tracker.frames_per_step must be >= 1");
}

void apply_tracker_key(TrackerConfig & c, const std::string & key, const std::string & value)
{
  double v = 0.0;
  try {
    std::size_t used = 0;
    v = std::stod(value, &used);
    if (value.find_first_not_of(" \t", used) != std::string::npos) throw std::invalid_argument(value);
  } catch (const std::exception &) {
    throw ConfigError("tracker." + key + ": '" + value + "' is not a number");
  }
  if (key == "gate") c.gate = v;
  else if (key == "ema") c.ema = v;
  else if (key == "coast_limit") c.coast_limit = static_cast<int>(v);
  else if (key == "coast_decay") c.coast_decay = v;
  else if (key == "frames_per_step") c.frames_per_step = static_cast<int>(v);
  else throw ConfigError("unknown tracker key '" + key + "'");
}

const TrackEntry & Tracklet::last_observed() const
{
  for (auto it = history.rbegin(); it != history.rend(); ++it) {
    if (!it->coasted) return *it;
  }
  return history.front();
}

OrientedBox2D Tracklet::predict(int frame, int frames_per_step) const
{
  const auto & base = last_observed();
  const auto & d = base.detection;
  const double s = static_cast<double>(frame - base.frame) / frames_per_step;
  if (s <= 0.0 || d.waypoints.empty()) return d.box;
  std::vector<OrientedBox2D> path;
  path.reserve(d.waypoints.size() + 1);
  path.push_back(d.box);
  path.insert(path.end(), d.waypoints.begin(), d.waypoints.end());
  // Past the horizon, continue along the last segment.
  const std::size_t seg = std::min(static_cast<std::size_t>(s), path.size() - 2);
  const double f = s - static_cast<double>(seg);
  const auto & a = path[seg];
  const auto & b = path[seg + 1];
  OrientedBox2D out = d.box;
  out.cx = a.cx + f * (b.cx - a.cx);
  out.cy = a.cy + f * (b.cy - a.cy);
  out.phi = geom::normalize_angle(a.phi + f * geom::normalize_angle(b.phi - a.phi));
  return out;
}

Tracker::Tracker(TrackerConfig cfg) : cfg_(cfg) { cfg_.validate(); }

std::vector<int> Tracker::update_tracks(const std::vector<Detection> & dets, int frame)
{
  if (frame <= last_frame_) {
    throw ConfigError("tracker frames must increase: got " + std::to_string(frame) + " after " +
                      std::to_string(last_frame_));
  }
  last_frame_ = frame;
  std::vector<OrientedBox2D> predicted;
  predicted.reserve(live_.size());
  for (const auto & t : live_) predicted.push_back(t.predict(frame, cfg_.frames_per_step));

  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });

  std::vector<int> ids(dets.size(), -1);
  std::vector<char> taken(live_.size(), 0);
  for (const auto di : order) {
    const auto & d = dets[di];
    // Live tracklets stay sorted by id, so strict < breaks ties to the lowest id.
    int best = -1;
    double best_dist = 0.0;
    for (std::size_t ti = 0; ti < live_.size(); ++ti) {
      if (taken[ti]) continue;
      const double dist = std::hypot(d.box.cx - predicted[ti].cx, d.box.cy - predicted[ti].cy);
      if (dist > cfg_.gate) continue;
      if (best < 0 || dist < best_dist) {
        best = static_cast<int>(ti);
        best_dist = dist;
      }
    }
    if (best < 0) continue;
    auto & t = live_[static_cast<std::size_t>(best)];
    taken[static_cast<std::size_t>(best)] = 1;
    t.history.push_back({frame, d, false});
    t.score = (1.0 - cfg_.ema) * t.score + cfg_.ema * d.score;
    t.coasted = 0;
    ids[di] = t.id;
  }

  std::vector<Tracklet> still;
  still.reserve(live_.size() + dets.size());
  for (std::size_t ti = 0; ti < live_.size(); ++ti) {
    auto & t = live_[ti];
    if (!taken[ti]) {
      if (t.coasted >= cfg_.coast_limit) {
        retired_.push_back(std::move(t));
        continue;
      }
      Detection ghost = t.last_observed().detection;
      ghost.box = predicted[ti];
      ghost.waypoints.clear();
      t.score *= cfg_.coast_decay;
      ghost.score = t.score;
      ghost.anchor = -1;
      t.history.push_back({frame, std::move(ghost), true});
      ++t.coasted;
    }
    still.push_back(std::move(t));
  }
  for (const auto di : order) {
    if (ids[di] >= 0) continue;
    Tracklet t;
    t.id = next_id_++;
    t.score = dets[di].score;
    t.history.push_back({frame, dets[di], false});
    ids[di] = t.id;
    still.push_back(std::move(t));
  }
  live_ = std::move(still);
  return ids;
}

// --------------------------------------------------------------- predictions

namespace
{

nlohmann::json box_json(const OrientedBox2D & b) { return nlohmann::json::array({b.cx, b.cy, b.w, b.h, b.phi}); }

OrientedBox2D box_from(const nlohmann::json & j)
{
  if (!j.is_array() || j.size() != 5) throw std::invalid_argument("box must be [cx, cy, w, h, phi]");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>(), j[4].get<double>()};
}

}  // namespace

std::string serialize_predictions(const PredictionFile & p)
{
  std::string out;
  nlohmann::json header{{"format", kPredictionFormat},
                        {"version", kPredictionVersion},
                        {"scenario_seed", p.scenario_seed},
                        {"step_seconds", p.step_seconds},
                        {"units", "meters, radians, BEV frame of each frame's ego pose"}};
  out += header.dump() + "\n";
  for (const auto & f : p.frames) {
    nlohmann::json dets = nlohmann::json::array();
    for (std::size_t i = 0; i < f.detections.size(); ++i) {
      const auto & d = f.detections[i];
      nlohmann::json way = nlohmann::json::array();
      for (const auto & w : d.waypoints) way.push_back({w.cx, w.cy, w.phi});
      dets.push_back({{"box", box_json(d.box)},
                      {"score", d.score},
                      {"intent", d.intent},
                      {"waypoints", way},
                      {"anchor", d.anchor},
                      {"track", i < f.track_ids.size() ? f.track_ids[i] : -1}});
    }
    out += nlohmann::json{{"frame", f.frame}, {"detections", dets}}.dump() + "\n";
  }
  return out;
}

PredictionFile deserialize_predictions(const std::string & text, const std::string & source)
{
  std::istringstream is(text);
  std::string line;
  int line_no = 0;
  PredictionFile p;
  const auto where = [&] { return source + ":" + std::to_string(line_no); };
  try {
    if (!std::getline(is, line)) throw ParseError(source + ":1", "empty prediction file");
    ++line_no;
    const auto header = nlohmann::json::parse(line);
    if (header.value("format", "") != kPredictionFormat) throw VersionError(source + ": not a prediction file");
    if (header.value("version", "") != kPredictionVersion) {
      throw VersionError(source + ": prediction version '" + header.value("version", "") + "' unsupported");
    }
    p.scenario_seed = header.at("scenario_seed").get<std::uint64_t>();
    p.step_seconds = header.at("step_seconds").get<double>();
    while (std::getline(is, line)) {
      ++line_no;
      if (line.empty()) continue;
      const auto j = nlohmann::json::parse(line);
      FramePredictions f;
      f.frame = j.at("frame").get<int>();
      for (const auto & d : j.at("detections")) {
        Detection det;
        det.box = box_from(d.at("box"));
        det.score = d.at("score").get<double>();
        det.intent = d.at("intent").get<std::array<double, 8>>();
        for (const auto & w : d.at("waypoints")) {
          if (!w.is_array() || w.size() != 3) throw std::invalid_argument("waypoint must be [cx, cy, phi]");
          det.waypoints.push_back({w[0].get<double>(), w[1].get<double>(), det.box.w, det.box.h, w[2].get<double>()});
        }
        det.anchor = d.value("anchor", -1L);
        f.detections.push_back(std::move(det));
        f.track_ids.push_back(d.value("track", -1));
      }
      p.frames.push_back(std::move(f));
    }
  } catch (const nlohmann::json::exception & e) {
    throw ParseError(where(), e.what());
  } catch (const std::invalid_argument & e) {
    throw ParseError(where(), e.what());
  }
  return p;
}

void save_predictions(const PredictionFile & p, const std::filesystem::path & path)
{
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << serialize_predictions(p);
}

PredictionFile load_predictions(const std::filesystem::path & path)
{
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ParseError(path.string(), "cannot open");
  std::stringstream ss;
  ss << is.rdbuf();
  return deserialize_predictions(ss.str(), path.string());
}

}  // namespace bevintent::infer
