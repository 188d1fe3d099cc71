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

#include "bevintent/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>
#include <set>
#include <sstream>

#include "bevintent/errors.hpp"
#include "bevintent/scene.hpp"

namespace bevintent::metrics
{

void EvalFilter::validate() const
{
  if (min_points < 0) throw ConfigError("eval.min_points must be >= 0");
}

double average_precision(std::span<const std::uint8_t> tp, std::size_t positives)
{
  if (positives == 0) return 0.0;
  const std::size_t n = tp.size();
  std::vector<double> precision(n);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < n; ++i) {
    hits += tp[i] ? 1 : 0;
    precision[i] = static_cast<double>(hits) / static_cast<double>(i + 1);
  }
  // Precision envelope, then one rectangle per recall step.
  for (std::size_t i = n; i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double ap = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (tp[i]) ap += precision[i];
  }
  return ap / static_cast<double>(positives);
}

namespace
{

struct Scored
{
  std::size_t frame;
  std::size_t det;
  double score;
};

std::vector<Scored> pooled_order(std::span<const EvalFrame> frames)
{
  std::vector<Scored> all;
  for (std::size_t f = 0; f < frames.size(); ++f) {
    for (std::size_t d = 0; d < frames[f].detections.size(); ++d) all.push_back({f, d, frames[f].detections[d].score});
  }
  std::stable_sort(all.begin(), all.end(), [](const Scored & a, const Scored & b) { return a.score > b.score; });
  return all;
}

bool counted(const GroundTruth & g, const EvalFilter & filter) { return g.lidar_points >= filter.min_points; }

/// Best unmatched counted ground truth at or above the threshold, or -1.
int best_match(
  const infer::Detection & d, const std::vector<GroundTruth> & gt, const std::vector<char> & used,
  double threshold, const EvalFilter & filter)
{
  int best = -1;
  double best_iou = threshold;
  for (std::size_t g = 0; g < gt.size(); ++g) {
    if (used[g] || !counted(gt[g], filter)) continue;
    const double iou = geom::rotated_iou(d.box, gt[g].box);
    if (iou >= best_iou && (best < 0 || iou > best_iou)) {
      best = static_cast<int>(g);
      best_iou = iou;
    }
  }
  return best;
}

}  // namespace

ApResult detection_ap(std::span<const EvalFrame> frames, double iou_threshold, const EvalFilter & filter)
{
  filter.validate();
  ApResult r;
  std::vector<std::vector<char>> used(frames.size());
  for (std::size_t f = 0; f < frames.size(); ++f) {
    used[f].assign(frames[f].ground_truth.size(), 0);
    for (const auto & g : frames[f].ground_truth) r.ground_truths += counted(g, filter) ? 1 : 0;
  }
  std::vector<std::uint8_t> tp;
  for (const auto & s : pooled_order(frames)) {
    const auto & frame = frames[s.frame];
    const auto & d = frame.detections[s.det];
    const int g = best_match(d, frame.ground_truth, used[s.frame], iou_threshold, filter);
    if (g >= 0) {
      used[s.frame][static_cast<std::size_t>(g)] = 1;
      tp.push_back(1);
      continue;
    }
    const bool on_ignored = std::any_of(frame.ground_truth.begin(), frame.ground_truth.end(), [&](const GroundTruth & gt) {
      return !counted(gt, filter) && geom::rotated_iou(d.box, gt.box) >= iou_threshold;
    });
    if (on_ignored) {
      ++r.discarded;
      continue;
    }
    tp.push_back(0);
  }
  r.detections = tp.size();
  r.true_positives = static_cast<std::size_t>(std::count(tp.begin(), tp.end(), std::uint8_t{1}));
  if (r.ground_truths == 0) {
    r.empty = tp.empty();
    r.ap = r.empty ? 1.0 : 0.0;
    r.recall = r.empty ? 1.0 : 0.0;
    return r;
  }
  r.ap = average_precision(tp, r.ground_truths);
  r.recall = static_cast<double>(r.true_positives) / static_cast<double>(r.ground_truths);
  return r;
}

std::pair<int, long> TruePositive::key(std::span<const EvalFrame> frames) const
{
  return {frames[frame_index].frame, ground_truth.id};
}

std::vector<TruePositive> match_true_positives(
  std::span<const EvalFrame> frames, double iou_threshold, const EvalFilter & filter)
{
  filter.validate();
  std::vector<TruePositive> out;
  for (std::size_t f = 0; f < frames.size(); ++f) {
    const auto & frame = frames[f];
    std::vector<std::size_t> order(frame.detections.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return frame.detections[a].score > frame.detections[b].score;
    });
    std::vector<char> used(frame.ground_truth.size(), 0);
    for (const auto d : order) {
      const int g = best_match(frame.detections[d], frame.ground_truth, used, iou_threshold, filter);
      if (g < 0) continue;
      used[static_cast<std::size_t>(g)] = 1;
      out.push_back({f, frame.detections[d], frame.ground_truth[static_cast<std::size_t>(g)]});
    }
  }
  return out;
}

std::vector<std::vector<TruePositive>> intersect_true_positives(
  const std::vector<std::vector<TruePositive>> & sets, std::span<const EvalFrame> frames)
{
  if (sets.empty()) return {};
  std::set<std::pair<int, long>> common;
  for (const auto & tp : sets[0]) common.insert(tp.key(frames));
  for (std::size_t s = 1; s < sets.size(); ++s) {
    std::set<std::pair<int, long>> here;
    for (const auto & tp : sets[s]) {
      if (common.count(tp.key(frames))) here.insert(tp.key(frames));
    }
    common = std::move(here);
  }
  std::vector<std::vector<TruePositive>> out(sets.size());
  for (std::size_t s = 0; s < sets.size(); ++s) {
    for (const auto & tp : sets[s]) {
      if (common.count(tp.key(frames))) out[s].push_back(tp);
    }
  }
  return out;
}

PairError pair_error(const OrientedBox2D & pred, const OrientedBox2D & gt)
{
  const double dx = pred.cx - gt.cx;
  const double dy = pred.cy - gt.cy;
  const double c = std::cos(gt.phi);
  const double s = std::sin(gt.phi);
  PairError e;
  e.along = std::abs(dx * c + dy * s);
  e.across = std::abs(-dx * s + dy * c);
  e.l2 = std::hypot(dx, dy);
  double d = std::fmod(std::abs(pred.phi - gt.phi), std::numbers::pi);
  d = std::min(d, std::numbers::pi - d);
  e.heading = d * 180.0 / std::numbers::pi;
  return e;
}

namespace
{

void accumulate(RegressionReport & r, const TruePositive & tp)
{
  for (std::size_t h = 0; h < kHorizonSteps.size(); ++h) {
    const int t = kHorizonSteps[h];
    auto & acc = r.horizons[h];
    std::optional<OrientedBox2D> gt;
    if (t == 0) gt = tp.ground_truth.box;
    else if (static_cast<std::size_t>(t) <= tp.ground_truth.future.size()) gt = tp.ground_truth.future[static_cast<std::size_t>(t - 1)];
    if (!gt || static_cast<std::size_t>(t) > tp.detection.waypoints.size()) {
      ++acc.skipped;
      continue;
    }
    const auto & pred = t == 0 ? tp.detection.box : tp.detection.waypoints[static_cast<std::size_t>(t - 1)];
    const auto e = pair_error(pred, *gt);
    acc.along += e.along;
    acc.across += e.across;
    acc.l2 += e.l2;
    acc.heading += e.heading;
    ++acc.count;
  }
}

void finish(RegressionReport & r)
{
  for (auto & h : r.horizons) {
    if (h.count == 0) continue;
    const double n = static_cast<double>(h.count);
    h.along /= n;
    h.across /= n;
    h.l2 /= n;
    h.heading /= n;
  }
}

}  // namespace

RegressionReport regression_errors(std::span<const TruePositive> pairs)
{
  RegressionReport r;
  for (const auto & tp : pairs) accumulate(r, tp);
  finish(r);
  return r;
}

std::map<int, RegressionReport> regression_errors_by_action(std::span<const TruePositive> pairs)
{
  std::map<int, RegressionReport> out;
  for (const auto & tp : pairs) accumulate(out[tp.ground_truth.action], tp);
  for (auto & [a, r] : out) finish(r);
  return out;
}

IntentionReport intention_metrics(std::span<const int> predicted, std::span<const int> labels)
{
  if (predicted.size() != labels.size()) {
    throw ConfigError("intention_metrics: " + std::to_string(predicted.size()) + " predictions for " +
                      std::to_string(labels.size()) + " labels");
  }
  IntentionReport r;
  r.samples = labels.size();
  std::size_t present = 0;
  for (int c = 0; c < 8; ++c) {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const bool p = predicted[i] == c;
      const bool l = labels[i] == c;
      tp += p && l;
      fp += p && !l;
      fn += !p && l;
    }
    auto & s = r.classes[static_cast<std::size_t>(c)];
    s.support = tp + fn;
    s.present = tp + fp + fn > 0;
    if (!s.present) {
      r.excluded.push_back(c);
      continue;
    }
    const double n = static_cast<double>(labels.size());
    s.accuracy = (n - static_cast<double>(fp + fn)) / n;
    s.precision = tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    s.recall = tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
    s.f1 = s.precision + s.recall > 0.0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
    r.mean_accuracy += s.accuracy;
    r.mean_f1 += s.f1;
    ++present;
  }
  if (present) {
    r.mean_accuracy /= static_cast<double>(present);
    r.mean_f1 /= static_cast<double>(present);
  }
  return r;
}

EvalReport evaluate(std::span<const EvalFrame> frames, const EvalFilter & filter)
{
  EvalReport r;
  r.frames = frames.size();
  for (std::size_t i = 0; i < kApThresholds.size(); ++i) r.ap[i] = detection_ap(frames, kApThresholds[i], filter);
  const auto tps = match_true_positives(frames, kTpIou, filter);
  r.regression = regression_errors(tps);
  r.regression_by_action = regression_errors_by_action(tps);
  std::vector<int> pred, labels;
  for (const auto & tp : tps) {
    if (tp.ground_truth.action < 0) continue;
    pred.push_back(tp.detection.intent_argmax());
    labels.push_back(tp.ground_truth.action);
  }
  r.intention = intention_metrics(pred, labels);
  return r;
}

// ------------------------------------------------------------------- output

namespace
{

std::string num(double v)
{
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void regression_rows(std::ostringstream & os, const std::string & section, const RegressionReport & r)
{
  for (std::size_t h = 0; h < kHorizonSteps.size(); ++h) {
    const auto & e = r.horizons[h];
    const auto key = std::to_string(kHorizonSteps[h]);
    os << section << ',' << key << ",along," << num(e.along) << '\n';
    os << section << ',' << key << ",across," << num(e.across) << '\n';
    os << section << ',' << key << ",l2," << num(e.l2) << '\n';
    os << section << ',' << key << ",heading," << num(e.heading) << '\n';
    os << section << ',' << key << ",count," << e.count << '\n';
    os << section << ',' << key << ",skipped," << e.skipped << '\n';
  }
}

void set_regression(RegressionReport & r, int step, const std::string & metric, double v, const std::string & where)
{
  const auto it = std::find(kHorizonSteps.begin(), kHorizonSteps.end(), step);
  if (it == kHorizonSteps.end()) throw ParseError(where, "unknown horizon step " + std::to_string(step));
  auto & e = r.horizons[static_cast<std::size_t>(it - kHorizonSteps.begin())];
  if (metric == "along") e.along = v;
  else if (metric == "across") e.across = v;
  else if (metric == "l2") e.l2 = v;
  else if (metric == "heading") e.heading = v;
  else if (metric == "count") e.count = static_cast<std::size_t>(v);
  else if (metric == "skipped") e.skipped = static_cast<std::size_t>(v);
  else throw ParseError(where, "unknown regression metric '" + metric + "'");
}

std::string action_name(int a)
{
  if (a < 0 || a >= scene::kNumActions) return "unlabelled";
  return std::string(scene::to_string(static_cast<scene::Action>(a)));
}

}  // namespace

std::string report_csv(const EvalReport & r)
{
  std::ostringstream os;
  os << "section,key,metric,value\n";
  os << "meta,frames,count," << r.frames << '\n';
  for (std::size_t i = 0; i < kApThresholds.size(); ++i) {
    const auto & a = r.ap[i];
    char key[16];
    std::snprintf(key, sizeof key, "%.2f", kApThresholds[i]);
    os << "ap," << key << ",ap," << num(a.ap) << '\n';
    os << "ap," << key << ",recall," << num(a.recall) << '\n';
    os << "ap," << key << ",ground_truths," << a.ground_truths << '\n';
    os << "ap," << key << ",detections," << a.detections << '\n';
    os << "ap," << key << ",true_positives," << a.true_positives << '\n';
    os << "ap," << key << ",discarded," << a.discarded << '\n';
    os << "ap," << key << ",empty," << (a.empty ? 1 : 0) << '\n';
  }
  regression_rows(os, "regression", r.regression);
  for (const auto & [a, rep] : r.regression_by_action) regression_rows(os, "regression_action_" + std::to_string(a), rep);
  for (int c = 0; c < 8; ++c) {
    const auto & s = r.intention.classes[static_cast<std::size_t>(c)];
    const auto key = std::to_string(c);
    os << "intention," << key << ",present," << (s.present ? 1 : 0) << '\n';
    os << "intention," << key << ",support," << s.support << '\n';
    os << "intention," << key << ",accuracy," << num(s.accuracy) << '\n';
    os << "intention," << key << ",precision," << num(s.precision) << '\n';
    os << "intention," << key << ",recall," << num(s.recall) << '\n';
    os << "intention," << key << ",f1," << num(s.f1) << '\n';
  }
  os << "intention,mean,accuracy," << num(r.intention.mean_accuracy) << '\n';
  os << "intention,mean,f1," << num(r.intention.mean_f1) << '\n';
  os << "intention,mean,samples," << r.intention.samples << '\n';
  return os.str();
}

EvalReport parse_report_csv(const std::string & text, const std::string & source)
{
  EvalReport r;
  std::istringstream is(text);
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto where = source + ":" + std::to_string(line_no);
    if (line_no == 1) {
      if (line != "section,key,metric,value") throw ParseError(where, "unexpected report header");
      continue;
    }
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) f.push_back(cell);
    if (f.size() != 4) throw ParseError(where, "expected 4 fields");
    double v = 0.0;
    try {
      std::size_t used = 0;
      v = std::stod(f[3], &used);
      if (used != f[3].size()) throw std::invalid_argument(f[3]);
    } catch (const std::exception &) {
      throw ParseError(where, "bad value '" + f[3] + "'");
    }
    const auto & section = f[0];
    const auto & key = f[1];
    const auto & metric = f[2];
    try {
      if (section == "meta") {
        r.frames = static_cast<std::size_t>(v);
      } else if (section == "ap") {
        const double thr = std::stod(key);
        const auto it = std::find(kApThresholds.begin(), kApThresholds.end(), thr);
        if (it == kApThresholds.end()) throw ParseError(where, "unknown AP threshold " + key);
        auto & a = r.ap[static_cast<std::size_t>(it - kApThresholds.begin())];
        if (metric == "ap") a.ap = v;
        else if (metric == "recall") a.recall = v;
        else if (metric == "ground_truths") a.ground_truths = static_cast<std::size_t>(v);
        else if (metric == "detections") a.detections = static_cast<std::size_t>(v);
        else if (metric == "true_positives") a.true_positives = static_cast<std::size_t>(v);
        else if (metric == "discarded") a.discarded = static_cast<std::size_t>(v);
        else if (metric == "empty") a.empty = v != 0.0;
        else throw ParseError(where, "unknown AP metric '" + metric + "'");
      } else if (section == "regression") {
        set_regression(r.regression, std::stoi(key), metric, v, where);
      } else if (section.rfind("regression_action_", 0) == 0) {
        const int a = std::stoi(section.substr(18));
        set_regression(r.regression_by_action[a], std::stoi(key), metric, v, where);
      } else if (section == "intention" && key == "mean") {
        if (metric == "accuracy") r.intention.mean_accuracy = v;
        else if (metric == "f1") r.intention.mean_f1 = v;
        else if (metric == "samples") r.intention.samples = static_cast<std::size_t>(v);
        else throw ParseError(where, "unknown intention metric '" + metric + "'");
      } else if (section == "intention") {
        const int c = std::stoi(key);
        if (c < 0 || c >= 8) throw ParseError(where, "class out of range");
        auto & s = r.intention.classes[static_cast<std::size_t>(c)];
        if (metric == "present") s.present = v != 0.0;
        else if (metric == "support") s.support = static_cast<std::size_t>(v);
        else if (metric == "accuracy") s.accuracy = v;
        else if (metric == "precision") s.precision = v;
        else if (metric == "recall") s.recall = v;
        else if (metric == "f1") s.f1 = v;
        else throw ParseError(where, "unknown intention metric '" + metric + "'");
      } else {
        throw ParseError(where, "unknown section '" + section + "'");
      }
    } catch (const std::logic_error &) {
      throw ParseError(where, "bad key '" + key + "'");
    }
  }
  if (line_no == 0) throw ParseError(source, "empty report");
  for (int c = 0; c < 8; ++c) {
    if (!r.intention.classes[static_cast<std::size_t>(c)].present) r.intention.excluded.push_back(c);
  }
  return r;
}

std::string by_action_csv(const EvalReport & r)
{
  std::ostringstream os;
  os << "action,horizon_s,along,across,l2,heading,count\n";
  for (const auto & [a, rep] : r.regression_by_action) {
    for (std::size_t h = 0; h < kHorizonSteps.size(); ++h) {
      const auto & e = rep.horizons[h];
      os << action_name(a) << ',' << num(kHorizonSteps[h] * 0.5) << ',' << num(e.along) << ',' << num(e.across) << ','
         << num(e.l2) << ',' << num(e.heading) << ',' << e.count << '\n';
    }
  }
  return os.str();
}

std::string report_text(const EvalReport & r)
{
  std::ostringstream os;
  char buf[160];
  os << "Detection (" << r.frames << " frames)\n";
  os << "  IoU    AP       recall   gt     dets\n";
  for (std::size_t i = 0; i < kApThresholds.size(); ++i) {
    const auto & a = r.ap[i];
    std::snprintf(buf, sizeof buf, "  %.1f    %.4f   %.4f   %-6zu %zu%s\n", kApThresholds[i], a.ap, a.recall,
                  a.ground_truths, a.detections, a.empty ? "  (empty)" : "");
    os << buf;
  }
  os << "\nTrajectory (true positives at IoU 0.5)\n";
  os << "  t(s)   along(m)  across(m)  L2(m)    heading(deg)  n\n";
  for (std::size_t h = 0; h < kHorizonSteps.size(); ++h) {
    const auto & e = r.regression.horizons[h];
    std::snprintf(buf, sizeof buf, "  %.1f    %.4f    %.4f     %.4f   %.3f         %zu\n", kHorizonSteps[h] * 0.5,
                  e.along, e.across, e.l2, e.heading, e.count);
    os << buf;
  }
  os << "\nIntention (current frame)\n";
  os << "  class                accuracy  F1      support\n";
  for (int c = 0; c < 8; ++c) {
    const auto & s = r.intention.classes[static_cast<std::size_t>(c)];
    if (!s.present) {
      std::snprintf(buf, sizeof buf, "  %-20s (absent)\n", action_name(c).c_str());
    } else {
      std::snprintf(buf, sizeof buf, "  %-20s %.4f    %.4f  %zu\n", action_name(c).c_str(), s.accuracy, s.f1,
                    s.support);
    }
    os << buf;
  }
  std::snprintf(buf, sizeof buf, "  %-20s %.4f    %.4f  %zu\n", "mean", r.intention.mean_accuracy, r.intention.mean_f1,
                r.intention.samples);
  os << buf;
  return os.str();
}

}  // namespace bevintent::metrics
