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

// Slow brute-force references for assignment, NMS, negative mining and AP,
// shared by the unit tests and the acceptance suite.

#ifndef BEVINTENT_TESTS_REFERENCE_HPP_
#define BEVINTENT_TESTS_REFERENCE_HPP_

#include <algorithm>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <vector>

#include "bevintent/anchors.hpp"
#include "bevintent/geom.hpp"
#include "bevintent/infer.hpp"
#include "bevintent/metrics.hpp"

namespace reference
{

using bevintent::anchors::AnchorGrid;
using bevintent::anchors::Assignment;
using bevintent::geom::OrientedBox2D;
using bevintent::infer::Detection;
using bevintent::metrics::EvalFrame;
namespace geom = bevintent::geom;

/// Brute-force assignment over every (anchor, ground truth) pair.
inline Assignment reference_assign(const AnchorGrid & grid, const std::vector<OrientedBox2D> & gt, double threshold)
{
  Assignment a;
  a.q.assign(grid.size(), 0);
  a.matched.assign(grid.size(), -1);
  a.best_iou.assign(grid.size(), 0.0);
  std::vector<int> matched_any(gt.size(), 0);
  for (std::size_t idx = 0; idx < grid.size(); ++idx) {
    double best = 0.0;
    int arg = -1;
    for (std::size_t g = 0; g < gt.size(); ++g) {
      const double iou = geom::rotated_iou(grid.boxes[idx], gt[g]);
      if (iou > best) {
        best = iou;
        arg = static_cast<int>(g);
      }
    }
    a.best_iou[idx] = best;
    if (arg >= 0 && best >= threshold) {
      a.q[idx] = 1;
      a.matched[idx] = arg;
      matched_any[arg] = 1;
    }
  }
  for (std::size_t g = 0; g < gt.size(); ++g) {
    if (matched_any[g]) continue;
    double best = 0.0, best_free = 0.0;
    std::size_t arg = 0, arg_free = 0;
    for (std::size_t idx = 0; idx < grid.size(); ++idx) {
      const double iou = geom::rotated_iou(grid.boxes[idx], gt[g]);
      if (iou > best) {
        best = iou;
        arg = idx;
      }
      if (!a.q[idx] && iou > best_free) {
        best_free = iou;
        arg_free = idx;
      }
    }
    if (best_free > 0.0) arg = arg_free;
    if (best > 0.0) {
      a.q[arg] = 1;
      a.matched[arg] = static_cast<int>(g);
    }
  }
  return a;
}

/// Classic formulation: repeatedly take the best remaining box and delete
/// everything overlapping it.
inline std::vector<Detection> reference_nms(std::vector<Detection> dets, double thr)
{
  std::vector<Detection> kept;
  std::vector<char> alive(dets.size(), 1);
  for (;;) {
    int best = -1;
    for (std::size_t i = 0; i < dets.size(); ++i) {
      if (alive[i] && (best < 0 || dets[i].score > dets[static_cast<std::size_t>(best)].score)) best = static_cast<int>(i);
    }
    if (best < 0) break;
    const auto b = dets[static_cast<std::size_t>(best)];
    kept.push_back(b);
    for (std::size_t i = 0; i < dets.size(); ++i) {
      if (alive[i] && geom::rotated_iou(b.box, dets[i].box) >= thr) alive[i] = 0;
    }
    alive[static_cast<std::size_t>(best)] = 0;
  }
  return kept;
}

/// AP from every match hypothesis: the hypothesis kept is the one in which
/// each detection, in score order, holds the highest-IoU ground truth left
/// free by the detections above it. Area is summed over distinct recall
/// levels using the best precision at or beyond each level.
inline double exhaustive_ap(const EvalFrame & frame, double thr)
{
  const auto & dets = frame.detections;
  const auto & gt = frame.ground_truth;
  std::vector<std::size_t> order(dets.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return dets[a].score > dets[b].score; });

  std::vector<std::vector<int>> hypotheses;
  std::vector<int> cur(dets.size(), -1);
  std::function<void(std::size_t, unsigned)> rec = [&](std::size_t k, unsigned used) {
    if (k == order.size()) {
      hypotheses.push_back(cur);
      return;
    }
    const auto d = order[k];
    cur[d] = -1;
    rec(k + 1, used);
    for (std::size_t g = 0; g < gt.size(); ++g) {
      if ((used >> g) & 1u) continue;
      if (geom::rotated_iou(dets[d].box, gt[g].box) < thr) continue;
      cur[d] = static_cast<int>(g);
      rec(k + 1, used | (1u << g));
    }
    cur[d] = -1;
  };
  rec(0, 0);

  const std::vector<int> * chosen = nullptr;
  for (const auto & h : hypotheses) {
    unsigned used = 0;
    bool ok = true;
    for (const auto d : order) {
      double best = -1.0;
      int arg = -1;
      for (std::size_t g = 0; g < gt.size(); ++g) {
        if ((used >> g) & 1u) continue;
        const double iou = geom::rotated_iou(dets[d].box, gt[g].box);
        if (iou >= thr && iou > best) {
          best = iou;
          arg = static_cast<int>(g);
        }
      }
      if (h[d] != arg) {
        ok = false;
        break;
      }
      if (arg >= 0) used |= 1u << arg;
    }
    if (ok) {
      if (chosen) throw std::logic_error("exhaustive_ap: two consistent hypotheses");
      chosen = &h;
    }
  }
  if (!chosen) throw std::logic_error("exhaustive_ap: no consistent hypothesis");

  if (gt.empty()) return dets.empty() ? 1.0 : 0.0;
  std::vector<double> rec_pts, prec_pts;
  int tp = 0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    tp += (*chosen)[order[k]] >= 0;
    rec_pts.push_back(static_cast<double>(tp) / static_cast<double>(gt.size()));
    prec_pts.push_back(static_cast<double>(tp) / static_cast<double>(k + 1));
  }
  double ap = 0.0, prev = 0.0;
  for (std::size_t k = 0; k < rec_pts.size(); ++k) {
    if (rec_pts[k] <= prev) continue;
    double pmax = 0.0;
    for (std::size_t j = 0; j < rec_pts.size(); ++j) {
      if (rec_pts[j] >= rec_pts[k]) pmax = std::max(pmax, prec_pts[j]);
    }
    ap += (rec_pts[k] - prev) * pmax;
    prev = rec_pts[k];
  }
  return ap;
}

/// Full sort of negatives by score, ties to the lower index.
inline std::vector<std::size_t> sort_oracle(const std::vector<double> & p, const std::vector<std::uint8_t> & q, std::size_t k)
{
  std::vector<std::size_t> neg;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!q[i]) neg.push_back(i);
  }
  std::stable_sort(neg.begin(), neg.end(), [&](std::size_t a, std::size_t b) { return p[a] > p[b]; });
  neg.resize(std::min(k, neg.size()));
  return neg;
}

}  // namespace reference

#endif  // BEVINTENT_TESTS_REFERENCE_HPP_
