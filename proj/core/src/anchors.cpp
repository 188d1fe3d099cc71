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

#include "bevintent/anchors.hpp"

#include <array>
#include <cmath>

#include "bevintent/errors.hpp"

namespace bevintent::anchors
{

void AnchorSpec::validate() const
{
  if (!(size > 0.0)) throw ConfigError("anchor size must be positive");
  if (ratios.size() != 5) throw ConfigError("anchor spec needs exactly 5 aspect ratios");
  for (const auto & [r, s] : ratios) {
    if (!(r > 0.0) || !(s > 0.0)) throw ConfigError("anchor ratios must be positive");
  }
}

AnchorGrid build_anchor_grid(const encoder::VoxelConfig & cfg, const AnchorSpec & spec)
{
  cfg.validate();
  spec.validate();
  const int rows = cfg.rows();
  const int cols = cfg.cols();
  if (rows % kStride != 0 || cols % kStride != 0) {
    throw ConfigError(
      "BEV grid " + std::to_string(rows) + "x" + std::to_string(cols) + " is not divisible by the stride " +
      std::to_string(kStride));
  }
  AnchorGrid g;
  g.rows = rows / kStride;
  g.cols = cols / kStride;
  g.per_cell = static_cast<int>(spec.ratios.size());
  g.boxes.reserve(static_cast<std::size_t>(g.rows) * g.cols * g.per_cell);
  const double step = kStride * cfg.dl;
  const double x0 = -0.5 * cfg.length;
  const double y0 = -0.5 * cfg.width;
  for (int i = 0; i < g.rows; ++i) {
    for (int j = 0; j < g.cols; ++j) {
      const double cx = x0 + (i + 0.5) * step;
      const double cy = y0 + (j + 0.5) * step;
      for (const auto & [r, s] : spec.ratios) {
        g.boxes.push_back({cx, cy, spec.size * std::sqrt(r / s), spec.size * std::sqrt(s / r), 0.0});
      }
    }
  }
  return g;
}

std::size_t Assignment::positives() const
{
  std::size_t n = 0;
  for (auto v : q) n += v;
  return n;
}

Assignment assign_targets(const AnchorGrid & grid, std::span<const OrientedBox2D> gt, double threshold)
{
  Assignment a;
  a.q.assign(grid.size(), 0);
  a.matched.assign(grid.size(), -1);
  a.best_iou.assign(grid.size(), 0.0);
  if (gt.empty() || grid.size() == 0) return a;

  // Anchors whose circumcircle can touch each ground truth.
  double anchor_radius = 0.0;
  for (int k = 0; k < grid.per_cell; ++k) {
    const auto & b = grid.boxes[static_cast<std::size_t>(k)];
    anchor_radius = std::max(anchor_radius, 0.5 * std::hypot(b.w, b.h));
  }
  const geom::Vec2 origin = grid.cell_center(0, 0);
  const double step = grid.rows > 1 ? grid.cell_center(1, 0).x - origin.x
                                    : (grid.cols > 1 ? grid.cell_center(0, 1).y - origin.y : 1.0);

  // Per ground truth: best anchor (lowest index on ties) for force matching.
  std::vector<std::size_t> best_anchor(gt.size(), 0);
  std::vector<double> best_for_gt(gt.size(), -1.0);
  std::vector<std::array<int, 4>> reach(gt.size());

  for (std::size_t g = 0; g < gt.size(); ++g) {
    const auto & box = gt[g];
    const double radius = 0.5 * std::hypot(box.w, box.h) + anchor_radius;
    const int i0 = std::max(0, static_cast<int>(std::floor((box.cx - radius - origin.x) / step)));
    const int i1 = std::min(grid.rows - 1, static_cast<int>(std::ceil((box.cx + radius - origin.x) / step)));
    const int j0 = std::max(0, static_cast<int>(std::floor((box.cy - radius - origin.y) / step)));
    const int j1 = std::min(grid.cols - 1, static_cast<int>(std::ceil((box.cy + radius - origin.y) / step)));
    reach[g] = {i0, i1, j0, j1};
    for (int i = i0; i <= i1; ++i) {
      for (int j = j0; j <= j1; ++j) {
        for (int k = 0; k < grid.per_cell; ++k) {
          const auto idx = grid.index(i, j, k);
          const double iou = geom::rotated_iou(grid.boxes[idx], box);
          if (iou <= 0.0) continue;
          // Strict comparisons keep the lowest ground-truth / anchor index.
          if (iou > a.best_iou[idx]) {
            a.best_iou[idx] = iou;
            a.matched[idx] = static_cast<int>(g);
          }
          if (iou > best_for_gt[g] || (iou == best_for_gt[g] && idx < best_anchor[g])) {
            best_for_gt[g] = iou;
            best_anchor[g] = idx;
          }
        }
      }
    }
  }

  std::vector<std::uint8_t> has_match(gt.size(), 0);
  for (std::size_t idx = 0; idx < grid.size(); ++idx) {
    if (a.matched[idx] >= 0 && a.best_iou[idx] >= threshold) {
      a.q[idx] = 1;
      has_match[static_cast<std::size_t>(a.matched[idx])] = 1;
    } else {
      a.matched[idx] = -1;
    }
  }
  // Force match, ignoring the threshold. Anchors already positive are left
  // to their owner unless no free anchor overlaps this ground truth.
  for (std::size_t g = 0; g < gt.size(); ++g) {
    if (has_match[g] || best_for_gt[g] <= 0.0) continue;
    const auto & [i0, i1, j0, j1] = reach[g];
    double best = 0.0;
    std::size_t arg = best_anchor[g];
    for (int i = i0; i <= i1; ++i) {
      for (int j = j0; j <= j1; ++j) {
        for (int k = 0; k < grid.per_cell; ++k) {
          const auto idx = grid.index(i, j, k);
          if (a.q[idx]) continue;
          const double iou = geom::rotated_iou(grid.boxes[idx], gt[g]);
          if (iou > best || (iou == best && iou > 0.0 && idx < arg)) {
            best = iou;
            arg = idx;
          }
        }
      }
    }
    a.q[arg] = 1;
    a.matched[arg] = static_cast<int>(g);
  }
  return a;
}

RegressionTargets encode_targets(std::span<const std::optional<OrientedBox2D>> track, const OrientedBox2D & anchor)
{
  if (track.empty() || !track[0]) throw ConfigError("encode_targets: the t=0 box is required");
  const int tf = static_cast<int>(track.size()) - 1;
  RegressionTargets r;
  r.values.assign(static_cast<std::size_t>(regression_width(tf)), 0.0);
  r.valid.assign(track.size(), 0);
  for (int t = 0; t <= tf; ++t) {
    if (!track[t]) continue;
    const auto & b = *track[t];
    const std::size_t o = t == 0 ? 0 : static_cast<std::size_t>(6 + 4 * (t - 1));
    r.values[o + 0] = (b.cx - anchor.cx) / anchor.w;
    r.values[o + 1] = (b.cy - anchor.cy) / anchor.h;
    r.values[o + 2] = std::sin(b.phi);
    r.values[o + 3] = std::cos(b.phi);
    if (t == 0) {
      r.values[4] = std::log(b.w / anchor.w);
      r.values[5] = std::log(b.h / anchor.h);
    }
    r.valid[t] = 1;
  }
  return r;
}

RegressionTargets encode_targets(std::span<const OrientedBox2D> track, const OrientedBox2D & anchor)
{
  std::vector<std::optional<OrientedBox2D>> opt(track.begin(), track.end());
  return encode_targets(std::span<const std::optional<OrientedBox2D>>(opt), anchor);
}

std::vector<OrientedBox2D> decode_targets(std::span<const double> values, const OrientedBox2D & anchor)
{
  if (values.size() < 6 || (values.size() - 6) % 4 != 0) {
    throw ConfigError("decode_targets: regression vector has " + std::to_string(values.size()) + " values");
  }
  const std::size_t steps = 1 + (values.size() - 6) / 4;
  const double w = anchor.w * std::exp(values[4]);
  const double h = anchor.h * std::exp(values[5]);
  std::vector<OrientedBox2D> out;
  out.reserve(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    const std::size_t o = t == 0 ? 0 : 6 + 4 * (t - 1);
    const double s = values[o + 2];
    const double c = values[o + 3];
    if (std::abs(s) < 1e-12 && std::abs(c) < 1e-12) {
      throw DecodeError("degenerate heading (sin, cos) at step " + std::to_string(t));
    }
    const double n = std::hypot(s, c);
    out.push_back({anchor.cx + values[o] * anchor.w, anchor.cy + values[o + 1] * anchor.h, w, h,
                   std::atan2(s / n, c / n)});
  }
  return out;
}

}  // namespace bevintent::anchors
