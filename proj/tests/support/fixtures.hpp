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

// Synthetic head outputs, detections and loss targets for tests.

#ifndef BEVINTENT_TESTS_FIXTURES_HPP_
#define BEVINTENT_TESTS_FIXTURES_HPP_

#include <cmath>
#include <random>
#include <vector>

#include "bevintent/anchors.hpp"
#include "bevintent/infer.hpp"
#include "bevintent/loss.hpp"
#include "bevintent/net.hpp"

namespace fixtures
{

using namespace bevintent;
using infer::Detection;
using loss::SampleTargets;

/// Head outputs where every anchor is confident background.
inline net::HeadOutputs<double> blank_outputs(const anchors::AnchorGrid & g)
{
  net::HeadOutputs<double> out;
  out.anchors = g.per_cell;
  out.reg_width = anchors::regression_width(6);
  out.det = Tensor<double>({1, g.per_cell * 2, g.rows, g.cols});
  out.intent = Tensor<double>({1, 8, g.rows, g.cols});
  out.reg = Tensor<double>({1, g.per_cell * out.reg_width, g.rows, g.cols});
  for (int k = 0; k < g.per_cell; ++k) {
    for (int i = 0; i < g.rows; ++i) {
      for (int j = 0; j < g.cols; ++j) {
        out.det.data[((k * 2 + 1) * g.rows + i) * g.cols + j] = 10.0;
        out.det.data[((k * 2 + 0) * g.rows + i) * g.cols + j] = -10.0;
      }
    }
  }
  return out;
}

inline void set_anchor(
  net::HeadOutputs<double> & out, const anchors::AnchorGrid & g, std::size_t idx, double logit_diff,
  const std::vector<double> & reg)
{
  const int k = static_cast<int>(idx % g.per_cell);
  const int cell = static_cast<int>(idx / g.per_cell);
  const int i = cell / g.cols;
  const int j = cell % g.cols;
  out.det.data[((k * 2 + 0) * g.rows + i) * g.cols + j] = logit_diff;
  out.det.data[((k * 2 + 1) * g.rows + i) * g.cols + j] = 0.0;
  for (int r = 0; r < out.reg_width; ++r) {
    out.reg.data[((k * out.reg_width + r) * g.rows + i) * g.cols + j] = reg[static_cast<std::size_t>(r)];
  }
}

inline Detection moving_detection(double x0, double y0, double vx, double vy, int frame, double score)
{
  Detection d;
  d.box = {x0 + vx * frame, y0 + vy * frame, 4.5, 2.0, std::atan2(vy, vx)};
  d.score = score;
  for (int s = 1; s <= 6; ++s) {
    auto w = d.box;
    w.cx += vx * 5 * s;
    w.cy += vy * 5 * s;
    d.waypoints.push_back(w);
  }
  return d;
}

inline std::vector<SampleTargets> random_targets(int batch, int rows, int cols, int steps, std::mt19937_64 & rng)
{
  const std::size_t cells = static_cast<std::size_t>(rows) * cols;
  std::vector<SampleTargets> out(static_cast<std::size_t>(batch));
  std::normal_distribution<double> d(0.0, 0.8);
  std::uniform_int_distribution<int> label(0, 7);
  for (auto & tg : out) {
    tg.assignment.q.assign(cells * 5, 0);
    tg.assignment.matched.assign(cells * 5, -1);
    tg.assignment.best_iou.assign(cells * 5, 0.0);
    for (std::size_t a : {std::size_t{1}, cells * 5 - 3, std::size_t{7}}) {
      tg.assignment.q[a] = 1;
      anchors::RegressionTargets r;
      r.values.resize(static_cast<std::size_t>(anchors::regression_width(steps)));
      for (auto & v : r.values) v = d(rng);
      r.valid.assign(static_cast<std::size_t>(steps + 1), 1);
      if (a == 7) r.valid[1] = 0;
      tg.regression.emplace_back(a, r);
    }
    tg.cell_labels.assign(2, std::vector<int>(cells, -1));
    for (auto & grid : tg.cell_labels) {
      for (std::size_t c = 0; c < cells; c += 1) grid[c] = label(rng);
    }
  }
  return out;
}

}  // namespace fixtures

#endif  // BEVINTENT_TESTS_FIXTURES_HPP_
