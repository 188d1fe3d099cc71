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

// Multi-task objective: focal detection loss with hard negative mining,
// discounted smooth-L1 trajectory regression and downsampled intention
// cross-entropy.

#ifndef BEVINTENT_LOSS_HPP_
#define BEVINTENT_LOSS_HPP_

#include <array>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "bevintent/anchors.hpp"
#include "bevintent/net.hpp"

namespace bevintent::loss
{

struct LossConfig
{
  double alpha{1.0};
  double beta{1.0};
  double lambda{0.97};
  /// Weights for (cx, cy, sin, cos, w, h); future steps use the first four.
  std::array<double, 6> chi{1, 1, 1, 1, 1, 1};
  double neg_pos_ratio{3.0};
  double focal_gamma{1.0};
  double downsample_keep{0.05};
  /// Negatives used when a sample has no positives.
  int zero_positive_negatives{64};
  /// Divide each term by its sample count; false gives plain sums.
  bool normalize{true};
  /// Intention steps supervised (1 = current frame only).
  int intent_steps{1};

  void validate() const;
};

void apply_loss_key(LossConfig & cfg, const std::string & key, const std::string & value);

inline constexpr double kProbEpsilon = 1e-7;

/// (1 - pbar)^gamma * -log(pbar).
double focal_term(double pbar, double gamma);
/// d focal_term / d pbar.
double focal_term_grad(double pbar, double gamma);

/// Indices of the `k` negatives (q == 0) with the highest score, ordered by
/// score descending, ties to the lower index. Streaming heap selection.
std::vector<std::size_t> mine_negatives(std::span<const double> p, std::span<const std::uint8_t> q, std::size_t k);

struct FocalResult
{
  /// Sum of per-sample terms over positives and mined negatives.
  double sum{0.0};
  std::size_t positives{0};
  std::size_t negatives{0};
  std::size_t clamped{0};
  /// d sum / d p for every anchor (zero outside the selected set).
  std::vector<double> grad;
};

FocalResult focal_detection_loss(std::span<const double> p, std::span<const std::uint8_t> q, const LossConfig & cfg);

double smooth_l1(double x, double y);
/// d smooth_l1 / d x.
double smooth_l1_grad(double x, double y);

/// Per-t weighted smooth-L1 sums for one anchor; `valid` masks steps.
/// Size terms are included at t = 0 only.
std::vector<double> regression_terms(
  std::span<const double> pred, const anchors::RegressionTargets & target, const LossConfig & cfg,
  std::vector<double> * grad = nullptr);

/// Softmax cross-entropy; `grad` receives d/d logits.
double cross_entropy(std::span<const double> logits, int label, std::vector<double> * grad = nullptr);

/// True for the classes downsampled by `downsample_keep`.
bool is_dominant_class(int label);

struct LossBreakdown
{
  double cla{0.0};
  std::vector<double> intent;
  std::vector<double> reg;
  double total{0.0};
  std::size_t positives{0};
  std::size_t negatives{0};
  std::size_t intent_cells{0};
  std::size_t clamped{0};
  bool intent_empty{false};
};

double discount(const LossConfig & cfg, int t);
/// total = cla + alpha * sum lambda^t int^t + beta * sum lambda^t reg^t.
double total_loss(const LossBreakdown & parts, const LossConfig & cfg);

std::string breakdown_csv_header(int intent_steps, int reg_steps);
std::string breakdown_csv_row(long step, const LossBreakdown & b);
/// Parses one row produced by breakdown_csv_row.
std::pair<long, LossBreakdown> parse_breakdown_csv_row(
  const std::string & row, int intent_steps, int reg_steps);

/// Supervision for one batch element.
struct SampleTargets
{
  anchors::Assignment assignment;
  /// Regression targets for each positive anchor, keyed by anchor index.
  std::vector<std::pair<std::size_t, anchors::RegressionTargets>> regression;
  /// Per intention step, a label per feature cell (row-major) or -1.
  std::vector<std::vector<int>> cell_labels;
};

template <typename T>
struct LossResult
{
  LossBreakdown breakdown;
  /// d total / d head tensors, same shapes as the outputs.
  Tensor<T> d_det;
  Tensor<T> d_intent;
  Tensor<T> d_reg;
};

/// Full objective over a batch. `rng` drives intention downsampling only.
template <typename T>
LossResult<T> compute_loss(
  const net::HeadOutputs<T> & out, std::span<const SampleTargets> targets, const LossConfig & cfg,
  std::mt19937_64 & rng);

}  // namespace bevintent::loss

#endif  // BEVINTENT_LOSS_HPP_
