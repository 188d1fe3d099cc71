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

#include "bevintent/loss.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <queue>
#include <sstream>

#include "bevintent/errors.hpp"
#include "bevintent/scene.hpp"

namespace bevintent::loss
{

namespace
{

double parse_double(const std::string & value, const std::string & key)
{
  try {
    std::size_t used = 0;
    const double v = std::stod(value, &used);
    if (value.find_first_not_of(" \t", used) != std::string::npos) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception &) {
    throw ConfigError("loss." + key + ": '" + value + "' is not a number");
  }
}

std::string fmt(double v)
{
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void LossConfig::validate() const
{
  if (!(lambda > 0.0 && lambda <= 1.0)) throw ConfigError("loss.lambda must be in (0, 1]");
  for (double c : chi) {
    if (!(c > 0.0)) throw ConfigError("loss.chi weights must be positive");
  }
  if (!(neg_pos_ratio > 0.0)) throw ConfigError("loss.neg_pos_ratio must be positive");
  if (!(downsample_keep > 0.0 && downsample_keep <= 1.0)) throw ConfigError("loss.downsample_keep must be in (0, 1]");
  if (!(focal_gamma >= 0.0)) throw ConfigError("loss.focal_gamma must be >= 0");
  if (!(alpha >= 0.0) || !(beta >= 0.0)) throw ConfigError("loss.alpha and loss.beta must be >= 0");
  if (zero_positive_negatives < 0) throw ConfigError("loss.zero_positive_negatives must be >= 0");
  if (intent_steps < 1) throw ConfigError("loss.intent_steps must be >= 1");
}

void apply_loss_key(LossConfig & c, const std::string & key, const std::string & value)
{
  if (key == "alpha") c.alpha = parse_double(value, key);
  else if (key == "beta") c.beta = parse_double(value, key);
  else if (key == "lambda") c.lambda = parse_double(value, key);
  else if (key == "neg_pos_ratio") c.neg_pos_ratio = parse_double(value, key);
  else if (key == "focal_gamma") c.focal_gamma = parse_double(value, key);
  else if (key == "downsample_keep") c.downsample_keep = parse_double(value, key);
  else if (key == "zero_positive_negatives") c.zero_positive_negatives = static_cast<int>(parse_double(value, key));
  else if (key == "intent_steps") c.intent_steps = static_cast<int>(parse_double(value, key));
  else if (key == "normalize") {
    if (value == "true" || value == "1") c.normalize = true;
    else if (value == "false" || value == "0") c.normalize = false;
    else throw ConfigError("loss.normalize: expected true or false, got '" + value + "'");
  } else if (key == "chi") {
    std::stringstream ss(value);
    std::string item;
    std::size_t i = 0;
    while (std::getline(ss, item, ',')) {
      if (i >= c.chi.size()) throw ConfigError("loss.chi: expected 6 weights");
      c.chi[i++] = parse_double(item, key);
    }
    if (i != c.chi.size()) throw ConfigError("loss.chi: expected 6 weights");
  } else {
    throw ConfigError("unknown loss key '" + key + "'");
  }
}

double focal_term(double pbar, double gamma) { return std::pow(1.0 - pbar, gamma) * -std::log(pbar); }

double focal_term_grad(double pbar, double gamma)
{
  const double a = gamma == 0.0 ? 0.0 : -gamma * std::pow(1.0 - pbar, gamma - 1.0) * -std::log(pbar);
  return a - std::pow(1.0 - pbar, gamma) / pbar;
}

std::vector<std::size_t> mine_negatives(std::span<const double> p, std::span<const std::uint8_t> q, std::size_t k)
{
  const auto better = [&](std::size_t a, std::size_t b) { return p[a] > p[b] || (p[a] == p[b] && a < b); };
  // Top of the heap is the weakest kept candidate.
  std::priority_queue<std::size_t, std::vector<std::size_t>, decltype(better)> heap(better);
  if (k == 0) return {};
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (q[i]) continue;
    if (heap.size() < k) {
      heap.push(i);
    } else if (better(i, heap.top())) {
      heap.pop();
      heap.push(i);
    }
  }
  std::vector<std::size_t> out;
  out.reserve(heap.size());
  while (!heap.empty()) {
    out.push_back(heap.top());
    heap.pop();
  }
  std::reverse(out.begin(), out.end());
  return out;
}

FocalResult focal_detection_loss(std::span<const double> p, std::span<const std::uint8_t> q, const LossConfig & cfg)
{
  if (p.size() != q.size()) throw ConfigError("focal loss: score and assignment sizes differ");
  FocalResult r;
  r.grad.assign(p.size(), 0.0);
  const auto add = [&](std::size_t i, bool positive) {
    double pi = p[i];
    bool clamped = false;
    if (!(pi >= kProbEpsilon)) {
      pi = kProbEpsilon;
      clamped = true;
    } else if (!(pi <= 1.0 - kProbEpsilon)) {
      pi = 1.0 - kProbEpsilon;
      clamped = true;
    }
    const double pbar = positive ? pi : 1.0 - pi;
    r.sum += focal_term(pbar, cfg.focal_gamma);
    if (clamped) {
      ++r.clamped;
    } else {
      const double g = focal_term_grad(pbar, cfg.focal_gamma);
      r.grad[i] = positive ? g : -g;
    }
  };
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (q[i]) {
      add(i, true);
      ++r.positives;
    }
  }
  const std::size_t k = r.positives > 0
                          ? static_cast<std::size_t>(std::llround(cfg.neg_pos_ratio * static_cast<double>(r.positives)))
                          : static_cast<std::size_t>(cfg.zero_positive_negatives);
  for (const auto i : mine_negatives(p, q, k)) {
    add(i, false);
    ++r.negatives;
  }
  return r;
}

double smooth_l1(double x, double y)
{
  const double d = std::abs(x - y);
  return d < 1.0 ? 0.5 * d * d : d - 0.5;
}

double smooth_l1_grad(double x, double y)
{
  const double d = x - y;
  if (std::abs(d) < 1.0) return d;
  return d > 0.0 ? 1.0 : -1.0;
}

std::vector<double> regression_terms(
  std::span<const double> pred, const anchors::RegressionTargets & target, const LossConfig & cfg,
  std::vector<double> * grad)
{
  if (pred.size() != target.values.size()) throw ConfigError("regression: prediction and target widths differ");
  const int steps = static_cast<int>(target.valid.size());
  std::vector<double> out(static_cast<std::size_t>(steps), 0.0);
  if (grad) grad->assign(pred.size(), 0.0);
  for (int t = 0; t < steps; ++t) {
    if (!target.valid[static_cast<std::size_t>(t)]) continue;
    const std::size_t o = t == 0 ? 0 : static_cast<std::size_t>(6 + 4 * (t - 1));
    const int n = t == 0 ? 6 : 4;
    for (int r = 0; r < n; ++r) {
      const double x = pred[o + r];
      const double y = target.values[o + r];
      out[static_cast<std::size_t>(t)] += cfg.chi[static_cast<std::size_t>(r)] * smooth_l1(x, y);
      if (grad) (*grad)[o + r] = cfg.chi[static_cast<std::size_t>(r)] * smooth_l1_grad(x, y);
    }
  }
  return out;
}

double cross_entropy(std::span<const double> logits, int label, std::vector<double> * grad)
{
  if (label < 0 || label >= static_cast<int>(logits.size())) throw ConfigError("cross entropy: label out of range");
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double l : logits) sum += std::exp(l - mx);
  const double lse = mx + std::log(sum);
  if (grad) {
    grad->resize(logits.size());
    for (std::size_t c = 0; c < logits.size(); ++c) (*grad)[c] = std::exp(logits[c] - lse);
    (*grad)[static_cast<std::size_t>(label)] -= 1.0;
  }
  return lse - logits[static_cast<std::size_t>(label)];
}

bool is_dominant_class(int label)
{
  using scene::Action;
  return label == scene::index_of(Action::kKeepLane) || label == scene::index_of(Action::kStoppingStopped) ||
         label == scene::index_of(Action::kParked);
}

double discount(const LossConfig & cfg, int t) { return std::pow(cfg.lambda, t); }

double total_loss(const LossBreakdown & b, const LossConfig & cfg)
{
  double total = b.cla;
  for (std::size_t t = 0; t < b.intent.size(); ++t) total += cfg.alpha * discount(cfg, static_cast<int>(t)) * b.intent[t];
  for (std::size_t t = 0; t < b.reg.size(); ++t) total += cfg.beta * discount(cfg, static_cast<int>(t)) * b.reg[t];
  return total;
}

std::string breakdown_csv_header(int intent_steps, int reg_steps)
{
  std::string h = "step,cla";
  for (int t = 0; t < intent_steps; ++t) h += ",int_" + std::to_string(t);
  for (int t = 0; t < reg_steps; ++t) h += ",reg_" + std::to_string(t);
  return h + ",total,positives,negatives,intent_cells,clamped";
}

std::string breakdown_csv_row(long step, const LossBreakdown & b)
{
  std::string row = std::to_string(step) + "," + fmt(b.cla);
  for (double v : b.intent) row += "," + fmt(v);
  for (double v : b.reg) row += "," + fmt(v);
  row += "," + fmt(b.total) + "," + std::to_string(b.positives) + "," + std::to_string(b.negatives) + "," +
         std::to_string(b.intent_cells) + "," + std::to_string(b.clamped);
  return row;
}

std::pair<long, LossBreakdown> parse_breakdown_csv_row(const std::string & row, int intent_steps, int reg_steps)
{
  std::vector<std::string> f;
  std::stringstream ss(row);
  std::string item;
  while (std::getline(ss, item, ',')) f.push_back(item);
  const std::size_t want = 2 + static_cast<std::size_t>(intent_steps + reg_steps) + 5;
  if (f.size() != want) {
    throw ParseError("loss log", "expected " + std::to_string(want) + " fields, got " + std::to_string(f.size()));
  }
  try {
    std::size_t i = 0;
    const long step = std::stol(f[i++]);
    LossBreakdown b;
    b.cla = std::stod(f[i++]);
    for (int t = 0; t < intent_steps; ++t) b.intent.push_back(std::stod(f[i++]));
    for (int t = 0; t < reg_steps; ++t) b.reg.push_back(std::stod(f[i++]));
    b.total = std::stod(f[i++]);
    b.positives = std::stoul(f[i++]);
    b.negatives = std::stoul(f[i++]);
    b.intent_cells = std::stoul(f[i++]);
    b.clamped = std::stoul(f[i++]);
    return {step, b};
  } catch (const std::exception & e) {
    throw ParseError("loss log", std::string("bad field: ") + e.what());
  }
}

template <typename T>
LossResult<T> compute_loss(
  const net::HeadOutputs<T> & out, std::span<const SampleTargets> targets, const LossConfig & cfg,
  std::mt19937_64 & rng)
{
  cfg.validate();
  const int batch = out.batch();
  const int rows = out.rows();
  const int cols = out.cols();
  const int na = out.anchors;
  const int width = out.reg_width;
  const int reg_steps = 1 + (width - 6) / 4;
  const std::size_t cells = static_cast<std::size_t>(rows) * cols;
  const std::size_t plane = cells;
  if (static_cast<int>(targets.size()) != batch) throw ConfigError("loss: batch size and target count differ");

  LossResult<T> res;
  res.d_det = Tensor<T>(out.det.shape, T{0});
  res.d_intent = Tensor<T>(out.intent.shape, T{0});
  res.d_reg = Tensor<T>(out.reg.shape, T{0});
  auto & b = res.breakdown;
  b.intent.assign(static_cast<std::size_t>(cfg.intent_steps), 0.0);
  b.reg.assign(static_cast<std::size_t>(reg_steps), 0.0);

  // Unnormalized gradients, scaled once the counts are known.
  std::vector<double> g_det(out.det.size(), 0.0);
  std::vector<double> g_reg(out.reg.size(), 0.0);
  std::vector<std::vector<std::pair<std::size_t, double>>> g_int(static_cast<std::size_t>(cfg.intent_steps));
  std::vector<std::size_t> reg_count(static_cast<std::size_t>(reg_steps), 0);
  std::vector<std::size_t> int_count(static_cast<std::size_t>(cfg.intent_steps), 0);
  double cla_sum = 0.0;

  const auto det_index = [&](int n, int c, std::size_t cell) {
    return (static_cast<std::size_t>(n) * out.det.dim(1) + c) * plane + cell;
  };
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  for (int n = 0; n < batch; ++n) {
    const auto & tg = targets[static_cast<std::size_t>(n)];
    const std::size_t count = cells * na;
    if (tg.assignment.q.size() != count) throw ConfigError("loss: assignment size does not match the head outputs");

    // Detection.
    std::vector<double> p(count);
    for (std::size_t cell = 0; cell < cells; ++cell) {
      for (int k = 0; k < na; ++k) {
        const double lv = out.det.data[det_index(n, 2 * k, cell)];
        const double lb = out.det.data[det_index(n, 2 * k + 1, cell)];
        p[cell * na + k] = 1.0 / (1.0 + std::exp(lb - lv));
      }
    }
    const auto focal = focal_detection_loss(p, tg.assignment.q, cfg);
    cla_sum += focal.sum;
    b.positives += focal.positives;
    b.negatives += focal.negatives;
    b.clamped += focal.clamped;
    for (std::size_t a = 0; a < count; ++a) {
      if (focal.grad[a] == 0.0) continue;
      const std::size_t cell = a / na;
      const int k = static_cast<int>(a % na);
      const double dl = focal.grad[a] * p[a] * (1.0 - p[a]);
      g_det[det_index(n, 2 * k, cell)] += dl;
      g_det[det_index(n, 2 * k + 1, cell)] -= dl;
    }

    // Regression over positives.
    std::vector<double> pred(static_cast<std::size_t>(width));
    std::vector<double> grad;
    for (const auto & [a, target] : tg.regression) {
      const std::size_t cell = a / na;
      const int k = static_cast<int>(a % na);
      const auto reg_index = [&](int r) {
        return (static_cast<std::size_t>(n) * out.reg.dim(1) + static_cast<std::size_t>(k) * width + r) * plane + cell;
      };
      for (int r = 0; r < width; ++r) pred[static_cast<std::size_t>(r)] = out.reg.data[reg_index(r)];
      const auto terms = regression_terms(pred, target, cfg, &grad);
      for (int t = 0; t < reg_steps && t < static_cast<int>(terms.size()); ++t) {
        if (!target.valid[static_cast<std::size_t>(t)]) continue;
        b.reg[static_cast<std::size_t>(t)] += terms[static_cast<std::size_t>(t)];
        ++reg_count[static_cast<std::size_t>(t)];
      }
      for (int r = 0; r < width; ++r) g_reg[reg_index(r)] += grad[static_cast<std::size_t>(r)];
    }

    // Intention over labelled cells, downsampling dominant classes.
    std::vector<double> logits(static_cast<std::size_t>(out.intent.dim(1)));
    for (int t = 0; t < cfg.intent_steps && t < static_cast<int>(tg.cell_labels.size()); ++t) {
      const auto & labels = tg.cell_labels[static_cast<std::size_t>(t)];
      if (labels.size() != cells) throw ConfigError("loss: intention label grid does not match the head outputs");
      for (std::size_t cell = 0; cell < cells; ++cell) {
        const int label = labels[cell];
        if (label < 0) continue;
        if (is_dominant_class(label) && !(unit(rng) < cfg.downsample_keep)) continue;
        for (std::size_t c = 0; c < logits.size(); ++c) {
          logits[c] = out.intent.data[(static_cast<std::size_t>(n) * logits.size() + c) * plane + cell];
        }
        b.intent[static_cast<std::size_t>(t)] += cross_entropy(logits, label, &grad);
        ++int_count[static_cast<std::size_t>(t)];
        for (std::size_t c = 0; c < logits.size(); ++c) {
          g_int[static_cast<std::size_t>(t)].emplace_back((static_cast<std::size_t>(n) * logits.size() + c) * plane + cell,
                                                          grad[c]);
        }
      }
    }
  }

  const std::size_t selected = b.positives + b.negatives;
  const double cla_scale = cfg.normalize && selected > 0 ? 1.0 / static_cast<double>(selected) : 1.0;
  b.cla = cla_sum * cla_scale;
  for (std::size_t i = 0; i < g_det.size(); ++i) res.d_det.data[i] = static_cast<T>(g_det[i] * cla_scale);

  // Regression gradient scale depends on t through the channel index.
  std::vector<double> reg_scale(static_cast<std::size_t>(reg_steps), 0.0);
  for (int t = 0; t < reg_steps; ++t) {
    const auto c = reg_count[static_cast<std::size_t>(t)];
    const double norm = cfg.normalize && c > 0 ? 1.0 / static_cast<double>(c) : 1.0;
    b.reg[static_cast<std::size_t>(t)] *= norm;
    reg_scale[static_cast<std::size_t>(t)] = cfg.beta * discount(cfg, t) * norm;
  }
  for (std::size_t i = 0; i < g_reg.size(); ++i) {
    if (g_reg[i] == 0.0) continue;
    const int r = static_cast<int>((i / plane) % static_cast<std::size_t>(out.reg.dim(1))) % width;
    const int t = r < 6 ? 0 : 1 + (r - 6) / 4;
    res.d_reg.data[i] = static_cast<T>(g_reg[i] * reg_scale[static_cast<std::size_t>(t)]);
  }

  std::size_t intent_cells = 0;
  for (int t = 0; t < cfg.intent_steps; ++t) {
    const auto c = int_count[static_cast<std::size_t>(t)];
    intent_cells += c;
    const double norm = cfg.normalize && c > 0 ? 1.0 / static_cast<double>(c) : 1.0;
    b.intent[static_cast<std::size_t>(t)] *= norm;
    const double scale = cfg.alpha * discount(cfg, t) * norm;
    std::vector<double> acc(out.intent.size(), 0.0);
    for (const auto & [i, g] : g_int[static_cast<std::size_t>(t)]) acc[i] += g;
    for (std::size_t i = 0; i < acc.size(); ++i) {
      if (acc[i] != 0.0) res.d_intent.data[i] += static_cast<T>(acc[i] * scale);
    }
  }
  b.intent_cells = intent_cells;
  b.intent_empty = intent_cells == 0;
  b.total = total_loss(b, cfg);
  return res;
}

template LossResult<float> compute_loss(
  const net::HeadOutputs<float> &, std::span<const SampleTargets>, const LossConfig &, std::mt19937_64 &);
template LossResult<double> compute_loss(
  const net::HeadOutputs<double> &, std::span<const SampleTargets>, const LossConfig &, std::mt19937_64 &);

}  // namespace bevintent::loss
