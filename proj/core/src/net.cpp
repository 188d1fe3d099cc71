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

#include "bevintent/net.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <mutex>
#include <random>
#include <sstream>

#include "bevintent/errors.hpp"

namespace bevintent::net
{

namespace
{

std::string shape_str(const std::vector<int> & s)
{
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

void gemm(bool ta, bool tb, int m, int n, int k, const float * a, const float * b, float beta, float * c)
{
  cblas_sgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans, m, n, k, 1.0f, a,
              ta ? m : k, b, tb ? k : n, beta, c, n);
}

void gemm(bool ta, bool tb, int m, int n, int k, const double * a, const double * b, double beta, double * c)
{
  cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans, m, n, k, 1.0, a,
              ta ? m : k, b, tb ? k : n, beta, c, n);
}

struct ConvGeometry
{
  int c, h, w, k, stride, pad, ho, wo;
};

template <typename T>
void im2col(const T * x, const ConvGeometry & g, T * col)
{
  const int plane = g.ho * g.wo;
  for (int c = 0; c < g.c; ++c) {
    for (int ki = 0; ki < g.k; ++ki) {
      for (int kj = 0; kj < g.k; ++kj) {
        T * dst = col + (static_cast<std::size_t>(c) * g.k * g.k + ki * g.k + kj) * plane;
        for (int oi = 0; oi < g.ho; ++oi) {
          const int ii = oi * g.stride - g.pad + ki;
          T * row = dst + static_cast<std::size_t>(oi) * g.wo;
          if (ii < 0 || ii >= g.h) {
            std::fill(row, row + g.wo, T{0});
            continue;
          }
          const T * src = x + (static_cast<std::size_t>(c) * g.h + ii) * g.w;
          for (int oj = 0; oj < g.wo; ++oj) {
            const int jj = oj * g.stride - g.pad + kj;
            row[oj] = (jj >= 0 && jj < g.w) ? src[jj] : T{0};
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T * col, const ConvGeometry & g, T * dx)
{
  const int plane = g.ho * g.wo;
  for (int c = 0; c < g.c; ++c) {
    for (int ki = 0; ki < g.k; ++ki) {
      for (int kj = 0; kj < g.k; ++kj) {
        const T * src = col + (static_cast<std::size_t>(c) * g.k * g.k + ki * g.k + kj) * plane;
        for (int oi = 0; oi < g.ho; ++oi) {
          const int ii = oi * g.stride - g.pad + ki;
          if (ii < 0 || ii >= g.h) continue;
          T * dst = dx + (static_cast<std::size_t>(c) * g.h + ii) * g.w;
          const T * row = src + static_cast<std::size_t>(oi) * g.wo;
          for (int oj = 0; oj < g.wo; ++oj) {
            const int jj = oj * g.stride - g.pad + kj;
            if (jj >= 0 && jj < g.w) dst[jj] += row[oj];
          }
        }
      }
    }
  }
}

void require_rank4(const std::vector<int> & s, const char * op)
{
  if (s.size() != 4) throw ConfigError(std::string(op) + ": expected a rank-4 tensor, got " + shape_str(s));
}

std::vector<int> parse_int_list(const std::string & value, const std::string & key)
{
  std::vector<int> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(item, &used));
      if (item.find_first_not_of(" \t", used) != std::string::npos) throw std::invalid_argument(item);
    } catch (const std::exception &) {
      throw ConfigError("network." + key + ": '" + value + "' is not a list of integers");
    }
  }
  return out;
}

int parse_int(const std::string & value, const std::string & key)
{
  const auto v = parse_int_list(value, key);
  if (v.size() != 1) throw ConfigError("network." + key + ": expected one integer, got '" + value + "'");
  return v[0];
}

}  // namespace

void init_blas()
{
  static std::once_flag once;
  std::call_once(once, [] { openblas_set_num_threads(1); });
}

// ---------------------------------------------------------------- parameters

template <typename T>
Parameter<T> & ParameterSet<T>::add(const std::string & name, std::vector<int> shape)
{
  if (index_.count(name)) throw ConfigError("duplicate parameter '" + name + "'");
  index_[name] = items_.size();
  auto & p = items_.emplace_back();
  p.name = name;
  p.value = Tensor<T>(shape, T{0});
  p.grad = Tensor<T>(std::move(shape), T{0});
  return p;
}

template <typename T>
Parameter<T> & ParameterSet<T>::at(const std::string & name)
{
  const auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return items_[it->second];
}

template <typename T>
const Parameter<T> & ParameterSet<T>::at(const std::string & name) const
{
  const auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return items_[it->second];
}

template <typename T>
std::size_t ParameterSet<T>::scalar_count() const
{
  std::size_t n = 0;
  for (const auto & p : items_) n += p.value.size();
  return n;
}

template <typename T>
void ParameterSet<T>::zero_grad()
{
  for (auto & p : items_) std::fill(p.grad.data.begin(), p.grad.data.end(), T{0});
}

// ---------------------------------------------------------------------- tape

template <typename T>
typename Tape<T>::Var Tape<T>::push(Tensor<T> value, bool needs_grad, std::function<void()> back)
{
  auto & n = nodes_.emplace_back();
  n.value = std::move(value);
  n.needs_grad = needs_grad;
  n.back = std::move(back);
  return static_cast<Var>(nodes_.size() - 1);
}

template <typename T>
Tensor<T> & Tape<T>::grad_buffer(Var v)
{
  auto & n = nodes_[static_cast<std::size_t>(v)];
  if (n.grad.data.empty()) n.grad = Tensor<T>(n.value.shape, T{0});
  return n.grad;
}

template <typename T>
typename Tape<T>::Var Tape<T>::constant(Tensor<T> value)
{
  return push(std::move(value), false);
}

template <typename T>
typename Tape<T>::Var Tape<T>::parameter(Parameter<T> & p)
{
  const Var v = push(p.value, true);
  nodes_.back().param = &p;
  return v;
}

template <typename T>
typename Tape<T>::Var Tape<T>::conv2d(Var x, Var w, Var b, int stride, int padding)
{
  const auto & xs = value(x).shape;
  const auto & ws = value(w).shape;
  require_rank4(xs, "conv2d input");
  require_rank4(ws, "conv2d weights");
  if (ws[1] != xs[1] || ws[2] != ws[3]) {
    throw ConfigError("conv2d: weights " + shape_str(ws) + " do not fit input " + shape_str(xs));
  }
  if (value(b).shape != std::vector<int>{ws[0]}) {
    throw ConfigError("conv2d: bias " + shape_str(value(b).shape) + " does not match " + std::to_string(ws[0]) +
                      " output channels");
  }
  if (stride < 1 || padding < 0) throw ConfigError("conv2d: stride must be >= 1 and padding >= 0");
  const ConvGeometry g{xs[1], xs[2], xs[3], ws[2], stride, padding, (xs[2] + 2 * padding - ws[2]) / stride + 1,
                       (xs[3] + 2 * padding - ws[2]) / stride + 1};
  if (g.ho < 1 || g.wo < 1) {
    throw ConfigError("conv2d: kernel " + std::to_string(g.k) + " larger than padded input " + shape_str(xs));
  }
  const int batch = xs[0];
  const int out_c = ws[0];
  const int ckk = g.c * g.k * g.k;
  const int plane = g.ho * g.wo;
  const bool direct = g.k == 1 && stride == 1 && padding == 0;

  Tensor<T> out({batch, out_c, g.ho, g.wo});
  std::vector<T> col(direct ? 0 : static_cast<std::size_t>(ckk) * plane);
  const T * wd = value(w).data.data();
  const T * bd = value(b).data.data();
  for (int n = 0; n < batch; ++n) {
    const T * xn = value(x).data.data() + static_cast<std::size_t>(n) * g.c * g.h * g.w;
    T * on = out.data.data() + static_cast<std::size_t>(n) * out_c * plane;
    for (int o = 0; o < out_c; ++o) std::fill(on + static_cast<std::size_t>(o) * plane, on + (o + 1) * plane, bd[o]);
    if (!direct) im2col(xn, g, col.data());
    gemm(false, false, out_c, plane, ckk, wd, direct ? xn : col.data(), T{1}, on);
  }

  const bool needs = nodes_[x].needs_grad || nodes_[w].needs_grad || nodes_[b].needs_grad;
  const Var self = push(std::move(out), needs);
  nodes_[self].back = [this, x, w, b, g, batch, out_c, ckk, plane, direct, self]() {
    const T * dout = grad(self).data.data();
    std::vector<T> col(direct ? 0 : static_cast<std::size_t>(ckk) * plane);
    std::vector<T> dcol(static_cast<std::size_t>(ckk) * plane);
    T * dw = nodes_[w].needs_grad ? grad_buffer(w).data.data() : nullptr;
    T * db = nodes_[b].needs_grad ? grad_buffer(b).data.data() : nullptr;
    T * dx = nodes_[x].needs_grad ? grad_buffer(x).data.data() : nullptr;
    const T * wd = value(w).data.data();
    for (int n = 0; n < batch; ++n) {
      const T * don = dout + static_cast<std::size_t>(n) * out_c * plane;
      const T * xn = value(x).data.data() + static_cast<std::size_t>(n) * g.c * g.h * g.w;
      if (db) {
        for (int o = 0; o < out_c; ++o) {
          T s{0};
          const T * row = don + static_cast<std::size_t>(o) * plane;
          for (int p = 0; p < plane; ++p) s += row[p];
          db[o] += s;
        }
      }
      if (dw) {
        if (!direct) im2col(xn, g, col.data());
        gemm(false, true, out_c, ckk, plane, don, direct ? xn : col.data(), T{1}, dw);
      }
      if (dx) {
        T * dxn = dx + static_cast<std::size_t>(n) * g.c * g.h * g.w;
        if (direct) {
          gemm(true, false, ckk, plane, out_c, wd, don, T{1}, dxn);
        } else {
          gemm(true, false, ckk, plane, out_c, wd, don, T{0}, dcol.data());
          col2im_add(dcol.data(), g, dxn);
        }
      }
    }
  };
  return self;
}

template <typename T>
typename Tape<T>::Var Tape<T>::relu(Var x)
{
  Tensor<T> out = value(x);
  for (auto & v : out.data) v = v > T{0} ? v : T{0};
  const Var self = push(std::move(out), nodes_[x].needs_grad);
  nodes_[self].back = [this, x, self]() {
    if (!nodes_[x].needs_grad) return;
    auto & dx = grad_buffer(x).data;
    const auto & xv = value(x).data;
    const auto & dy = grad(self).data;
    for (std::size_t i = 0; i < dx.size(); ++i) {
      if (xv[i] > T{0}) dx[i] += dy[i];
    }
  };
  return self;
}

template <typename T>
typename Tape<T>::Var Tape<T>::add(Var a, Var b)
{
  if (value(a).shape != value(b).shape) {
    throw ConfigError("add: shapes " + shape_str(value(a).shape) + " and " + shape_str(value(b).shape) + " differ");
  }
  Tensor<T> out = value(a);
  const auto & bv = value(b).data;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += bv[i];
  const Var self = push(std::move(out), nodes_[a].needs_grad || nodes_[b].needs_grad);
  nodes_[self].back = [this, a, b, self]() {
    for (const Var in : {a, b}) {
      if (!nodes_[in].needs_grad) continue;
      auto & d = grad_buffer(in).data;
      const auto & dy = grad(self).data;
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += dy[i];
    }
  };
  return self;
}

template <typename T>
typename Tape<T>::Var Tape<T>::concat(std::span<const Var> parts)
{
  if (parts.empty()) throw ConfigError("concat: no inputs");
  const auto & s0 = value(parts[0]).shape;
  require_rank4(s0, "concat");
  int channels = 0;
  bool needs = false;
  for (const Var p : parts) {
    const auto & s = value(p).shape;
    require_rank4(s, "concat");
    if (s[0] != s0[0] || s[2] != s0[2] || s[3] != s0[3]) {
      throw ConfigError("concat: shape " + shape_str(s) + " incompatible with " + shape_str(s0));
    }
    channels += s[1];
    needs = needs || nodes_[p].needs_grad;
  }
  const std::size_t plane = static_cast<std::size_t>(s0[2]) * s0[3];
  Tensor<T> out({s0[0], channels, s0[2], s0[3]});
  for (int n = 0; n < s0[0]; ++n) {
    std::size_t off = static_cast<std::size_t>(n) * channels * plane;
    for (const Var p : parts) {
      const auto c = static_cast<std::size_t>(value(p).shape[1]);
      const T * src = value(p).data.data() + n * c * plane;
      std::copy(src, src + c * plane, out.data.data() + off);
      off += c * plane;
    }
  }
  std::vector<Var> ins(parts.begin(), parts.end());
  const Var self = push(std::move(out), needs);
  nodes_[self].back = [this, ins, self, channels, plane]() {
    const auto & dy = grad(self).data;
    const int batch = value(self).shape[0];
    std::size_t c_off = 0;
    for (const Var p : ins) {
      const auto c = static_cast<std::size_t>(value(p).shape[1]);
      if (nodes_[p].needs_grad) {
        auto & d = grad_buffer(p).data;
        for (int n = 0; n < batch; ++n) {
          const T * src = dy.data() + (static_cast<std::size_t>(n) * channels + c_off) * plane;
          T * dst = d.data() + n * c * plane;
          for (std::size_t i = 0; i < c * plane; ++i) dst[i] += src[i];
        }
      }
      c_off += c;
    }
  };
  return self;
}

template <typename T>
typename Tape<T>::Var Tape<T>::softmax(Var x, int group)
{
  const auto & s = value(x).shape;
  require_rank4(s, "softmax");
  if (group < 1 || s[1] % group != 0) {
    throw ConfigError("softmax: " + std::to_string(s[1]) + " channels are not divisible into groups of " +
                      std::to_string(group));
  }
  const std::size_t plane = static_cast<std::size_t>(s[2]) * s[3];
  const int groups = s[0] * s[1] / group;
  Tensor<T> out = value(x);
  for (int gi = 0; gi < groups; ++gi) {
    T * base = out.data.data() + static_cast<std::size_t>(gi) * group * plane;
    for (std::size_t p = 0; p < plane; ++p) {
      T mx = base[p];
      for (int c = 1; c < group; ++c) mx = std::max(mx, base[c * plane + p]);
      T sum{0};
      for (int c = 0; c < group; ++c) {
        T & v = base[c * plane + p];
        v = std::exp(v - mx);
        sum += v;
      }
      for (int c = 0; c < group; ++c) base[c * plane + p] /= sum;
    }
  }
  const Var self = push(std::move(out), nodes_[x].needs_grad);
  nodes_[self].back = [this, x, self, group, groups, plane]() {
    if (!nodes_[x].needs_grad) return;
    const T * y = value(self).data.data();
    const T * dy = grad(self).data.data();
    T * dx = grad_buffer(x).data.data();
    for (int gi = 0; gi < groups; ++gi) {
      const std::size_t base = static_cast<std::size_t>(gi) * group * plane;
      for (std::size_t p = 0; p < plane; ++p) {
        T dot{0};
        for (int c = 0; c < group; ++c) dot += y[base + c * plane + p] * dy[base + c * plane + p];
        for (int c = 0; c < group; ++c) {
          const std::size_t i = base + c * plane + p;
          dx[i] += y[i] * (dy[i] - dot);
        }
      }
    }
  };
  return self;
}

template <typename T>
void Tape<T>::backward(Var out, const Tensor<T> & seed)
{
  backward(std::vector<std::pair<Var, Tensor<T>>>{{out, seed}});
}

template <typename T>
void Tape<T>::backward(const std::vector<std::pair<Var, Tensor<T>>> & seeds)
{
  for (auto & n : nodes_) n.grad = Tensor<T>();
  Var top = -1;
  for (const auto & [v, seed] : seeds) {
    if (seed.shape != value(v).shape) {
      throw ConfigError("backward: seed " + shape_str(seed.shape) + " does not match output " +
                        shape_str(value(v).shape));
    }
    auto & g = grad_buffer(v).data;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += seed.data[i];
    top = std::max(top, v);
  }
  for (Var i = top; i >= 0; --i) {
    auto & n = nodes_[static_cast<std::size_t>(i)];
    if (!n.needs_grad || n.grad.data.empty()) continue;
    if (n.back) n.back();
    if (n.param) {
      auto & pg = n.param->grad.data;
      for (std::size_t k = 0; k < pg.size(); ++k) pg[k] += n.grad.data[k];
    }
  }
}

// -------------------------------------------------------------------- config

void NetworkConfig::validate() const
{
  if (lidar_channels < 1 || map_channels < 1) throw ConfigError("network: input channel counts must be >= 1");
  if (stream_widths.empty()) throw ConfigError("network: stream_widths must not be empty");
  if (blocks_per_stage.size() != stream_widths.size() || strides.size() != stream_widths.size()) {
    throw ConfigError("network: stream_widths, blocks_per_stage and strides must have the same length");
  }
  int total = 1;
  for (std::size_t i = 0; i < stream_widths.size(); ++i) {
    if (stream_widths[i] < 1) throw ConfigError("network: stream widths must be >= 1");
    if (blocks_per_stage[i] < 1) throw ConfigError("network: blocks_per_stage entries must be >= 1");
    if (strides[i] < 1) throw ConfigError("network: strides must be >= 1");
    total *= strides[i];
  }
  if (total != 8) throw ConfigError("network: total stride is " + std::to_string(total) + ", must be 8");
  if (fusion_width < 1 || fusion_blocks < 1 || header_width < 1 || intent_embedding < 1) {
    throw ConfigError("network: fusion_width, fusion_blocks, header_width and intent_embedding must be >= 1");
  }
  if (future_steps < 0) throw ConfigError("network: future_steps must be >= 0");
  if (anchors_per_cell != 5) throw ConfigError("network: anchors_per_cell must be 5");
  if (num_classes != 8) throw ConfigError("network: num_classes must be 8");
}

nlohmann::json to_json(const NetworkConfig & c)
{
  return {{"lidar_channels", c.lidar_channels}, {"map_channels", c.map_channels},
          {"stream_widths", c.stream_widths},   {"blocks_per_stage", c.blocks_per_stage},
          {"strides", c.strides},               {"fusion_width", c.fusion_width},
          {"fusion_blocks", c.fusion_blocks},   {"header_width", c.header_width},
          {"intent_embedding", c.intent_embedding}, {"future_steps", c.future_steps},
          {"anchors_per_cell", c.anchors_per_cell}, {"num_classes", c.num_classes}};
}

NetworkConfig network_config_from_json(const nlohmann::json & j)
{
  NetworkConfig c;
  try {
    c.lidar_channels = j.at("lidar_channels").get<int>();
    c.map_channels = j.at("map_channels").get<int>();
    c.stream_widths = j.at("stream_widths").get<std::vector<int>>();
    c.blocks_per_stage = j.at("blocks_per_stage").get<std::vector<int>>();
    c.strides = j.at("strides").get<std::vector<int>>();
    c.fusion_width = j.at("fusion_width").get<int>();
    c.fusion_blocks = j.at("fusion_blocks").get<int>();
    c.header_width = j.at("header_width").get<int>();
    c.intent_embedding = j.at("intent_embedding").get<int>();
    c.future_steps = j.at("future_steps").get<int>();
    c.anchors_per_cell = j.at("anchors_per_cell").get<int>();
    c.num_classes = j.at("num_classes").get<int>();
  } catch (const nlohmann::json::exception & e) {
    throw ConfigError(std::string("network config: ") + e.what());
  }
  c.validate();
  return c;
}

void apply_network_key(NetworkConfig & c, const std::string & key, const std::string & value)
{
  if (key == "lidar_channels") c.lidar_channels = parse_int(value, key);
  else if (key == "map_channels") c.map_channels = parse_int(value, key);
  else if (key == "stream_widths") c.stream_widths = parse_int_list(value, key);
  else if (key == "blocks_per_stage") c.blocks_per_stage = parse_int_list(value, key);
  else if (key == "strides") c.strides = parse_int_list(value, key);
  else if (key == "fusion_width") c.fusion_width = parse_int(value, key);
  else if (key == "fusion_blocks") c.fusion_blocks = parse_int(value, key);
  else if (key == "header_width") c.header_width = parse_int(value, key);
  else if (key == "intent_embedding") c.intent_embedding = parse_int(value, key);
  else if (key == "future_steps") c.future_steps = parse_int(value, key);
  else if (key == "anchors_per_cell") c.anchors_per_cell = parse_int(value, key);
  else throw ConfigError("unknown network key '" + key + "'");
}

// ------------------------------------------------------------------- outputs

template <typename T>
T HeadOutputs<T>::det_logit(int n, int i, int j, int k, int s) const
{
  const std::size_t c = static_cast<std::size_t>(k) * 2 + s;
  return det.data[((static_cast<std::size_t>(n) * det.dim(1) + c) * rows() + i) * cols() + j];
}

template <typename T>
T HeadOutputs<T>::vehicle_prob(int n, int i, int j, int k) const
{
  const T d = det_logit(n, i, j, k, 1) - det_logit(n, i, j, k, 0);
  return T{1} / (T{1} + std::exp(d));
}

template <typename T>
T HeadOutputs<T>::intent_logit(int n, int i, int j, int c) const
{
  return intent.data[((static_cast<std::size_t>(n) * intent.dim(1) + c) * rows() + i) * cols() + j];
}

template <typename T>
T HeadOutputs<T>::reg_value(int n, int i, int j, int k, int r) const
{
  const std::size_t c = static_cast<std::size_t>(k) * reg_width + r;
  return reg.data[((static_cast<std::size_t>(n) * reg.dim(1) + c) * rows() + i) * cols() + j];
}

// ----------------------------------------------------------------- IntentNet

template <typename T>
IntentNet<T>::IntentNet(NetworkConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg))
{
  cfg_.validate();
  init_blas();
  std::mt19937_64 rng(seed);
  const auto he = [](int in, int k) { return std::sqrt(2.0 / (static_cast<double>(in) * k * k)); };

  for (const char * s : {"lidar", "map"}) {
    int in = std::string(s) == "lidar" ? cfg_.lidar_channels : cfg_.map_channels;
    for (std::size_t st = 0; st < cfg_.stream_widths.size(); ++st) {
      for (int b = 0; b < cfg_.blocks_per_stage[st]; ++b) {
        const std::string name = std::string(s) + ".stage" + std::to_string(st) + ".block" + std::to_string(b);
        add_block(name, in, cfg_.stream_widths[st], b == 0 ? cfg_.strides[st] : 1);
        in = cfg_.stream_widths[st];
      }
    }
  }
  int in = 2 * cfg_.stream_widths.back();
  for (int b = 0; b < cfg_.fusion_blocks; ++b) {
    add_block("fusion.block" + std::to_string(b), in, cfg_.fusion_width, 1);
    in = cfg_.fusion_width;
  }
  const int f = cfg_.fusion_width;
  const int hw = cfg_.header_width;
  const int a = cfg_.anchors_per_cell;
  add_conv("det.conv1", f, hw, 3, he(f, 3));
  add_conv("det.out", hw, 2 * a, 3, 0.01);
  add_conv("intent.conv1", f, hw, 3, he(f, 3));
  add_conv("intent.out", hw, cfg_.num_classes, 3, 0.01);
  add_conv("embed", cfg_.num_classes, cfg_.intent_embedding, 1, he(cfg_.num_classes, 1));
  add_conv("reg.conv1", f + cfg_.intent_embedding, hw, 3, he(f + cfg_.intent_embedding, 3));
  add_conv("reg.out", hw, a * cfg_.regression_width(), 3, 0.01);

  // Weights drawn in creation order.
  for (auto & p : params_) {
    const auto it = init_std_.find(p.name);
    if (it == init_std_.end()) continue;
    std::normal_distribution<double> dist(0.0, it->second);
    for (auto & v : p.value.data) v = static_cast<T>(dist(rng));
  }
  // Detection prior: vehicle probability 0.01 at start.
  auto & db = params_.at("det.out.bias");
  for (int k = 0; k < a; ++k) db.value.data[static_cast<std::size_t>(k) * 2] = static_cast<T>(-std::log(99.0));
}

template <typename T>
void IntentNet<T>::add_conv(const std::string & name, int in, int out, int k, double init_std)
{
  params_.add(name + ".weight", {out, in, k, k});
  params_.add(name + ".bias", {out});
  init_std_[name + ".weight"] = init_std;
}

template <typename T>
void IntentNet<T>::add_block(const std::string & name, int in, int out, int stride)
{
  const auto he = [](int c, int k) { return std::sqrt(2.0 / (static_cast<double>(c) * k * k)); };
  add_conv(name + ".conv1", in, out, 3, he(in, 3));
  add_conv(name + ".conv2", out, out, 3, he(out, 3));
  if (stride != 1 || in != out) add_conv(name + ".proj", in, out, 1, he(in, 1));
}

template <typename T>
typename IntentNet<T>::Var IntentNet<T>::conv(Tape<T> & tape, const std::string & name, Var x, int stride,
                                              int padding)
{
  const Var w = tape.parameter(params_.at(name + ".weight"));
  const Var b = tape.parameter(params_.at(name + ".bias"));
  return tape.conv2d(x, w, b, stride, padding);
}

template <typename T>
typename IntentNet<T>::Var IntentNet<T>::residual_block(Tape<T> & tape, const std::string & name, Var x, int stride)
{
  Var y = tape.relu(conv(tape, name + ".conv1", x, stride, 1));
  y = conv(tape, name + ".conv2", y, 1, 1);
  const Var shortcut = params_.contains(name + ".proj.weight") ? conv(tape, name + ".proj", x, stride, 0) : x;
  return tape.relu(tape.add(y, shortcut));
}

template <typename T>
typename IntentNet<T>::Var IntentNet<T>::stream(Tape<T> & tape, const std::string & name, Var x)
{
  for (std::size_t st = 0; st < cfg_.stream_widths.size(); ++st) {
    for (int b = 0; b < cfg_.blocks_per_stage[st]; ++b) {
      x = residual_block(tape, name + ".stage" + std::to_string(st) + ".block" + std::to_string(b), x,
                         b == 0 ? cfg_.strides[st] : 1);
    }
  }
  return x;
}

template <typename T>
typename IntentNet<T>::Var IntentNet<T>::backbone(Tape<T> & tape, Var lidar, Var map, Var * lidar_out,
                                                  Var * map_out)
{
  const auto & ls = tape.value(lidar).shape;
  const auto & ms = tape.value(map).shape;
  require_rank4(ls, "backbone lidar");
  require_rank4(ms, "backbone map");
  if (ls[1] != cfg_.lidar_channels || ms[1] != cfg_.map_channels) {
    throw ConfigError("backbone: expected " + std::to_string(cfg_.lidar_channels) + " lidar and " +
                      std::to_string(cfg_.map_channels) + " map channels, got " + shape_str(ls) + " and " +
                      shape_str(ms));
  }
  if (ls[0] != ms[0] || ls[2] != ms[2] || ls[3] != ms[3]) {
    throw ConfigError("backbone: lidar " + shape_str(ls) + " and map " + shape_str(ms) + " disagree");
  }
  if (ls[2] % 8 != 0 || ls[3] % 8 != 0) {
    throw ConfigError("backbone: spatial dims " + shape_str(ls) + " are not divisible by 8");
  }
  const Var l = stream(tape, "lidar", lidar);
  const Var m = stream(tape, "map", map);
  if (lidar_out) *lidar_out = l;
  if (map_out) *map_out = m;
  const std::array<Var, 2> both{l, m};
  Var x = tape.concat(both);
  for (int b = 0; b < cfg_.fusion_blocks; ++b) x = residual_block(tape, "fusion.block" + std::to_string(b), x, 1);
  return x;
}

template <typename T>
typename IntentNet<T>::Forward IntentNet<T>::header(Tape<T> & tape, Var features)
{
  Forward f{};
  f.features = features;
  f.det = conv(tape, "det.out", tape.relu(conv(tape, "det.conv1", features, 1, 1)), 1, 1);
  f.intent = conv(tape, "intent.out", tape.relu(conv(tape, "intent.conv1", features, 1, 1)), 1, 1);
  f.intent_prob = tape.softmax(f.intent, cfg_.num_classes);
  f.embedding = tape.relu(conv(tape, "embed", f.intent_prob, 1, 0));
  const std::array<Var, 2> parts{features, f.embedding};
  const Var joint = tape.concat(parts);
  f.reg = conv(tape, "reg.out", tape.relu(conv(tape, "reg.conv1", joint, 1, 1)), 1, 1);
  return f;
}

template <typename T>
typename IntentNet<T>::Forward IntentNet<T>::forward(Tape<T> & tape, const Tensor<T> & lidar, const Tensor<T> & map)
{
  const Var l = tape.constant(lidar);
  const Var m = tape.constant(map);
  Var lf = 0, mf = 0;
  const Var features = backbone(tape, l, m, &lf, &mf);
  Forward f = header(tape, features);
  f.lidar_features = lf;
  f.map_features = mf;
  return f;
}

template <typename T>
HeadOutputs<T> IntentNet<T>::outputs(const Tape<T> & tape, const Forward & f) const
{
  HeadOutputs<T> h;
  h.anchors = cfg_.anchors_per_cell;
  h.reg_width = cfg_.regression_width();
  h.det = tape.value(f.det);
  h.intent = tape.value(f.intent);
  h.reg = tape.value(f.reg);
  return h;
}

// ---------------------------------------------------------------------- Adam

template <typename T>
void adam_step(ParameterSet<T> & params, AdamState<T> & state, const AdamConfig & cfg)
{
  for (const auto & p : params) {
    for (const T g : p.grad.data) {
      if (!std::isfinite(static_cast<double>(g))) throw TrainingError("non-finite gradient in parameter '" + p.name + "'");
    }
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (auto & p : params) {
    auto & m = state.m[p.name];
    auto & v = state.v[p.name];
    if (m.empty()) {
      m.assign(p.value.size(), T{0});
      v.assign(p.value.size(), T{0});
    }
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = static_cast<double>(p.grad.data[i]) + cfg.weight_decay * static_cast<double>(p.value.data[i]);
      const double mi = cfg.beta1 * static_cast<double>(m[i]) + (1.0 - cfg.beta1) * g;
      const double vi = cfg.beta2 * static_cast<double>(v[i]) + (1.0 - cfg.beta2) * g * g;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double step = cfg.lr * (mi / c1) / (std::sqrt(vi / c2) + cfg.eps);
      p.value.data[i] = static_cast<T>(static_cast<double>(p.value.data[i]) - step);
    }
  }
}

template <typename Dst, typename Src>
void copy_parameters(const ParameterSet<Src> & from, ParameterSet<Dst> & to)
{
  for (auto & p : to) {
    const auto & q = from.at(p.name);
    if (q.value.shape != p.value.shape) {
      throw ConfigError("parameter '" + p.name + "': shape " + shape_str(q.value.shape) + " vs " +
                        shape_str(p.value.shape));
    }
    for (std::size_t i = 0; i < p.value.size(); ++i) p.value.data[i] = static_cast<Dst>(q.value.data[i]);
  }
}

// ---------------------------------------------------------------- checkpoint

template <typename T>
Checkpoint make_checkpoint(const IntentNet<T> & net, const AdamState<T> & adam, long step, nlohmann::json run_config)
{
  Checkpoint c;
  c.network = net.config();
  c.step = step;
  c.run_config = std::move(run_config);
  for (const auto & p : net.params()) {
    Tensor<float> t(p.value.shape);
    for (std::size_t i = 0; i < t.size(); ++i) t.data[i] = static_cast<float>(p.value.data[i]);
    c.params.emplace(p.name, std::move(t));
  }
  c.adam.step = adam.step;
  for (const auto & [name, m] : adam.m) c.adam.m[name].assign(m.begin(), m.end());
  for (const auto & [name, v] : adam.v) c.adam.v[name].assign(v.begin(), v.end());
  return c;
}

namespace
{

void write_floats(std::ostream & os, const std::vector<float> & v)
{
  static_assert(sizeof(float) == 4);
  for (const float f : v) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    const char b[4] = {static_cast<char>(bits & 0xff), static_cast<char>((bits >> 8) & 0xff),
                       static_cast<char>((bits >> 16) & 0xff), static_cast<char>((bits >> 24) & 0xff)};
    os.write(b, 4);
  }
}

std::vector<float> read_floats(std::istream & is, std::size_t count, const std::string & where)
{
  std::vector<char> raw(count * 4);
  is.read(raw.data(), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(is.gcount()) != raw.size()) throw ParseError(where, "truncated tensor data");
  std::vector<float> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    const auto * b = reinterpret_cast<const unsigned char *>(raw.data() + 4 * i);
    const std::uint32_t bits = b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
    std::memcpy(&out[i], &bits, 4);
  }
  return out;
}

}  // namespace

void save_checkpoint(const Checkpoint & c, const std::filesystem::path & path)
{
  nlohmann::json header;
  header["format"] = kCheckpointFormat;
  header["version"] = kCheckpointVersion;
  header["network"] = to_json(c.network);
  header["step"] = c.step;
  header["adam_step"] = c.adam.step;
  header["run_config"] = c.run_config;
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto & [name, t] : c.params) {
    tensors.push_back({{"name", name}, {"role", "value"}, {"shape", t.shape}});
    if (c.adam.m.count(name)) {
      tensors.push_back({{"name", name}, {"role", "adam_m"}, {"shape", t.shape}});
      tensors.push_back({{"name", name}, {"role", "adam_v"}, {"shape", t.shape}});
    }
  }
  header["tensors"] = tensors;

  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write checkpoint " + tmp);
    os << header.dump() << '\n';
    for (const auto & [name, t] : c.params) {
      write_floats(os, t.data);
      const auto m = c.adam.m.find(name);
      if (m != c.adam.m.end()) {
        write_floats(os, m->second);
        write_floats(os, c.adam.v.at(name));
      }
    }
    if (!os) throw std::runtime_error("failed writing checkpoint " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path & path)
{
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ParseError(path.string(), "cannot open checkpoint");
  std::string line;
  if (!std::getline(is, line)) throw ParseError(path.string() + ":1", "empty checkpoint");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception & e) {
    throw ParseError(path.string() + ":1", e.what());
  }
  if (header.value("format", "") != kCheckpointFormat) {
    throw VersionError(path.string() + ": not a bevintent checkpoint");
  }
  if (header.value("version", "") != kCheckpointVersion) {
    throw VersionError(path.string() + ": checkpoint version '" + header.value("version", "") + "' unsupported, expected " +
                       std::string(kCheckpointVersion));
  }
  Checkpoint c;
  try {
    c.network = network_config_from_json(header.at("network"));
    c.step = header.at("step").get<long>();
    c.adam.step = header.at("adam_step").get<long>();
    c.run_config = header.at("run_config");
    for (const auto & t : header.at("tensors")) {
      const auto name = t.at("name").get<std::string>();
      const auto role = t.at("role").get<std::string>();
      const auto shape = t.at("shape").get<std::vector<int>>();
      auto data = read_floats(is, Tensor<float>::element_count(shape), path.string() + ": tensor '" + name + "'");
      if (role == "value") {
        Tensor<float> v;
        v.shape = shape;
        v.data = std::move(data);
        c.params[name] = std::move(v);
      } else if (role == "adam_m") {
        c.adam.m[name] = std::move(data);
      } else if (role == "adam_v") {
        c.adam.v[name] = std::move(data);
      } else {
        throw ParseError(path.string(), "unknown tensor role '" + role + "'");
      }
    }
  } catch (const nlohmann::json::exception & e) {
    throw ParseError(path.string() + ":1", e.what());
  }
  if (is.peek() != std::char_traits<char>::eof()) throw ParseError(path.string(), "trailing bytes after tensors");
  return c;
}

template <typename T>
void restore(IntentNet<T> & net, const Checkpoint & c, AdamState<T> * adam)
{
  for (auto & p : net.params()) {
    const auto it = c.params.find(p.name);
    if (it == c.params.end()) throw ConfigError("checkpoint has no tensor '" + p.name + "'");
    if (it->second.shape != p.value.shape) {
      throw ConfigError("tensor '" + p.name + "': checkpoint shape " + shape_str(it->second.shape) +
                        " does not match model shape " + shape_str(p.value.shape));
    }
    for (std::size_t i = 0; i < p.value.size(); ++i) p.value.data[i] = static_cast<T>(it->second.data[i]);
  }
  for (const auto & [name, t] : c.params) {
    if (!net.params().contains(name)) throw ConfigError("checkpoint tensor '" + name + "' is not part of the model");
  }
  if (adam) {
    adam->step = c.adam.step;
    adam->m.clear();
    adam->v.clear();
    for (const auto & [name, m] : c.adam.m) adam->m[name].assign(m.begin(), m.end());
    for (const auto & [name, v] : c.adam.v) adam->v[name].assign(v.begin(), v.end());
  }
}

template class ParameterSet<float>;
template class ParameterSet<double>;
template class Tape<float>;
template class Tape<double>;
template struct HeadOutputs<float>;
template struct HeadOutputs<double>;
template class IntentNet<float>;
template class IntentNet<double>;
template void adam_step(ParameterSet<float> &, AdamState<float> &, const AdamConfig &);
template void adam_step(ParameterSet<double> &, AdamState<double> &, const AdamConfig &);
template void copy_parameters(const ParameterSet<float> &, ParameterSet<double> &);
template void copy_parameters(const ParameterSet<double> &, ParameterSet<float> &);
template void copy_parameters(const ParameterSet<float> &, ParameterSet<float> &);
template void copy_parameters(const ParameterSet<double> &, ParameterSet<double> &);
template Checkpoint make_checkpoint(const IntentNet<float> &, const AdamState<float> &, long, nlohmann::json);
template Checkpoint make_checkpoint(const IntentNet<double> &, const AdamState<double> &, long, nlohmann::json);
template void restore(IntentNet<float> &, const Checkpoint &, AdamState<float> *);
template void restore(IntentNet<double> &, const Checkpoint &, AdamState<double> *);

}  // namespace bevintent::net
