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

// Dense NCHW tensors with a reverse-mode tape, and the two-stream detector
// with its three-branch header.

#ifndef BEVINTENT_NET_HPP_
#define BEVINTENT_NET_HPP_

#include <array>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "bevintent/tensor.hpp"

namespace bevintent::net
{

/// Process-wide BLAS setup; idempotent. Pins BLAS to one thread so results
/// are bitwise reproducible.
void init_blas();

template <typename T>
struct Parameter
{
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
};

/// Named parameters in creation order. References stay valid as it grows.
template <typename T>
class ParameterSet
{
public:
  Parameter<T> & add(const std::string & name, std::vector<int> shape);
  Parameter<T> & at(const std::string & name);
  const Parameter<T> & at(const std::string & name) const;
  bool contains(const std::string & name) const { return index_.count(name) != 0; }

  std::size_t size() const { return items_.size(); }
  std::size_t scalar_count() const;
  auto begin() { return items_.begin(); }
  auto end() { return items_.end(); }
  auto begin() const { return items_.begin(); }
  auto end() const { return items_.end(); }

  void zero_grad();

private:
  std::deque<Parameter<T>> items_;
  std::map<std::string, std::size_t> index_;
};

/// Reverse-mode tape over rank-4 (N, C, H, W) tensors.
template <typename T>
class Tape
{
public:
  using Var = int;

  Var constant(Tensor<T> value);
  /// Gradients reaching this node accumulate into `p.grad` on backward().
  Var parameter(Parameter<T> & p);

  const Tensor<T> & value(Var v) const { return nodes_[static_cast<std::size_t>(v)].value; }
  /// Gradient of the last backward() w.r.t. `v`; empty if none reached it.
  const Tensor<T> & grad(Var v) const { return nodes_[static_cast<std::size_t>(v)].grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Cross-correlation. w is (O, C, k, k), b is (O).
  Var conv2d(Var x, Var w, Var b, int stride, int padding);
  Var relu(Var x);
  Var add(Var a, Var b);
  /// Concatenation along channels.
  Var concat(std::span<const Var> parts);
  /// Softmax over each run of `group` consecutive channels, per pixel.
  Var softmax(Var x, int group);

  /// Seeds d(out) with `seed` and propagates to every reachable node.
  void backward(Var out, const Tensor<T> & seed);
  /// Seeds several outputs at once.
  void backward(const std::vector<std::pair<Var, Tensor<T>>> & seeds);

private:
  struct Node
  {
    Tensor<T> value;
    Tensor<T> grad;
    bool needs_grad{false};
    Parameter<T> * param{nullptr};
    std::function<void()> back;
  };

  Var push(Tensor<T> value, bool needs_grad, std::function<void()> back = {});
  Tensor<T> & grad_buffer(Var v);

  std::vector<Node> nodes_;
};

struct NetworkConfig
{
  int lidar_channels{290};
  int map_channels{17};
  /// Per-stream stage widths; each stage is a residual block sequence.
  std::vector<int> stream_widths{32, 64, 128};
  std::vector<int> blocks_per_stage{1, 1, 1};
  /// Stride of each stage's first block. Product must be 8.
  std::vector<int> strides{2, 2, 2};
  int fusion_width{256};
  int fusion_blocks{2};
  int header_width{128};
  int intent_embedding{16};
  int future_steps{6};
  int anchors_per_cell{5};
  int num_classes{8};

  int regression_width() const { return 6 + 4 * future_steps; }
  void validate() const;
};

nlohmann::json to_json(const NetworkConfig & cfg);
NetworkConfig network_config_from_json(const nlohmann::json & j);
/// Applies one `key = value` override. Throws ConfigError on unknown keys.
void apply_network_key(NetworkConfig & cfg, const std::string & key, const std::string & value);

/// Header tensors, channels-first with a batch axis:
/// det (N, A*2, R, C) with channel k*2 + s, s = 0 vehicle / 1 background;
/// intent (N, 8, R, C); reg (N, A*W, R, C) with channel k*W + r.
template <typename T>
struct HeadOutputs
{
  int anchors{5};
  int reg_width{30};
  Tensor<T> det;
  Tensor<T> intent;
  Tensor<T> reg;

  int batch() const { return det.dim(0); }
  int rows() const { return det.dim(2); }
  int cols() const { return det.dim(3); }
  T det_logit(int n, int i, int j, int k, int s) const;
  /// Softmax of the two detection scores, vehicle side.
  T vehicle_prob(int n, int i, int j, int k) const;
  T intent_logit(int n, int i, int j, int c) const;
  T reg_value(int n, int i, int j, int k, int r) const;
};

template <typename T>
class IntentNet
{
public:
  using Var = typename Tape<T>::Var;

  struct Forward
  {
    Var lidar_features;
    Var map_features;
    Var features;
    Var det;
    Var intent;
    Var intent_prob;
    Var embedding;
    Var reg;
  };

  /// He fan-in initialisation from `seed`.
  IntentNet(NetworkConfig cfg, std::uint64_t seed);

  const NetworkConfig & config() const { return cfg_; }
  ParameterSet<T> & params() { return params_; }
  const ParameterSet<T> & params() const { return params_; }

  /// lidar (N, lidar_channels, H, W), map (N, map_channels, H, W).
  Forward forward(Tape<T> & tape, const Tensor<T> & lidar, const Tensor<T> & map);
  Var backbone(Tape<T> & tape, Var lidar, Var map, Var * lidar_out = nullptr, Var * map_out = nullptr);
  Forward header(Tape<T> & tape, Var features);

  HeadOutputs<T> outputs(const Tape<T> & tape, const Forward & f) const;

private:
  Var conv(Tape<T> & tape, const std::string & name, Var x, int stride, int padding);
  Var residual_block(Tape<T> & tape, const std::string & name, Var x, int stride);
  Var stream(Tape<T> & tape, const std::string & name, Var x);

  void add_conv(const std::string & name, int in, int out, int k, double init_std);
  void add_block(const std::string & name, int in, int out, int stride);

  NetworkConfig cfg_;
  ParameterSet<T> params_;
  std::map<std::string, double> init_std_;
};

struct AdamConfig
{
  double lr{1e-4};
  double beta1{0.9};
  double beta2{0.999};
  double eps{1e-8};
  /// Coupled L2 decay: added to the gradient before the moment updates.
  double weight_decay{1e-4};
};

template <typename T>
struct AdamState
{
  long step{0};
  std::map<std::string, std::vector<T>> m;
  std::map<std::string, std::vector<T>> v;
};

/// One Adam update from the gradients stored in `params`. Throws
/// TrainingError naming the parameter on a non-finite gradient, before any
/// parameter is modified.
template <typename T>
void adam_step(ParameterSet<T> & params, AdamState<T> & state, const AdamConfig & cfg);

template <typename Dst, typename Src>
void copy_parameters(const ParameterSet<Src> & from, ParameterSet<Dst> & to);

inline constexpr std::string_view kCheckpointFormat = "bevintent.checkpoint";
inline constexpr std::string_view kCheckpointVersion = "v1";

struct Checkpoint
{
  NetworkConfig network;
  long step{0};
  /// Free-form snapshot of the run configuration.
  nlohmann::json run_config;
  std::map<std::string, Tensor<float>> params;
  AdamState<float> adam;
};

template <typename T>
Checkpoint make_checkpoint(const IntentNet<T> & net, const AdamState<T> & adam, long step, nlohmann::json run_config);
void save_checkpoint(const Checkpoint & ckpt, const std::filesystem::path & path);
Checkpoint load_checkpoint(const std::filesystem::path & path);
/// Copies checkpoint values into `net`. Throws ConfigError naming the
/// tensor on a missing name or shape mismatch.
template <typename T>
void restore(IntentNet<T> & net, const Checkpoint & ckpt, AdamState<T> * adam = nullptr);

}  // namespace bevintent::net

#endif  // BEVINTENT_NET_HPP_
