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

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "bevintent/errors.hpp"
#include "bevintent/net.hpp"
#include "doctest.h"
#include "gradcheck.hpp"

using namespace bevintent;
using namespace bevintent::net;
using bevintent::testing::check_tape_function;
using bevintent::testing::kFdTolerance;
using bevintent::testing::random_tensor;

namespace
{

NetworkConfig tiny_config()
{
  NetworkConfig c;
  c.lidar_channels = 3;
  c.map_channels = 2;
  c.stream_widths = {2, 3, 3};
  c.fusion_width = 4;
  c.fusion_blocks = 2;
  c.header_width = 3;
  c.intent_embedding = 2;
  c.future_steps = 1;
  return c;
}

/// Direct nested-loop cross-correlation.
Tensor<double> reference_conv(const Tensor<double> & x, const Tensor<double> & w, const Tensor<double> & b, int stride,
                              int pad)
{
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int o = w.dim(0), k = w.dim(2);
  const int ho = (h + 2 * pad - k) / stride + 1, wo = (wd + 2 * pad - k) / stride + 1;
  Tensor<double> out({n, o, ho, wo});
  for (int bn = 0; bn < n; ++bn)
    for (int oc = 0; oc < o; ++oc)
      for (int i = 0; i < ho; ++i)
        for (int j = 0; j < wo; ++j) {
          double s = b.data[static_cast<std::size_t>(oc)];
          for (int ic = 0; ic < c; ++ic)
            for (int ki = 0; ki < k; ++ki)
              for (int kj = 0; kj < k; ++kj) {
                const int ii = i * stride - pad + ki, jj = j * stride - pad + kj;
                if (ii < 0 || jj < 0 || ii >= h || jj >= wd) continue;
                s += x.data[((static_cast<std::size_t>(bn) * c + ic) * h + ii) * wd + jj] *
                     w.data[((static_cast<std::size_t>(oc) * c + ic) * k + ki) * k + kj];
              }
          out.data[((static_cast<std::size_t>(bn) * o + oc) * ho + i) * wo + j] = s;
        }
  return out;
}

}  // namespace

TEST_CASE("conv2d examples")
{
  Tape<double> tape;
  std::mt19937_64 rng(1);
  const auto x = random_tensor({2, 3, 4, 5}, rng);
  Tensor<double> eye({3, 3, 1, 1}, 0.0);
  for (int c = 0; c < 3; ++c) eye.data[static_cast<std::size_t>(c) * 3 + c] = 1.0;
  const auto y = tape.conv2d(tape.constant(x), tape.constant(eye), tape.constant(Tensor<double>({3}, 0.0)), 1, 0);
  CHECK(tape.value(y) == x);

  const auto ones = tape.constant(Tensor<double>({1, 1, 5, 5}, 1.0));
  const auto k = tape.constant(Tensor<double>({1, 1, 3, 3}, 1.0));
  const auto z = tape.conv2d(ones, k, tape.constant(Tensor<double>({1}, 0.0)), 1, 0);
  CHECK(tape.value(z).shape == std::vector<int>{1, 1, 3, 3});
  for (double v : tape.value(z).data) CHECK(v == 9.0);

  CHECK_THROWS_AS(tape.conv2d(ones, tape.constant(Tensor<double>({1, 2, 3, 3}, 1.0)),
                              tape.constant(Tensor<double>({1}, 0.0)), 1, 0),
                  ConfigError);
  CHECK_THROWS_AS(tape.conv2d(ones, k, tape.constant(Tensor<double>({2}, 0.0)), 1, 0), ConfigError);
}

TEST_CASE("conv2d matches the nested-loop reference")
{
  std::mt19937_64 rng(2);
  for (const auto [k, stride, pad] : {std::tuple{3, 1, 1}, {3, 2, 1}, {1, 2, 0}, {1, 1, 0}, {3, 1, 0}, {2, 2, 1}}) {
    const auto x = random_tensor({2, 3, 7, 6}, rng);
    const auto w = random_tensor({4, 3, k, k}, rng);
    const auto b = random_tensor({4}, rng);
    Tape<double> tape;
    const auto y = tape.conv2d(tape.constant(x), tape.constant(w), tape.constant(b), stride, pad);
    const auto ref = reference_conv(x, w, b, stride, pad);
    REQUIRE(tape.value(y).shape == ref.shape);
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::abs(tape.value(y).data[i] - ref.data[i]) < 1e-12);
  }
}

TEST_CASE("every tape op passes the finite-difference check")
{
  std::mt19937_64 rng(3);
  ParameterSet<double> ps;
  auto & x = ps.add("x", {2, 3, 6, 5});
  auto & x2 = ps.add("x2", {2, 3, 6, 5});
  auto & x3 = ps.add("x3", {2, 4, 6, 5});
  auto & w = ps.add("w", {4, 3, 3, 3});
  auto & w1 = ps.add("w1", {4, 3, 1, 1});
  auto & b = ps.add("b", {4});
  for (auto & p : ps) p.value = random_tensor(p.value.shape, rng);

  const auto run = [&](const char * name, std::function<int(Tape<double> &)> f) {
    const auto r = check_tape_function(ps, f, rng);
    INFO(name << " worst " << r.worst);
    CHECK(r.max_rel < kFdTolerance);
  };
  for (const auto [stride, pad] : {std::pair{1, 1}, {2, 1}, {2, 0}, {1, 0}}) {
    run("conv3x3", [&, stride, pad](Tape<double> & t) {
      return t.conv2d(t.parameter(x), t.parameter(w), t.parameter(b), stride, pad);
    });
    run("conv1x1", [&, stride](Tape<double> & t) {
      return t.conv2d(t.parameter(x), t.parameter(w1), t.parameter(b), stride, 0);
    });
  }
  run("relu", [&](Tape<double> & t) { return t.relu(t.parameter(x)); });
  run("add", [&](Tape<double> & t) { return t.add(t.parameter(x), t.parameter(x2)); });
  run("concat", [&](Tape<double> & t) {
    const std::array<int, 3> parts{t.parameter(x), t.parameter(x3), t.parameter(x2)};
    return t.concat(parts);
  });
  run("softmax2", [&](Tape<double> & t) { return t.softmax(t.parameter(x3), 2); });
  run("softmax4", [&](Tape<double> & t) { return t.softmax(t.parameter(x3), 4); });
  run("shared input", [&](Tape<double> & t) {
    const int a = t.parameter(x);
    return t.add(t.relu(a), a);
  });
  run("composite", [&](Tape<double> & t) {
    const int a = t.parameter(x);
    const int c = t.relu(t.conv2d(a, t.parameter(w), t.parameter(b), 1, 1));
    const std::array<int, 2> parts{c, t.conv2d(a, t.parameter(w1), t.parameter(b), 1, 0)};
    return t.softmax(t.concat(parts), 8);
  });
}

TEST_CASE("backbone has stride 8 and isolated streams")
{
  for (const auto & strides : {std::vector<int>{2, 2, 2}, {1, 4, 2}, {8, 1, 1}}) {
    auto cfg = tiny_config();
    cfg.strides = strides;
    IntentNet<double> net(cfg, 5);
    Tape<double> tape;
    std::mt19937_64 rng(4);
    const auto f = net.forward(tape, random_tensor({1, 3, 24, 16}, rng), random_tensor({1, 2, 24, 16}, rng));
    CHECK(tape.value(f.features).shape == std::vector<int>{1, 4, 3, 2});
  }
  auto bad = tiny_config();
  bad.strides = {2, 2, 1};
  CHECK_THROWS_AS(IntentNet<double>(bad, 1), ConfigError);

  IntentNet<double> net(tiny_config(), 6);
  {
    Tape<double> tape;
    const auto f = net.forward(tape, Tensor<double>({1, 3, 16, 16}, 0.0), Tensor<double>({1, 2, 16, 16}, 0.0));
    for (double v : tape.value(f.features).data) CHECK(v == 0.0);
  }
  std::mt19937_64 rng(7);
  const auto lidar = random_tensor({1, 3, 16, 16}, rng);
  const auto map = random_tensor({1, 2, 16, 16}, rng);
  Tape<double> t0;
  const auto f0 = net.forward(t0, lidar, map);
  net.params().at("map.stage0.block0.conv1.weight").value.data[0] += 0.5;
  Tape<double> t1;
  const auto f1 = net.forward(t1, lidar, map);
  CHECK(t0.value(f0.lidar_features) == t1.value(f1.lidar_features));
  CHECK(t0.value(f0.map_features) != t1.value(f1.map_features));
  CHECK(t0.value(f0.features) != t1.value(f1.features));
}

TEST_CASE("header shapes, probabilities and determinism")
{
  NetworkConfig cfg;
  cfg.lidar_channels = 4;
  cfg.map_channels = 17;
  cfg.stream_widths = {4, 4, 4};
  cfg.fusion_width = 8;
  cfg.header_width = 4;
  IntentNet<float> net(cfg, 11);
  std::mt19937_64 rng(8);
  Tensor<float> lidar({2, 4, 32, 24});
  Tensor<float> map({2, 17, 32, 24});
  std::bernoulli_distribution coin(0.3);
  for (auto & v : lidar.data) v = coin(rng) ? 1.0f : 0.0f;
  for (auto & v : map.data) v = coin(rng) ? 1.0f : -1.0f;
  Tape<float> tape;
  const auto f = net.forward(tape, lidar, map);
  const auto out = net.outputs(tape, f);
  CHECK(out.det.shape == std::vector<int>{2, 10, 4, 3});
  CHECK(out.intent.shape == std::vector<int>{2, 8, 4, 3});
  CHECK(out.reg.shape == std::vector<int>{2, 150, 4, 3});
  const auto & prob = tape.value(f.intent_prob);
  for (int n = 0; n < 2; ++n)
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 3; ++j) {
        double s = 0.0;
        for (int c = 0; c < 8; ++c) s += prob.data[((static_cast<std::size_t>(n) * 8 + c) * 4 + i) * 3 + j];
        CHECK(std::abs(s - 1.0) < 1e-6);
        for (int k = 0; k < 5; ++k) {
          const float p = out.vehicle_prob(n, i, j, k);
          CHECK(p > 0.0f);
          CHECK(p < 1.0f);
        }
      }
  Tape<float> again;
  const auto f2 = net.forward(again, lidar, map);
  CHECK(net.outputs(again, f2).reg == out.reg);
  CHECK(net.outputs(again, f2).det == out.det);
}

TEST_CASE("header gradients: embedding path and finite differences")
{
  IntentNet<double> net(tiny_config(), 12);
  std::mt19937_64 rng(9);
  const auto feats = random_tensor({2, 4, 3, 4}, rng);
  // Regression-only loss still reaches the intention branch.
  {
    Tape<double> tape;
    const auto f = net.header(tape, tape.constant(feats));
    net.params().zero_grad();
    tape.backward(f.reg, random_tensor(tape.value(f.reg).shape, rng));
    double g = 0.0;
    for (double v : net.params().at("intent.out.weight").grad.data) g += std::abs(v);
    CHECK(g > 0.0);
    for (double v : net.params().at("det.out.weight").grad.data) CHECK(v == 0.0);
  }
  // Whole header against finite differences, one output at a time.
  for (const int which : {0, 1, 2}) {
    const auto r = check_tape_function(
      net.params(),
      [&](Tape<double> & t) {
        const auto f = net.header(t, t.constant(feats));
        return which == 0 ? f.det : which == 1 ? f.intent : f.reg;
      },
      rng, 6);
    INFO("output " << which << " worst " << r.worst);
    CHECK(r.max_rel < kFdTolerance);
  }
  // Full network.
  const auto lidar = random_tensor({1, 3, 16, 8}, rng);
  const auto map = random_tensor({1, 2, 16, 8}, rng);
  const auto r = check_tape_function(
    net.params(), [&](Tape<double> & t) { return net.forward(t, lidar, map).reg; }, rng, 4);
  INFO("full network worst " << r.worst);
  CHECK(r.max_rel < kFdTolerance);
}

TEST_CASE("Adam update rule")
{
  ParameterSet<double> ps;
  auto & p = ps.add("p", {1});
  p.value.data[0] = 0.0;
  AdamConfig cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.0;
  AdamState<double> st;
  p.grad.data[0] = 1.0;
  adam_step(ps, st, cfg);
  CHECK(p.value.data[0] == doctest::Approx(-0.1).epsilon(1e-6));

  ParameterSet<double> zero;
  auto & z = zero.add("z", {3});
  z.value.data = {1.0, -2.0, 3.0};
  AdamState<double> zs;
  for (int i = 0; i < 5; ++i) adam_step(zero, zs, cfg);
  CHECK(z.value.data == std::vector<double>{1.0, -2.0, 3.0});

  // Coupled decay acts through the gradient.
  cfg.weight_decay = 0.5;
  AdamState<double> ds;
  adam_step(zero, ds, cfg);
  CHECK(z.value.data[0] == doctest::Approx(0.9).epsilon(1e-6));
  CHECK(z.value.data[1] == doctest::Approx(-1.9).epsilon(1e-6));

  z.grad.data[1] = std::nan("");
  const auto before = z.value.data;
  try {
    adam_step(zero, ds, cfg);
    FAIL("expected TrainingError");
  } catch (const TrainingError & e) {
    CHECK(std::string(e.what()).find("'z'") != std::string::npos);
  }
  CHECK(z.value.data == before);
}

TEST_CASE("training steps are bitwise deterministic")
{
  const auto run = [] {
    IntentNet<float> net(tiny_config(), 21);
    AdamState<float> st;
    AdamConfig cfg;
    cfg.lr = 1e-3;
    std::mt19937_64 rng(5);
    Tensor<float> lidar({2, 3, 16, 16}), map({2, 2, 16, 16});
    std::normal_distribution<float> d;
    for (auto & v : lidar.data) v = d(rng);
    for (auto & v : map.data) v = d(rng);
    for (int step = 0; step < 3; ++step) {
      Tape<float> tape;
      const auto f = net.forward(tape, lidar, map);
      Tensor<float> seed(tape.value(f.reg).shape, 0.01f);
      net.params().zero_grad();
      tape.backward(f.reg, seed);
      adam_step(net.params(), st, cfg);
    }
    std::vector<float> flat;
    for (const auto & p : net.params()) flat.insert(flat.end(), p.value.data.begin(), p.value.data.end());
    return flat;
  };
  CHECK(run() == run());
}

TEST_CASE("checkpoint round trip and mismatch errors")
{
  const auto dir = std::filesystem::temp_directory_path() / "bevintent_test_net";
  std::filesystem::create_directories(dir);
  IntentNet<float> net(tiny_config(), 31);
  AdamState<float> st;
  st.step = 7;
  st.m["det.out.bias"] = std::vector<float>(10, 0.25f);
  st.v["det.out.bias"] = std::vector<float>(10, 0.5f);
  const auto ckpt = make_checkpoint(net, st, 42, nlohmann::json{{"seed", 3}});
  save_checkpoint(ckpt, dir / "a.ckpt");
  const auto back = load_checkpoint(dir / "a.ckpt");
  CHECK(back.step == 42);
  CHECK(back.run_config["seed"] == 3);
  CHECK(back.params == ckpt.params);
  CHECK(back.adam.m == st.m);
  CHECK(back.adam.v == st.v);
  CHECK(to_json(back.network) == to_json(net.config()));

  IntentNet<float> other(tiny_config(), 99);
  AdamState<float> ost;
  restore(other, back, &ost);
  for (const auto & p : net.params()) CHECK(other.params().at(p.name).value == p.value);
  CHECK(ost.step == 7);

  auto wide = tiny_config();
  wide.fusion_width = 5;
  IntentNet<float> mismatch(wide, 1);
  try {
    restore(mismatch, back);
    FAIL("expected ConfigError");
  } catch (const ConfigError & e) {
    CHECK(std::string(e.what()).find("fusion.block0") != std::string::npos);
  }

  {
    std::ofstream os(dir / "bad.ckpt");
    os << R"({"format":"bevintent.checkpoint","version":"v9"})" << "\n";
  }
  CHECK_THROWS_AS(load_checkpoint(dir / "bad.ckpt"), VersionError);
  {
    std::ifstream is(dir / "a.ckpt", std::ios::binary);
    std::string all((std::istreambuf_iterator<char>(is)), {});
    std::ofstream os(dir / "trunc.ckpt", std::ios::binary);
    os << all.substr(0, all.size() - 10);
  }
  CHECK_THROWS_AS(load_checkpoint(dir / "trunc.ckpt"), ParseError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("network config overrides")
{
  NetworkConfig c;
  apply_network_key(c, "stream_widths", "8, 16,32");
  CHECK(c.stream_widths == std::vector<int>{8, 16, 32});
  apply_network_key(c, "fusion_width", "64");
  CHECK(c.fusion_width == 64);
  CHECK_THROWS_AS(apply_network_key(c, "fusion_width", "6x"), ConfigError);
  CHECK_THROWS_AS(apply_network_key(c, "nope", "1"), ConfigError);
  CHECK(network_config_from_json(to_json(c)).stream_widths == c.stream_widths);
}
