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

// Microbenchmarks for the hot paths: convolution, polygon rasterization,
// rotated IoU and voxelization.

#include <benchmark/benchmark.h>

#include <random>

#include "bevintent/encoder.hpp"
#include "bevintent/geom.hpp"
#include "bevintent/net.hpp"
#include "bevintent/pipeline.hpp"
#include "bevintent/scene.hpp"

using namespace bevintent;

namespace
{

Tensor<float> random_tensor(std::vector<int> shape, std::mt19937_64 & rng)
{
  Tensor<float> t(std::move(shape));
  std::normal_distribution<float> n(0.0f, 1.0f);
  for (auto & v : t.data) v = n(rng);
  return t;
}

void BM_Conv2dForward(benchmark::State & state)
{
  net::init_blas();
  const int c = static_cast<int>(state.range(0));
  const int hw = static_cast<int>(state.range(1));
  std::mt19937_64 rng(1);
  const auto x = random_tensor({1, c, hw, hw}, rng);
  const auto w = random_tensor({c, c, 3, 3}, rng);
  const auto b = random_tensor({c}, rng);
  for (auto _ : state) {
    net::Tape<float> tape;
    const auto y = tape.conv2d(tape.constant(x), tape.constant(w), tape.constant(b), 1, 1);
    benchmark::DoNotOptimize(tape.value(y).data.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long>(c) * c * 9 * hw * hw);
}
BENCHMARK(BM_Conv2dForward)->Args({16, 56})->Args({32, 28})->Args({64, 20})->Unit(benchmark::kMillisecond);

void BM_Conv2dBackward(benchmark::State & state)
{
  net::init_blas();
  const int c = static_cast<int>(state.range(0));
  const int hw = static_cast<int>(state.range(1));
  std::mt19937_64 rng(2);
  net::ParameterSet<float> params;
  auto & w = params.add("w", {c, c, 3, 3});
  auto & b = params.add("b", {c});
  w.value = random_tensor({c, c, 3, 3}, rng);
  const auto x = random_tensor({1, c, hw, hw}, rng);
  const auto seed = random_tensor({1, c, hw, hw}, rng);
  for (auto _ : state) {
    net::Tape<float> tape;
    const auto y = tape.conv2d(tape.constant(x), tape.parameter(w), tape.parameter(b), 1, 1);
    tape.backward(y, seed);
    benchmark::DoNotOptimize(w.grad.data.data());
  }
}
BENCHMARK(BM_Conv2dBackward)->Args({16, 56})->Args({32, 28})->Unit(benchmark::kMillisecond);

void BM_RotatedIou(benchmark::State & state)
{
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> pos(-3.0, 3.0), size(1.0, 5.0), ang(-3.14, 3.14);
  std::vector<geom::OrientedBox2D> boxes;
  for (int i = 0; i < 1024; ++i) boxes.push_back({pos(rng), pos(rng), size(rng), size(rng), ang(rng)});
  std::size_t i = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(geom::rotated_iou(boxes[i % 1024], boxes[(i + 1) % 1024]));
    ++i;
  }
}
BENCHMARK(BM_RotatedIou);

void BM_RasterizePolygon(benchmark::State & state)
{
  geom::GridSpec grid;
  grid.origin = {-72.0, -40.0};
  grid.resolution = 0.2;
  grid.rows = 720;
  grid.cols = 400;
  const double r = static_cast<double>(state.range(0));
  geom::Polygon poly;
  for (int k = 0; k < 12; ++k) {
    const double a = 2.0 * 3.141592653589793 * k / 12.0;
    poly.vertices.push_back({r * std::cos(a), (k % 2 ? 0.6 : 1.0) * r * std::sin(a)});
  }
  for (auto _ : state) benchmark::DoNotOptimize(geom::rasterize_polygon(poly, grid));
}
BENCHMARK(BM_RasterizePolygon)->Arg(5)->Arg(20)->Arg(40)->Unit(benchmark::kMicrosecond);

void BM_VoxelizeSweeps(benchmark::State & state)
{
  const auto s = scene::generate_scenario(scene::GeneratorConfig{}, 4);
  auto cfg = pipeline::toy_config();
  const int frame = 20;
  const auto span = std::span<const scene::Sweep>(s.sweeps.data() + frame - cfg.voxel.t_past + 1, static_cast<std::size_t>(cfg.voxel.t_past));
  std::size_t points = 0;
  for (const auto & sw : span) points += sw.points.size();
  for (auto _ : state) {
    benchmark::DoNotOptimize(encoder::voxelize_sweeps(span, s.sweeps[frame].ego_pose, cfg.voxel).data.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long>(points));
}
BENCHMARK(BM_VoxelizeSweeps)->Unit(benchmark::kMillisecond);

void BM_RasterizeMap(benchmark::State & state)
{
  const auto s = scene::generate_scenario(scene::GeneratorConfig{}, 4);
  const auto cfg = pipeline::toy_config();
  for (auto _ : state) {
    benchmark::DoNotOptimize(encoder::rasterize_map(s.map, 20, cfg.voxel, s.sweeps[20].ego_pose).data.data());
  }
}
BENCHMARK(BM_RasterizeMap)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
