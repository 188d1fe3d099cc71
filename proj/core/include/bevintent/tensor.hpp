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

// Dense row-major tensors and the `BEVT v1` dump format:
//   BEVT v1 <dtype> <ndim> <d0> ... <dn-1>\n<raw little-endian values>

#ifndef BEVINTENT_TENSOR_HPP_
#define BEVINTENT_TENSOR_HPP_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

namespace bevintent
{

template <typename T>
struct Tensor
{
  std::vector<int> shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> dims, T fill = T{}) : shape(std::move(dims)), data(element_count(shape), fill) {}

  static std::size_t element_count(const std::vector<int> & dims)
  {
    return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, [](std::size_t a, int d) {
      return a * static_cast<std::size_t>(d);
    });
  }

  std::size_t size() const { return data.size(); }
  int dim(std::size_t i) const { return shape.at(i); }

  /// Offset of (c, r, k) in a rank-3 tensor.
  std::size_t offset(int c, int r, int k) const
  {
    return (static_cast<std::size_t>(c) * shape[1] + r) * shape[2] + k;
  }
  T & at(int c, int r, int k) { return data[offset(c, r, k)]; }
  const T & at(int c, int r, int k) const { return data[offset(c, r, k)]; }

  friend bool operator==(const Tensor &, const Tensor &) = default;
};

/// Supported element types: uint8, int8, float, double.
template <typename T>
void write_tensor(const std::filesystem::path & path, const Tensor<T> & t);
template <typename T>
Tensor<T> read_tensor(const std::filesystem::path & path);

/// In-memory variants used by tests.
template <typename T>
std::string encode_tensor(const Tensor<T> & t);
template <typename T>
Tensor<T> decode_tensor(const std::string & bytes, const std::string & source = "<tensor>");

}  // namespace bevintent

#endif  // BEVINTENT_TENSOR_HPP_
