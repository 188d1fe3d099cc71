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

#include "bevintent/tensor.hpp"

#include <bit>
#include <cstring>
#include <sstream>

#include "bevintent/errors.hpp"
#include "bevintent/kvfile.hpp"

static_assert(std::endian::native == std::endian::little, "tensor dumps assume a little-endian host");

namespace bevintent
{

namespace
{

template <typename T>
constexpr const char * dtype_name();
template <>
constexpr const char * dtype_name<std::uint8_t>()
{
  return "u8";
}
template <>
constexpr const char * dtype_name<std::int8_t>()
{
  return "i8";
}
template <>
constexpr const char * dtype_name<float>()
{
  return "f32";
}
template <>
constexpr const char * dtype_name<double>()
{
  return "f64";
}

}  // namespace

template <typename T>
std::string encode_tensor(const Tensor<T> & t)
{
  std::string out = "BEVT v1 " + std::string(dtype_name<T>()) + " " + std::to_string(t.shape.size());
  for (int d : t.shape) out += " " + std::to_string(d);
  out += "\n";
  const auto header = out.size();
  out.resize(header + t.data.size() * sizeof(T));
  if (!t.data.empty()) std::memcpy(out.data() + header, t.data.data(), t.data.size() * sizeof(T));
  return out;
}

template <typename T>
Tensor<T> decode_tensor(const std::string & bytes, const std::string & source)
{
  const auto nl = bytes.find('\n');
  if (nl == std::string::npos) throw ParseError(source, "missing tensor header line");
  std::istringstream header(bytes.substr(0, nl));
  std::string magic, version, dtype;
  std::size_t ndim = 0;
  header >> magic >> version >> dtype >> ndim;
  if (!header || magic != "BEVT") throw ParseError(source, "not a BEVT tensor file");
  if (version != "v1") throw VersionError(source + ": unsupported tensor version '" + version + "'");
  if (dtype != dtype_name<T>()) {
    throw ParseError(source, "dtype is '" + dtype + "', expected '" + dtype_name<T>() + "'");
  }
  Tensor<T> t;
  for (std::size_t i = 0; i < ndim; ++i) {
    int d = -1;
    header >> d;
    if (!header || d < 0) throw ParseError(source, "bad dimension " + std::to_string(i));
    t.shape.push_back(d);
  }
  const std::size_t n = Tensor<T>::element_count(t.shape);
  if (bytes.size() - nl - 1 != n * sizeof(T)) {
    throw ParseError(
      source, "payload has " + std::to_string(bytes.size() - nl - 1) + " bytes, header implies " +
                std::to_string(n * sizeof(T)));
  }
  t.data.resize(n);
  if (n) std::memcpy(t.data.data(), bytes.data() + nl + 1, n * sizeof(T));
  return t;
}

template <typename T>
void write_tensor(const std::filesystem::path & path, const Tensor<T> & t)
{
  write_text_file(path, encode_tensor(t));
}

template <typename T>
Tensor<T> read_tensor(const std::filesystem::path & path)
{
  return decode_tensor<T>(read_text_file(path), path.string());
}

#define BEVINTENT_TENSOR_INSTANTIATE(T)                                             \
  template std::string encode_tensor<T>(const Tensor<T> &);                        \
  template Tensor<T> decode_tensor<T>(const std::string &, const std::string &);   \
  template void write_tensor<T>(const std::filesystem::path &, const Tensor<T> &); \
  template Tensor<T> read_tensor<T>(const std::filesystem::path &);

BEVINTENT_TENSOR_INSTANTIATE(std::uint8_t)
BEVINTENT_TENSOR_INSTANTIATE(std::int8_t)
BEVINTENT_TENSOR_INSTANTIATE(float)
BEVINTENT_TENSOR_INSTANTIATE(double)

#undef BEVINTENT_TENSOR_INSTANTIATE

}  // namespace bevintent
