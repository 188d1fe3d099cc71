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

// `key = value` configuration files. Blank lines and `#` comments are
// ignored; keys may repeat only if the caller allows it.

#ifndef BEVINTENT_KVFILE_HPP_
#define BEVINTENT_KVFILE_HPP_

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace bevintent
{

struct KeyValue
{
  std::string key;
  std::string value;
  int line{0};
};

/// Throws ParseError("<source>:<line>", ...) on malformed lines or duplicates.
std::vector<KeyValue> parse_key_values(std::string_view text, const std::string & source);
std::vector<KeyValue> read_key_values(const std::filesystem::path & path);

/// Typed conversions; throw ConfigError naming `key` on failure.
double to_double(const std::string & key, const std::string & value);
long long to_int(const std::string & key, const std::string & value);
std::uint64_t to_u64(const std::string & key, const std::string & value);
bool to_bool(const std::string & key, const std::string & value);
/// Comma-separated list of doubles.
std::vector<double> to_doubles(const std::string & key, const std::string & value);

std::string read_text_file(const std::filesystem::path & path);
/// Writes via a temporary file and rename so readers never see partial data.
void write_text_file(const std::filesystem::path & path, std::string_view text);

}  // namespace bevintent

#endif  // BEVINTENT_KVFILE_HPP_
