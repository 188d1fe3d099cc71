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

#ifndef BEVINTENT_ERRORS_HPP_
#define BEVINTENT_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace bevintent
{

/// Invalid configuration or shape mismatch detected before any work starts.
class ConfigError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

/// Malformed input file. `where` carries a line number or field path.
class ParseError : public std::runtime_error
{
public:
  ParseError(const std::string & where, const std::string & what)
  : std::runtime_error(where + ": " + what), where_(where)
  {
  }
  const std::string & where() const noexcept { return where_; }

private:
  std::string where_;
};

class VersionError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

/// The synthetic generator could not satisfy its configuration.
class GenerationError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

/// A regression vector could not be turned back into a box.
class DecodeError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

/// Non-finite values during optimization.
class TrainingError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

}  // namespace bevintent

#endif  // BEVINTENT_ERRORS_HPP_
