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

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <sstream>
#include <stdexcept>

#include "bevintent/cli/commands.hpp"
#include "bevintent/errors.hpp"
#include "bevintent/kvfile.hpp"

namespace bevintent::cli
{

namespace
{

std::vector<std::string> split_csv(const std::string & line)
{
  std::vector<std::string> out;
  std::stringstream ss(line);
  for (std::string item; std::getline(ss, item, ',');) out.push_back(item);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string header()
{
  std::string h = "path,seed,split";
  for (int a = 0; a < scene::kNumActions; ++a) {
    h += ",";
    h += scene::to_string(static_cast<scene::Action>(a));
  }
  return h;
}

}  // namespace

std::vector<const ManifestEntry *> Manifest::split(const std::string & name) const
{
  std::vector<const ManifestEntry *> out;
  for (const auto & e : entries) {
    if (name == "all" || e.split == name) out.push_back(&e);
  }
  return out;
}

std::string serialize_manifest(const Manifest & m)
{
  std::string out = header() + "\n";
  for (const auto & e : m.entries) {
    out += e.path + "," + std::to_string(e.seed) + "," + e.split;
    for (int c : e.maneuvers) out += "," + std::to_string(c);
    out += "\n";
  }
  return out;
}

Manifest parse_manifest(const std::string & text, const std::string & source)
{
  Manifest m;
  std::stringstream ss(text);
  std::string line;
  int line_no = 0;
  const auto where = [&] { return source + ":" + std::to_string(line_no); };
  if (!std::getline(ss, line)) throw ParseError(source + ":1", "empty manifest");
  ++line_no;
  if (line != header()) throw VersionError(where() + ": unexpected manifest header '" + line + "'");
  while (std::getline(ss, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != 3 + static_cast<std::size_t>(scene::kNumActions)) {
      throw ParseError(where(), "expected " + std::to_string(3 + scene::kNumActions) + " fields");
    }
    ManifestEntry e;
    e.path = cells[0];
    e.split = cells[2];
    if (e.path.empty()) throw ParseError(where(), "empty path");
    try {
      e.seed = to_u64("seed", cells[1]);
      for (int a = 0; a < scene::kNumActions; ++a) {
        e.maneuvers[static_cast<std::size_t>(a)] =
          static_cast<int>(to_int(std::string(scene::to_string(static_cast<scene::Action>(a))), cells[3 + static_cast<std::size_t>(a)]));
      }
    } catch (const ConfigError & err) {
      throw ParseError(where(), err.what());
    }
    m.entries.push_back(std::move(e));
  }
  return m;
}

Manifest load_manifest(const std::filesystem::path & path)
{
  return parse_manifest(read_text_file(path), path.string());
}

OutputLock::OutputLock(const std::filesystem::path & dir)
{
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw ConfigError("cannot create output directory " + dir.string() + ": " + ec.message());
  path_ = dir / kLockName;
  const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0) {
    const int err = errno;
    if (err == EEXIST) {
      throw std::runtime_error(
        dir.string() + " is locked by another run (remove " + path_.string() + " if that run is gone)");
    }
    throw ConfigError("output directory " + dir.string() + " is not writable: " + std::strerror(err));
  }
  const std::string pid = std::to_string(::getpid()) + "\n";
  const auto written = ::write(fd, pid.data(), pid.size());
  ::close(fd);
  if (written != static_cast<ssize_t>(pid.size())) {
    std::filesystem::remove(path_, ec);
    throw ConfigError("output directory " + dir.string() + " is not writable");
  }
}

OutputLock::~OutputLock()
{
  std::error_code ec;
  std::filesystem::remove(path_, ec);
}

}  // namespace bevintent::cli
