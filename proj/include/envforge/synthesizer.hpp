// Copyright 2026 The envforge Authors
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

#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "envforge/trace.hpp"

namespace envforge {

enum class Keyword { from, env, copy, run };

std::string_view to_string(Keyword keyword);

struct DockerfileStatement {
  Keyword keyword = Keyword::run;
  std::string payload;
  std::optional<int> origin_turn;

  std::string line() const;
  friend bool operator==(const DockerfileStatement&, const DockerfileStatement&) = default;
};

// A file written next to the Dockerfile; `path` is relative to it.
struct FileAsset {
  std::string path;
  std::string content;
  friend bool operator==(const FileAsset&, const FileAsset&) = default;
};

// A host directory copied next to the Dockerfile.
struct DirectoryAsset {
  std::string path;
  std::filesystem::path source;
  friend bool operator==(const DirectoryAsset&, const DirectoryAsset&) = default;
};

struct DockerfileProgram {
  std::vector<DockerfileStatement> statements;
  std::map<std::pair<std::string, std::string>, std::string> pin_ledger;  // (tool, package)
  std::vector<FileAsset> files;
  std::vector<DirectoryAsset> directories;
};

inline constexpr std::string_view kAssetsDir = "assets";

struct SynthesisOptions {
  // Also compile traces whose outcome is not verified.
  bool allow_unverified = false;
  // Replace the repository clone with a COPY of this local checkout.
  std::optional<std::filesystem::path> copy_repo;
};

// Records from the last base image change (inclusive) onward.
std::vector<CommandRecord> supersession_filter(const std::vector<CommandRecord>& records);

// Throws Error(unverified_trace) or Error(missing_pin).
DockerfileProgram synthesize(const Trace& trace, const SynthesisOptions& options = {});

std::string render(const std::vector<DockerfileStatement>& statements);
std::string render(const DockerfileProgram& program);

// Reads back the FROM / ENV / COPY / RUN subset this module emits.
// Throws Error(parse_error) naming the line.
std::vector<DockerfileStatement> parse_dockerfile(std::string_view text);

// KEY="VALUE" with \, ", $ and ` escaped.
std::string env_payload(std::string_view key, std::string_view value);
std::pair<std::string, std::string> parse_env_payload(std::string_view payload);

// Writes Dockerfile plus assets/ into `dir`.
void write_program(const DockerfileProgram& program, const std::filesystem::path& dir);

}  // namespace envforge
