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

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "envforge/shell.hpp"

namespace envforge {

inline constexpr std::string_view kDefaultBaseImage = "python:3.10";
inline constexpr std::string_view kTraceSchemaVersion = "1";

struct BaseImage {
  std::string name;
  std::optional<std::string> python_version;  // "X.Y" for python:X.Y[...] images

  BaseImage() : BaseImage(std::string(kDefaultBaseImage)) {}
  explicit BaseImage(std::string image_name);

  static BaseImage python(std::string_view version) {
    return BaseImage("python:" + std::string(version));
  }

  friend bool operator==(const BaseImage& a, const BaseImage& b) { return a.name == b.name; }
};

// One shell line as issued by the policy. Construction tokenizes the line and
// throws Error(unparsable_line) for empty or malformed input.
class Command {
 public:
  explicit Command(std::string raw);

  const std::string& raw() const noexcept { return raw_; }
  const std::string& argv0() const noexcept { return argv0_; }
  bool redirects_output() const noexcept { return redirects_output_; }
  const shell::CommandList& parsed() const noexcept { return parsed_; }

  friend bool operator==(const Command& a, const Command& b) { return a.raw_ == b.raw_; }

 private:
  std::string raw_;
  std::string argv0_;
  bool redirects_output_ = false;
  shell::CommandList parsed_;
};

enum class CommandKind { safe, mutating, base_image_change, code_edit, export_env, install };

std::string_view to_string(CommandKind kind);
std::optional<CommandKind> command_kind_from_string(std::string_view text);

struct SnapshotId {
  std::string id;
  friend bool operator==(const SnapshotId&, const SnapshotId&) = default;
};

struct InstalledPackage {
  std::string tool;  // "pip" or "apt"
  std::string package;
  std::string version;
  friend bool operator==(const InstalledPackage&, const InstalledPackage&) = default;
};

struct CommandRecord {
  int turn = 1;
  Command command;
  std::string cwd = "/";
  int return_code = 0;
  CommandKind classification = CommandKind::mutating;
  std::string stdout_excerpt;
  std::string stderr_excerpt;
  std::optional<SnapshotId> snapshot_before;
  bool rolled_back = false;
  std::vector<std::pair<std::string, std::string>> env_delta;
  std::vector<InstalledPackage> installed;
  // Optional extensions; ignored by synthesis except `patch` on code edits.
  std::optional<std::string> thought;
  std::optional<std::string> patch;

  explicit CommandRecord(Command c) : command(std::move(c)) {}

  friend bool operator==(const CommandRecord&, const CommandRecord&) = default;
};

enum class Outcome { verified, budget_exhausted, aborted };

std::string_view to_string(Outcome outcome);

struct RepoRef {
  std::string full_name;
  std::string sha;
  friend bool operator==(const RepoRef&, const RepoRef&) = default;
};

struct Trace {
  RepoRef repo;
  BaseImage initial_base_image;
  std::vector<CommandRecord> records;
  BaseImage final_base_image;
  Outcome outcome = Outcome::aborted;

  // Index of the last base-image-change record, if any.
  std::optional<std::size_t> last_base_image_change() const;
  // True for records that a later base image change invalidated.
  bool superseded(std::size_t index) const;

  // Throws Error(invariant_violation) naming the first broken invariant.
  void validate() const;

  friend bool operator==(const Trace&, const Trace&) = default;
};

bool is_test_runner(std::string_view argv0);

// Image selected by a base-image-change record ("change_python_version X.Y"
// or "clear_configuration"); nullopt for any other command.
std::optional<BaseImage> target_image(const Command& command);

std::string serialize_trace(const Trace& trace);
Trace parse_trace(std::string_view bytes);

// Append-as-you-go trace file: the header is written on construction, one
// line per record, and the footer by finish().
class TraceWriter {
 public:
  TraceWriter(std::string path, const RepoRef& repo, const BaseImage& initial);
  void append(const CommandRecord& record);
  void finish(const BaseImage& final_image, Outcome outcome);

 private:
  void write_line(const std::string& line);
  std::string path_;
};

}  // namespace envforge
