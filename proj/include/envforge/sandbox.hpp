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

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "envforge/text.hpp"
#include "envforge/trace.hpp"

namespace envforge {

enum class Backend { container, sim };

std::string_view to_string(Backend backend);

struct SandboxHandle {
  Backend backend = Backend::sim;
  BaseImage base_image;
  std::string cwd = "/";
  std::string session_id;
};

struct ExecResult {
  int return_code = 0;  // 0-255
  std::string stdout_text;
  std::string stderr_text;
  std::int64_t duration_ms = 0;
};

inline constexpr int kTimeoutReturnCode = 124;
inline constexpr std::chrono::seconds kDefaultCommandTimeout{600};

// An isolated environment that runs shell lines and can be snapshotted.
//
// Every exec is a fresh shell, so working directory and exported variables
// are tracked by the sandbox itself: a bare "cd PATH" that succeeds moves
// handle().cwd, and a bare "export K=V ..." line persists its variables.
// One handle is used by one thread at a time.
class Sandbox {
 public:
  virtual ~Sandbox() = default;

  virtual const SandboxHandle& handle() const = 0;

  // Runs the line in handle().cwd. A command exceeding the timeout returns
  // kTimeoutReturnCode instead of throwing.
  virtual ExecResult exec(const Command& command) = 0;

  // Captures the full state. Only the newest unpinned snapshot is retained;
  // taking another discards the previous one unless it was pinned.
  virtual SnapshotId snapshot(bool pinned = false) = 0;
  virtual void rollback(const SnapshotId& id) = 0;

  // Replaces the environment with a fresh one from `image` and discards all
  // snapshots.
  virtual void reset_with_base_image(const BaseImage& image) = 0;

  // Package -> version for "pip" or "apt"; pip names are normalized.
  virtual std::map<std::string, std::string> installed_versions(std::string_view tool) = 0;

  // Writes a file, creating parent directories.
  virtual void put_file(std::string_view path, std::string_view content) = 0;
  virtual std::optional<std::string> read_file(std::string_view path) = 0;

  virtual void set_env(std::string_view key, std::string_view value) = 0;
  virtual std::optional<std::string> env_value(std::string_view key) const = 0;
  virtual void set_cwd(std::string_view path) = 0;

  virtual void set_timeout(std::chrono::milliseconds timeout) = 0;

  // Milliseconds spent executing commands. Simulated time on the sim backend.
  virtual std::int64_t elapsed_ms() const = 0;
};

class SandboxFactory {
 public:
  virtual ~SandboxFactory() = default;
  virtual Backend backend() const = 0;
  // Throws Error(image_unavailable) or Error(backend_unavailable).
  virtual std::unique_ptr<Sandbox> start(const BaseImage& image) = 0;
};

struct GuardOptions {
  int turn = 1;
  bool rollback_enabled = true;
  // Files written after the snapshot and before execution (code edits).
  std::vector<std::pair<std::string, std::string>> uploads;
  // Overrides classify(command).
  std::optional<CommandKind> kind;
  // Executes something other than `command` itself under the same guard.
  std::function<ExecResult(Sandbox&)> run;
  std::size_t head_limit = kDefaultHeadLimit;
  std::size_t tail_limit = kDefaultTailLimit;
};

struct GuardedResult {
  ExecResult result;
  CommandRecord record;
};

// Safe commands run without a snapshot. Everything else is snapshotted
// first and rolled back if it returns non-zero. The returned record holds
// truncated output, the environment delta of exports and the packages an
// install touched.
GuardedResult exec_guarded(Sandbox& sandbox, const Command& command,
                           const GuardOptions& options = {});

// Joins `path` onto `cwd` and folds "." / ".." segments.
std::string resolve_path(std::string_view cwd, std::string_view path);

}  // namespace envforge
