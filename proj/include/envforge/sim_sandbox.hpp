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

#include <atomic>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "envforge/sandbox.hpp"

// Deterministic in-memory backend. It interprets a small shell dialect
// (file utilities, pip, apt-get, git clone, pytest, python) against a
// scripted package registry and test profile, so that build sessions,
// rollback and Dockerfile replay can be checked exactly.
namespace envforge::sim {

enum class Behavior { ok, fail_clean, fail_polluting };

struct RegistryEntry {
  std::string tool = "pip";
  Behavior behavior = Behavior::ok;
  std::vector<std::string> versions;       // ascending; the last is "latest"
  std::vector<std::string> side_installs;  // "name" or "name==version"; dependencies, or debris on fail_polluting
  std::string requires_python;             // constraint on the image's X.Y
  std::int64_t install_ms = 1500;
  std::string error;                       // stderr for failing installs
};

class Registry {
 public:
  // {"name": {"tool": "pip", "behavior": "ok", "version": "1.0",
  //           "versions": [...], "side_installs": [...],
  //           "requires_python": ">=3.11", "install_ms": 1500, "error": "..."}}
  static Registry parse(std::string_view json_text);

  void add(const std::string& name, RegistryEntry entry);
  const RegistryEntry* find(std::string_view tool, std::string_view name) const;
  std::size_t size() const { return entries_.size(); }

 private:
  std::map<std::pair<std::string, std::string>, RegistryEntry, std::less<>> entries_;
};

struct TestProfile {
  enum class Outcome { runs_pass, runs_fail, collect_error, no_tests };

  Outcome outcome = Outcome::runs_pass;
  std::vector<std::string> requires_packages;  // pip packages the tests import
  std::string requires_python;                 // constraint on X.Y
  std::map<std::string, std::string> requires_env;
  int test_count = 3;
  std::int64_t duration_ms = 2000;
  std::string collect_error;  // log text for Outcome::collect_error
};

std::optional<TestProfile::Outcome> outcome_from_string(std::string_view text);

struct Scenario {
  Registry registry;
  TestProfile test_profile;
  // full_name -> (relative path -> content), served by "git clone"
  std::map<std::string, std::map<std::string, std::string>> repos;
  // Registry seen when a Dockerfile is replayed later, if it drifted.
  std::optional<Registry> replay_registry;

  // {"registry": {...}, "test_profile": {...}, "repos": {...},
  //  "replay_registry": {...}}
  static Scenario parse(std::string_view json_text);
  static Scenario load(const std::filesystem::path& path);

  Scenario for_replay() const;
};

// Observable environment state.
struct State {
  BaseImage base_image;
  std::map<std::string, std::string> files;
  std::set<std::string> dirs;
  std::map<std::string, std::string> env;
  std::string cwd = "/";
  std::map<std::string, std::map<std::string, std::string>> installed;

  // The state with nothing in it.
  static State empty();
  // The state a fresh container of `image` starts in.
  static State fresh(const BaseImage& image);

  friend bool operator==(const State&, const State&) = default;

  bool equivalent_ignoring_cwd(const State& other) const;
  // First observed difference, for diagnostics; empty when equivalent.
  std::string describe_difference(const State& other) const;
};

class SimSandbox final : public Sandbox {
 public:
  // Throws Error(image_unavailable) for images without a python:X.Y tag.
  SimSandbox(std::shared_ptr<const Scenario> scenario, const BaseImage& image);

  const SandboxHandle& handle() const override { return handle_; }
  ExecResult exec(const Command& command) override;
  SnapshotId snapshot(bool pinned = false) override;
  void rollback(const SnapshotId& id) override;
  void reset_with_base_image(const BaseImage& image) override;
  std::map<std::string, std::string> installed_versions(std::string_view tool) override;
  void put_file(std::string_view path, std::string_view content) override;
  std::optional<std::string> read_file(std::string_view path) override;
  void set_env(std::string_view key, std::string_view value) override;
  std::optional<std::string> env_value(std::string_view key) const override;
  void set_cwd(std::string_view path) override;
  void set_timeout(std::chrono::milliseconds timeout) override { timeout_ = timeout; }
  std::int64_t elapsed_ms() const override { return elapsed_ms_; }

  const State& state() const noexcept { return state_; }
  const Scenario& scenario() const noexcept { return *scenario_; }
  std::size_t retained_snapshots() const noexcept { return snapshots_.size(); }

 private:
  friend class Interpreter;

  std::shared_ptr<const Scenario> scenario_;
  SandboxHandle handle_;
  State state_;
  std::map<std::string, State> snapshots_;
  std::set<std::string> pinned_;
  std::optional<std::string> latest_unpinned_;
  int snapshot_counter_ = 0;
  std::chrono::milliseconds timeout_ = kDefaultCommandTimeout;
  std::int64_t elapsed_ms_ = 0;
};

class SimFactory final : public SandboxFactory {
 public:
  explicit SimFactory(std::shared_ptr<const Scenario> scenario) : scenario_(std::move(scenario)) {}
  Backend backend() const override { return Backend::sim; }
  std::unique_ptr<Sandbox> start(const BaseImage& image) override {
    return std::make_unique<SimSandbox>(scenario_, image);
  }
  const std::shared_ptr<const Scenario>& scenario() const { return scenario_; }

 private:
  std::shared_ptr<const Scenario> scenario_;
};

}  // namespace envforge::sim
