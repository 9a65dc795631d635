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
#include <filesystem>
#include <memory>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "envforge/agent.hpp"
#include "envforge/sim_sandbox.hpp"
#include "envforge/synthesizer.hpp"
#include "envforge/trace.hpp"

namespace envforge::testing {

std::filesystem::path source_path(std::string_view relative);
std::string read_file(const std::filesystem::path& path);

// Thin helpers over a seeded engine; every generator takes one of these.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  int between(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(engine_); }
  bool chance(double p) { return std::bernoulli_distribution(p)(engine_); }
  template <typename T>
  const T& pick(const std::vector<T>& items) {
    return items[static_cast<std::size_t>(between(0, static_cast<int>(items.size()) - 1))];
  }
  std::uint64_t next() { return engine_(); }

 private:
  std::mt19937_64 engine_;
};

CommandRecord record(int turn, std::string raw, CommandKind kind, std::string cwd = "/",
                     int rc = 0);

// Build of example/project: clone, a safe cat, an ok RUN, a failed install
// rolled back, a switch to python:3.11 with re-clone, pytest, a code edit
// (turn 9), an install of B>=1.0,<2.0 resolving to 1.5.1 (turn 11), an
// export (turn 13) and a test run.
Trace appendix_trace();

// Scenario the appendix trace was recorded against.
std::shared_ptr<sim::Scenario> appendix_scenario();

// One row of the pollution table shipped under fixtures/pollution.
struct PollutionRow {
  std::string package;
  std::vector<std::string> side_installs;
  int count = 0;
};
std::vector<PollutionRow> pollution_table();

// Registry and repo every randomized session draws from.
std::shared_ptr<sim::Scenario> property_scenario();

struct PropertyCase {
  std::uint64_t seed = 0;
  RepoSource source;
  std::vector<Action> actions;
  int scripted_failures = 0;
  int polluting_failures = 0;
  int base_image_changes = 0;
  int exports = 0;
};

// Random command mix: roughly 10% scripted failures, 30% of them polluting,
// 0-2 base image changes, 0-3 exports drawn from a small key pool.
PropertyCase make_property_case(std::uint64_t seed);

struct SessionRun {
  Trace trace;
  sim::State build_state;
};

SessionRun run_session(const std::shared_ptr<const sim::Scenario>& scenario, const RepoSource& source,
                       const std::vector<Action>& actions, bool rollback_enabled = true);

struct ReplayCheck {
  bool built = false;
  bool equivalent = false;
  std::string difference;  // first divergence, or the replay log on failure
  std::string dockerfile;
};

// Synthesizes the trace, replays it on a fresh sim sandbox and compares the
// final state against `build_state`.
ReplayCheck check_replay(const std::shared_ptr<const sim::Scenario>& scenario, const SessionRun& run);

}  // namespace envforge::testing
