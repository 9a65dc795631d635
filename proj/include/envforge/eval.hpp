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
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "envforge/agent.hpp"
#include "envforge/policy.hpp"
#include "envforge/sandbox.hpp"
#include "envforge/sim_sandbox.hpp"

namespace envforge {

struct BenchEntry {
  std::string full_name;  // owner/repo
  std::string sha;
  std::optional<std::filesystem::path> local_path;  // nullopt: clone from GitHub

  friend bool operator==(const BenchEntry&, const BenchEntry&) = default;
};

// JSON lines {"full_name", "sha", "source": "remote" | path}. Relative paths
// resolve against `base_dir`. Throws Error(parse_error) naming the line.
std::vector<BenchEntry> parse_bench(std::string_view text, const std::filesystem::path& base_dir);
std::vector<BenchEntry> load_bench(const std::filesystem::path& path);

enum class FailureCategory { hardware, missing_token, repo_defect, install_timeout, runtest_timeout, other };

std::string_view to_string(FailureCategory category);

// Rule-based reading of build and test logs.
FailureCategory categorize_failure(std::string_view evidence, bool last_step_was_test);

struct BuildReport {
  BenchEntry entry;
  std::string outcome;  // build-phase outcome
  std::string trace_path;
  std::optional<std::string> dockerfile_path;
  bool dockerfile_built = false;
  bool tests_ran = false;
  double wall_seconds = 0;
  std::optional<FailureCategory> failure_category;
};

struct AggregateReport {
  std::size_t n = 0;
  std::optional<double> dgsr;
  std::optional<double> ebsr;
  std::vector<std::size_t> time_histogram;  // 10-minute buckets of wall_seconds
};

inline constexpr double kHistogramBucketSeconds = 600;

AggregateReport score(const std::vector<BuildReport>& reports);

struct EvalOptions {
  Backend backend = Backend::sim;
  int jobs = 0;  // 0: min(4, cores)
  std::filesystem::path out_dir = "envforge-eval";
  BuildBudget budget;
  bool rollback_enabled = true;
  // "auto" (the fixture's envforge-actions.json, else llm), "llm" or "scripted:PATH".
  std::string policy = "auto";
  // Overrides the fixture's envforge-sim.json.
  std::optional<std::filesystem::path> sim_config;
};

struct EvalResult {
  std::vector<BuildReport> reports;
  AggregateReport aggregate;
};

// Loads the sim scenario for a fixture: the override, else
// <fixture>/envforge-sim.json. Throws Error(file_missing).
sim::Scenario scenario_for(const BenchEntry& entry, const std::optional<std::filesystem::path>& override_path);

std::unique_ptr<Policy> make_policy(std::string_view spec, const std::optional<std::filesystem::path>& fixture);

// Build, synthesize and verify one entry, writing into `out_dir`.
BuildReport evaluate_entry(const BenchEntry& entry, const EvalOptions& options,
                           const std::filesystem::path& out_dir);

EvalResult run_eval(const std::vector<BenchEntry>& entries, const EvalOptions& options);

// {"entries": [...], "aggregate": {...}}
std::string report_json(const EvalResult& result);

}  // namespace envforge
