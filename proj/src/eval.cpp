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

#include "envforge/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <sstream>
#include <thread>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "envforge/container_sandbox.hpp"
#include "envforge/error.hpp"
#include "envforge/replay.hpp"
#include "envforge/synthesizer.hpp"
#include "json.hpp"

namespace envforge {

namespace {

using ojson = nlohmann::ordered_json;

std::string lower(std::string_view text) {
  std::string out(text);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

bool contains_any(const std::string& haystack, std::initializer_list<std::string_view> needles) {
  for (auto n : needles) {
    if (haystack.find(n) != std::string::npos) return true;
  }
  return false;
}

std::string entry_dir_name(const BenchEntry& entry, std::size_t index) {
  std::string name = entry.full_name;
  std::replace(name.begin(), name.end(), '/', '_');
  return fmt::format("{:03}-{}", index + 1, name);
}

ojson optional_number(const std::optional<double>& value) {
  return value ? ojson(*value) : ojson(nullptr);
}

}  // namespace

std::vector<BenchEntry> parse_bench(std::string_view text, const std::filesystem::path& base_dir) {
  std::vector<BenchEntry> entries;
  std::istringstream lines{std::string(text)};
  int line_no = 0;
  for (std::string line; std::getline(lines, line);) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto j = ojson::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("full_name")) {
      throw Error(ErrorCode::parse_error, fmt::format("line {}: expected {{\"full_name\", \"sha\", \"source\"}}", line_no));
    }
    BenchEntry entry;
    try {
      entry.full_name = j.at("full_name").get<std::string>();
      entry.sha = j.value("sha", "");
      auto source = j.value("source", "remote");
      if (source != "remote") {
        std::filesystem::path p(source);
        entry.local_path = p.is_absolute() ? p : (base_dir / p).lexically_normal();
      }
    } catch (const ojson::exception& e) {
      throw Error(ErrorCode::parse_error, fmt::format("line {}: {}", line_no, e.what()));
    }
    if (entry.full_name.find('/') == std::string::npos) {
      throw Error(ErrorCode::parse_error, fmt::format("line {}: full_name must be owner/repo", line_no));
    }
    entries.push_back(std::move(entry));
  }
  return entries;
}

std::vector<BenchEntry> load_bench(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::file_missing, path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_bench(buffer.str(), path.parent_path());
}

std::string_view to_string(FailureCategory category) {
  switch (category) {
    case FailureCategory::hardware: return "hardware";
    case FailureCategory::missing_token: return "missing-token";
    case FailureCategory::repo_defect: return "repo-defect";
    case FailureCategory::install_timeout: return "install-timeout";
    case FailureCategory::runtest_timeout: return "runtest-timeout";
    case FailureCategory::other: return "other";
  }
  return "other";
}

FailureCategory categorize_failure(std::string_view evidence, bool last_step_was_test) {
  auto text = lower(evidence);
  if (contains_any(text, {"timed out", "timeout"})) {
    return last_step_was_test ? FailureCategory::runtest_timeout : FailureCategory::install_timeout;
  }
  if (contains_any(text, {"cuda", "nvidia", "gpu", "out of memory", "illegal instruction"})) {
    return FailureCategory::hardware;
  }
  if (contains_any(text, {"api key", "api_key", "token", "credential", "unauthorized",
                          "authentication"})) {
    return FailureCategory::missing_token;
  }
  if (contains_any(text, {"syntaxerror", "indentationerror", "repository not found",
                          "not found\nfatal", "does not appear to be a python project",
                          "repo-unavailable"})) {
    return FailureCategory::repo_defect;
  }
  return FailureCategory::other;
}

AggregateReport score(const std::vector<BuildReport>& reports) {
  AggregateReport aggregate;
  aggregate.n = reports.size();
  if (reports.empty()) return aggregate;
  std::size_t built = 0, ran = 0;
  for (const auto& r : reports) {
    built += r.dockerfile_built ? 1 : 0;
    ran += r.tests_ran ? 1 : 0;
    auto bucket = static_cast<std::size_t>(std::max(0.0, std::floor(r.wall_seconds / kHistogramBucketSeconds)));
    if (aggregate.time_histogram.size() <= bucket) aggregate.time_histogram.resize(bucket + 1, 0);
    ++aggregate.time_histogram[bucket];
  }
  aggregate.dgsr = static_cast<double>(built) / static_cast<double>(reports.size());
  aggregate.ebsr = static_cast<double>(ran) / static_cast<double>(reports.size());
  return aggregate;
}

sim::Scenario scenario_for(const BenchEntry& entry,
                           const std::optional<std::filesystem::path>& override_path) {
  if (override_path) return sim::Scenario::load(*override_path);
  if (!entry.local_path) {
    throw Error(ErrorCode::file_missing, "sim backend needs a scenario for " + entry.full_name);
  }
  return sim::Scenario::load(*entry.local_path / "envforge-sim.json");
}

std::unique_ptr<Policy> make_policy(std::string_view spec,
                                    const std::optional<std::filesystem::path>& fixture) {
  if (spec.starts_with("scripted:")) {
    return std::make_unique<ScriptedPolicy>(ScriptedPolicy::load(std::string(spec.substr(9))));
  }
  if (spec == "auto" && fixture && std::filesystem::exists(*fixture / "envforge-actions.json")) {
    return std::make_unique<ScriptedPolicy>(ScriptedPolicy::load(*fixture / "envforge-actions.json"));
  }
  if (spec == "auto" || spec == "llm") return std::make_unique<LlmPolicy>(LlmConfig::from_env());
  throw Error(ErrorCode::invalid_action, "unknown policy " + std::string(spec));
}

BuildReport evaluate_entry(const BenchEntry& entry, const EvalOptions& options,
                           const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  BuildReport report;
  report.entry = entry;
  report.trace_path = (out_dir / "trace.jsonl").string();
  std::string evidence;
  bool last_was_test = false;
  auto started = std::chrono::steady_clock::now();
  try {
    std::shared_ptr<const sim::Scenario> scenario;
    std::unique_ptr<SandboxFactory> factory;
    if (options.backend == Backend::sim) {
      scenario = std::make_shared<sim::Scenario>(scenario_for(entry, options.sim_config));
      factory = std::make_unique<sim::SimFactory>(scenario);
    } else {
      factory = std::make_unique<ContainerFactory>();
    }
    auto policy = make_policy(options.policy, entry.local_path);
    BuildOptions build;
    build.budget = options.budget;
    build.rollback_enabled = options.rollback_enabled;
    build.trace_path = report.trace_path;
    auto result = run_build_session({{entry.full_name, entry.sha}, entry.local_path}, *policy,
                                    *factory, build);
    report.outcome = std::string(to_string(result.trace.outcome));
    report.wall_seconds = static_cast<double>(result.elapsed_ms) / 1000.0;
    evidence += result.last_test_log;
    for (const auto& r : result.trace.records) {
      if (r.return_code != 0) evidence += r.stderr_excerpt + r.stdout_excerpt;
    }
    if (!result.trace.records.empty()) {
      const auto& last = result.trace.records.back();
      last_was_test = is_test_runner(last.command.argv0());
    }

    SynthesisOptions synthesis;
    synthesis.allow_unverified = true;
    auto program = synthesize(result.trace, synthesis);
    auto dockerfile_dir = out_dir / "dockerfile";
    write_program(program, dockerfile_dir);
    report.dockerfile_path = (dockerfile_dir / "Dockerfile").string();

    VerifyResult verified = options.backend == Backend::sim
                                ? verify_sim(program.statements, program_assets(program), *scenario)
                                : verify_container(dockerfile_dir);
    report.dockerfile_built = verified.dockerfile_built;
    report.tests_ran = verified.dockerfile_built && verified.tests_ran;
    evidence += verified.log;
    if (report.dockerfile_built && !report.tests_ran) last_was_test = true;
  } catch (const Error& e) {
    spdlog::warn("{}: {}", entry.full_name, e.what());
    if (report.outcome.empty()) report.outcome = std::string(to_string(Outcome::aborted));
    evidence += e.what();
    if (options.backend != Backend::sim) {
      report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    }
  }
  if (!report.tests_ran) report.failure_category = categorize_failure(evidence, last_was_test);
  return report;
}

EvalResult run_eval(const std::vector<BenchEntry>& entries, const EvalOptions& options) {
  EvalResult result;
  result.reports.resize(entries.size());
  int jobs = options.jobs > 0
                 ? options.jobs
                 : static_cast<int>(std::min(4u, std::max(1u, std::thread::hardware_concurrency())));
  jobs = std::max(1, std::min<int>(jobs, static_cast<int>(entries.size())));
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (std::size_t i = next++; i < entries.size(); i = next++) {
      result.reports[i] = evaluate_entry(entries[i], options,
                                         options.out_dir / entry_dir_name(entries[i], i));
    }
  };
  std::vector<std::thread> pool;
  for (int i = 0; i < jobs; ++i) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  result.aggregate = score(result.reports);
  return result;
}

std::string report_json(const EvalResult& result) {
  ojson entries = ojson::array();
  for (const auto& r : result.reports) {
    ojson e;
    e["full_name"] = r.entry.full_name;
    e["sha"] = r.entry.sha;
    e["source"] = r.entry.local_path ? r.entry.local_path->string() : "remote";
    e["outcome"] = r.outcome;
    e["trace_path"] = r.trace_path;
    e["dockerfile_path"] = r.dockerfile_path ? ojson(*r.dockerfile_path) : ojson(nullptr);
    e["dockerfile_built"] = r.dockerfile_built;
    e["tests_ran"] = r.tests_ran;
    e["wall_seconds"] = r.wall_seconds;
    e["failure_category"] =
        r.failure_category ? ojson(std::string(to_string(*r.failure_category))) : ojson(nullptr);
    entries.push_back(std::move(e));
  }
  ojson aggregate;
  aggregate["n"] = result.aggregate.n;
  aggregate["dgsr"] = optional_number(result.aggregate.dgsr);
  aggregate["ebsr"] = optional_number(result.aggregate.ebsr);
  aggregate["time_histogram"] = result.aggregate.time_histogram;
  ojson out;
  out["entries"] = std::move(entries);
  out["aggregate"] = std::move(aggregate);
  return out.dump(2) + "\n";
}

}  // namespace envforge
