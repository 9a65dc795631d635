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

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "envforge/classify.hpp"
#include "envforge/container_sandbox.hpp"
#include "envforge/error.hpp"
#include "envforge/eval.hpp"
#include "envforge/replay.hpp"
#include "envforge/sim_sandbox.hpp"
#include "envforge/synthesizer.hpp"

namespace fs = std::filesystem;
using namespace envforge;

namespace {

constexpr int kOk = 0;
constexpr int kFailure = 1;

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::file_missing, path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

Backend parse_backend(const std::string& name) {
  return name == "sim" ? Backend::sim : Backend::container;
}

struct BuildArgs {
  std::string repo;
  std::string remote;
  std::string sha = "HEAD";
  std::string policy = "auto";
  std::string backend = "docker";
  std::string sim_config;
  std::string out = "envforge-out";
  int turns = BuildBudget{}.max_turns;
  int seconds = BuildBudget{}.max_wall_seconds;
  bool no_rollback = false;
  bool copy_repo = false;
  bool allow_unverified = false;
};

int cmd_build(const BuildArgs& a) {
  RepoSource source;
  std::optional<fs::path> fixture;
  if (!a.repo.empty()) {
    fixture = fs::absolute(a.repo).lexically_normal();
    auto name = fixture->filename().empty() ? fixture->parent_path().filename() : fixture->filename();
    source = {{"local/" + name.string(), a.sha}, fixture};
  } else {
    source = {{a.remote, a.sha}, std::nullopt};
  }

  std::shared_ptr<const sim::Scenario> scenario;
  std::unique_ptr<SandboxFactory> factory;
  if (parse_backend(a.backend) == Backend::sim) {
    BenchEntry entry{source.ref.full_name, source.ref.sha, fixture};
    std::optional<fs::path> override_path;
    if (!a.sim_config.empty()) override_path = a.sim_config;
    scenario = std::make_shared<sim::Scenario>(scenario_for(entry, override_path));
    factory = std::make_unique<sim::SimFactory>(scenario);
  } else {
    factory = std::make_unique<ContainerFactory>();
  }
  auto policy = make_policy(a.policy, fixture);

  fs::create_directories(a.out);
  BuildOptions options;
  options.budget = {a.turns, a.seconds, BuildBudget{}.max_base_image_changes};
  options.budget.validate();
  options.rollback_enabled = !a.no_rollback;
  options.trace_path = fs::path(a.out) / "trace.jsonl";
  auto result = run_build_session(source, *policy, *factory, options);
  std::cout << fmt::format("outcome: {}\ntrace: {}\n", to_string(result.trace.outcome),
                           options.trace_path->string());

  SynthesisOptions synthesis;
  synthesis.allow_unverified = a.allow_unverified;
  if (a.copy_repo && fixture) synthesis.copy_repo = fixture;
  if (result.trace.outcome != Outcome::verified && !a.allow_unverified) {
    std::cerr << "build did not verify; no Dockerfile written\n";
    return kFailure;
  }
  auto program = synthesize(result.trace, synthesis);
  auto dir = fs::path(a.out) / "dockerfile";
  write_program(program, dir);
  std::cout << "dockerfile: " << (dir / "Dockerfile").string() << "\n";
  return kOk;
}

int cmd_synthesize(const std::string& trace_path, const std::string& out, const std::string& copy_repo,
                   bool allow_unverified) {
  auto trace = parse_trace(read_text(trace_path));
  SynthesisOptions options;
  options.allow_unverified = allow_unverified;
  if (!copy_repo.empty()) options.copy_repo = fs::absolute(copy_repo);
  auto program = synthesize(trace, options);
  write_program(program, out);
  std::cout << render(program);
  return kOk;
}

int cmd_replay(const std::string& dir, const std::string& backend, const std::string& sim_config,
               const std::string& repo_dir) {
  std::optional<sim::Scenario> scenario;
  if (parse_backend(backend) == Backend::sim) {
    if (sim_config.empty()) throw Error(ErrorCode::file_missing, "--sim-config is required for the sim backend");
    scenario = sim::Scenario::load(sim_config);
  }
  auto verified = verify_dockerfile(dir, parse_backend(backend), scenario ? &*scenario : nullptr, repo_dir);
  std::cout << fmt::format("dockerfile_built: {}\ntests_ran: {}\n", verified.dockerfile_built,
                           verified.tests_ran);
  if (!verified.tests_ran) std::cerr << verified.log;
  return verified.dockerfile_built && verified.tests_ran ? kOk : kFailure;
}

int cmd_classify(const std::vector<std::string>& lines) {
  int status = kOk;
  for (const auto& line : lines) {
    try {
      auto c = classify(Command(line));
      std::string detail;
      if (c.kind == CommandKind::export_env) {
        for (const auto& [k, v] : c.exports()) detail += fmt::format(" {}={}", k, v);
      } else if (c.kind == CommandKind::install) {
        for (const auto& s : c.installs()) detail += fmt::format(" {}:{}{}", s.tool, s.package, s.constraint);
      }
      std::cout << to_string(c.kind) << detail << "\n";
    } catch (const Error& e) {
      std::cerr << e.what() << "\n";
      status = kFailure;
    }
  }
  return status;
}

struct EvalArgs {
  std::string bench;
  std::string backend = "docker";
  int jobs = 0;
  std::string out = "report.json";
  std::string work_dir = "envforge-eval";
  int turns = BuildBudget{}.max_turns;
  int seconds = BuildBudget{}.max_wall_seconds;
  std::string policy = "auto";
  std::string sim_config;
  bool no_rollback = false;
};

int cmd_eval(const EvalArgs& a) {
  EvalOptions options;
  options.backend = parse_backend(a.backend);
  options.jobs = a.jobs;
  options.out_dir = a.work_dir;
  options.budget = {a.turns, a.seconds, BuildBudget{}.max_base_image_changes};
  options.budget.validate();
  options.rollback_enabled = !a.no_rollback;
  options.policy = a.policy;
  if (!a.sim_config.empty()) options.sim_config = a.sim_config;
  auto result = run_eval(load_bench(a.bench), options);
  auto json = report_json(result);
  std::ofstream(a.out, std::ios::binary) << json;
  auto rate = [](const std::optional<double>& r) { return r ? fmt::format("{:.3f}", *r) : "null"; };
  std::cout << fmt::format("n: {}\ndgsr: {}\nebsr: {}\nreport: {}\n", result.aggregate.n,
                           rate(result.aggregate.dgsr), rate(result.aggregate.ebsr), a.out);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_level(spdlog::level::warn);
  CLI::App app{"Builds and verifies test environments for Python repositories."};
  app.require_subcommand(1);
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "Log progress");
  const std::vector<std::string> backends{"docker", "container", "sim"};

  BuildArgs build;
  auto* b = app.add_subcommand("build", "Run an agent build, then synthesize a Dockerfile");
  auto* repo_opt = b->add_option("--repo", build.repo, "Local checkout to build")->check(CLI::ExistingDirectory);
  auto* remote_opt = b->add_option("--remote", build.remote, "GitHub owner/repo to clone");
  repo_opt->excludes(remote_opt);
  b->add_option("--sha", build.sha, "Commit to check out");
  b->add_option("--policy", build.policy, "auto, llm or scripted:PATH");
  b->add_option("--backend", build.backend)->check(CLI::IsMember(backends));
  b->add_option("--sim-config", build.sim_config, "Scenario JSON for the sim backend");
  b->add_option("-o,--out", build.out, "Output directory");
  b->add_option("--budget-turns", build.turns)->check(CLI::PositiveNumber);
  b->add_option("--budget-seconds", build.seconds)->check(CLI::PositiveNumber);
  b->add_flag("--no-rollback", build.no_rollback, "Keep the effects of failed commands");
  b->add_flag("--copy-repo", build.copy_repo, "COPY the local checkout instead of cloning");
  b->add_flag("--allow-unverified", build.allow_unverified, "Synthesize even if tests never ran");

  std::string trace_path, synth_out, copy_repo;
  bool allow_unverified = false;
  auto* s = app.add_subcommand("synthesize", "Compile a trace into a Dockerfile");
  s->add_option("trace", trace_path)->required()->check(CLI::ExistingFile);
  s->add_option("-o,--out", synth_out)->required();
  s->add_option("--copy-repo", copy_repo, "COPY this checkout instead of cloning")->check(CLI::ExistingDirectory);
  s->add_flag("--allow-unverified", allow_unverified);

  EvalArgs eval;
  auto* e = app.add_subcommand("eval", "Build every entry of a bench file and score it");
  e->add_option("bench", eval.bench)->required()->check(CLI::ExistingFile);
  e->add_option("--backend", eval.backend)->check(CLI::IsMember(backends));
  e->add_option("--jobs", eval.jobs)->check(CLI::PositiveNumber);
  e->add_option("--out", eval.out, "Report JSON path");
  e->add_option("--work-dir", eval.work_dir, "Per-entry traces and Dockerfiles");
  e->add_option("--budget-turns", eval.turns)->check(CLI::PositiveNumber);
  e->add_option("--budget-seconds", eval.seconds)->check(CLI::PositiveNumber);
  e->add_option("--policy", eval.policy, "auto, llm or scripted:PATH");
  e->add_option("--sim-config", eval.sim_config);
  e->add_flag("--no-rollback", eval.no_rollback);

  std::vector<std::string> lines;
  auto* c = app.add_subcommand("classify", "Print the command kind of shell lines");
  c->add_option("line", lines)->required();

  std::string replay_dir, replay_backend = "docker", replay_config, repo_dir = "/repo";
  auto* r = app.add_subcommand("replay", "Build a Dockerfile and run the tests in it");
  r->add_option("dir", replay_dir)->required()->check(CLI::ExistingDirectory);
  r->add_option("--backend", replay_backend)->check(CLI::IsMember(backends));
  r->add_option("--sim-config", replay_config)->check(CLI::ExistingFile);
  r->add_option("--repo-dir", repo_dir);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    int code = app.exit(err);
    return code == 0 ? 0 : 2;
  }
  if (build.repo.empty() && build.remote.empty() && b->parsed()) {
    std::cerr << "build: one of --repo or --remote is required\n";
    return 2;
  }
  if (verbose) spdlog::set_level(spdlog::level::info);

  try {
    if (b->parsed()) return cmd_build(build);
    if (s->parsed()) return cmd_synthesize(trace_path, synth_out, copy_repo, allow_unverified);
    if (e->parsed()) return cmd_eval(eval);
    if (c->parsed()) return cmd_classify(lines);
    if (r->parsed()) return cmd_replay(replay_dir, replay_backend, replay_config, repo_dir);
  } catch (const Error& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kFailure;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kFailure;
  }
  return kFailure;
}
