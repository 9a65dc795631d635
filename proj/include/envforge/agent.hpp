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
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "envforge/depmgr.hpp"
#include "envforge/sandbox.hpp"
#include "envforge/trace.hpp"

namespace envforge {

enum class Verb {
  bash,
  waitinglist_add,
  waitinglist_addfile,
  waitinglist_clear,
  waitinglist_show,
  conflictlist_solve,
  conflictlist_clear,
  conflictlist_show,
  download,
  runtest,
  poetryruntest,
  runpipreqs,
  change_python_version,
  clear_configuration,
  edit_file,
};

std::string_view to_string(Verb verb);

// One step chosen by a policy. Text syntax, one action per message:
//
//   waitinglist add -p NAME [-v CONSTRAINTS] -t pip|apt
//   waitinglist addfile PATH | waitinglist clear | waitinglist show
//   conflictlist solve -v "CONSTRAINTS" | conflictlist solve -u
//   conflictlist clear | conflictlist show
//   download | runtest | poetryruntest | runpipreqs
//   change_python_version X.Y | clear_configuration
//   edit_file PATH          (followed by SEARCH/REPLACE blocks)
//   anything else           (a single bash line)
struct Action {
  Verb verb = Verb::bash;
  std::string command;     // bash line
  std::string package;     // waitinglist add
  std::string constraint;  // waitinglist add, conflictlist solve -v
  std::string tool;        // waitinglist add
  bool keep_original = false;  // conflictlist solve -u
  std::string path;        // waitinglist addfile, edit_file
  std::string version;     // change_python_version
  std::string patch;       // edit_file
  std::optional<std::string> thought;

  static Action bash(std::string line);

  // Throws Error(invalid_action) with a message meant for the policy.
  static Action parse(std::string_view text);
  void validate() const;
  std::string to_text() const;

  friend bool operator==(const Action&, const Action&) = default;
};

struct Observation {
  std::string text;  // truncated
  std::optional<int> return_code;
  bool terminal = false;
};

struct Turn {
  Action action;
  Observation observation;
};

struct PolicyContext {
  RepoRef repo;
  std::string repo_dir;
  BaseImage base_image;
  int turn = 1;
};

class Policy {
 public:
  virtual ~Policy() = default;
  // nullopt when the policy has nothing more to offer. Throws
  // Error(http_error) or Error(parse_failure_exhausted).
  virtual std::optional<Action> next_action(const std::vector<Turn>& history,
                                            const PolicyContext& context) = 0;
};

struct BuildBudget {
  int max_turns = 100;
  int max_wall_seconds = 7200;
  int max_base_image_changes = 5;

  void validate() const;  // Error(invalid_action) unless all positive
};

struct RepoSource {
  RepoRef ref;
  // Host directory copied in instead of cloning from GitHub.
  std::optional<std::filesystem::path> local_path;
};

struct BuildOptions {
  BuildBudget budget;
  bool rollback_enabled = true;
  std::size_t head_limit = kDefaultHeadLimit;
  std::size_t tail_limit = kDefaultTailLimit;
  std::chrono::milliseconds command_timeout = kDefaultCommandTimeout;
  std::string repo_dir = "/repo";
  // Records are appended to this file as they happen.
  std::optional<std::filesystem::path> trace_path;
};

enum class TestStatus { verified, collect_error, no_tests, timeout };

std::string_view to_string(TestStatus status);

struct TestRun {
  TestStatus status = TestStatus::collect_error;
  int pytest_exit = 0;
  std::string log;
};

// Maps pytest exit codes of a collection probe and a full run.
TestStatus classify_test_run(int collect_exit, std::optional<int> run_exit);

// Files whose name starts with "test_" or ends with "_test.py".
bool is_protected_test_file(std::string_view path);

// Top-level imports of Python sources that are neither standard library nor
// local modules, mapped to distribution names and sorted.
std::vector<std::string> scan_imports(
    const std::vector<std::pair<std::string, std::string>>& sources);

// Files of a local checkout to stage, keyed by path relative to `root`.
// Skips VCS metadata, caches and the fixture's own envforge-* files.
std::vector<std::pair<std::string, std::string>> local_repo_files(
    const std::filesystem::path& root);

// One build session: a sandbox, the dependency lists and the trace so far.
class Session {
 public:
  // Starts the sandbox at python:3.10 and stages the repository.
  // Throws Error(repo_unavailable) or backend errors.
  Session(SandboxFactory& factory, RepoSource source, BuildOptions options = {});

  Observation dispatch(const Action& action);
  TestRun run_tests(bool poetry = false);
  Observation edit_file(std::string_view path, std::string_view patch,
                        std::optional<std::string> thought = std::nullopt);

  const Trace& trace() const noexcept { return trace_; }
  Sandbox& sandbox() noexcept { return *sandbox_; }
  DependencyLists& lists() noexcept { return lists_; }
  const BuildOptions& options() const noexcept { return options_; }
  bool verified() const noexcept { return verified_; }
  int base_image_changes() const noexcept { return base_image_changes_; }
  const std::string& last_test_log() const noexcept { return last_test_log_; }

  // Closes the trace with the given outcome and returns it.
  Trace finish(Outcome outcome);

 private:
  GuardedResult guarded(const Command& command, GuardOptions guard = {});
  void append(CommandRecord record);
  void stage_repository();
  Observation change_base_image(const BaseImage& image, std::string raw);
  Observation run_bash(const Action& action);
  Observation run_test_action(bool poetry, const std::optional<std::string>& thought);
  Observation download();
  Observation runpipreqs(const std::optional<std::string>& thought);
  Observation observe(std::string text, std::optional<int> rc, bool terminal = false) const;
  void check_guard(const Command& command) const;

  std::unique_ptr<Sandbox> sandbox_;
  RepoSource source_;
  BuildOptions options_;
  DependencyLists lists_;
  Trace trace_;
  std::unique_ptr<TraceWriter> writer_;
  std::optional<std::string> pending_thought_;
  int next_turn_ = 1;
  int base_image_changes_ = 0;
  bool verified_ = false;
  std::string last_test_log_;
};

struct BuildResult {
  Trace trace;
  std::int64_t elapsed_ms = 0;
  std::string last_test_log;
  std::vector<Turn> history;
};

BuildResult run_build_session(const RepoSource& source, Policy& policy, SandboxFactory& factory,
                              const BuildOptions& options = {});

Trace run_build(const RepoSource& source, Policy& policy, SandboxFactory& factory,
                const BuildOptions& options = {});

}  // namespace envforge
