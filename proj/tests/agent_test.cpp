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

#include <gtest/gtest.h>

#include <filesystem>

#include <fmt/format.h>

#include "envforge/agent.hpp"
#include "envforge/error.hpp"
#include "envforge/policy.hpp"
#include "envforge/sim_sandbox.hpp"
#include "support/support.hpp"

namespace envforge {
namespace {

std::shared_ptr<sim::Scenario> scenario(std::string_view outcome = "runs_pass") {
  return std::make_shared<sim::Scenario>(sim::Scenario::parse(fmt::format(R"({{
    "registry": {{
      "pytest": {{"version": "8.2.0"}},
      "numpy": {{"versions": ["1.19.5", "1.26.4"]}},
      "cupy": {{"behavior": "fail_polluting", "version": "13.0.0", "side_installs": ["fastrlock"]}}
    }},
    "test_profile": {{"outcome": "{}"}},
    "repos": {{"acme/app": {{
      "src/app.py": "import numpy\nprint(f\"{{data[\"key\"]}}\")\n",
      "tests/test_api.py": "def test_api():\n    assert True\n",
      "requirements.txt": "numpy>=1.20\n# dev\npytest\n"
    }}}}
  }})", outcome)));
}

RepoSource remote() { return {{"acme/app", "0123abc"}, std::nullopt}; }

std::vector<Action> actions(std::initializer_list<std::string_view> texts) {
  std::vector<Action> out;
  for (auto t : texts) out.push_back(Action::parse(t));
  return out;
}

BuildResult build(std::initializer_list<std::string_view> texts, std::string_view outcome = "runs_pass",
                  BuildOptions options = {}) {
  sim::SimFactory factory(scenario(outcome));
  ScriptedPolicy policy(actions(texts));
  return run_build_session(remote(), policy, factory, options);
}

std::size_t staging_records(const Trace& t) {
  std::size_t n = 0;
  while (n < t.records.size() && t.records[n].turn <= 2 &&
         (t.records[n].command.raw().starts_with("git clone") ||
          t.records[n].command.raw().find("git checkout") != std::string::npos)) {
    ++n;
  }
  return n;
}

TEST(ActionText, ParsesEveryVerb) {
  EXPECT_EQ(Action::parse("waitinglist add -p numpy -v '>=1.20' -t pip").constraint, ">=1.20");
  EXPECT_EQ(Action::parse("waitinglist addfile /repo/requirements.txt").verb, Verb::waitinglist_addfile);
  EXPECT_EQ(Action::parse("conflictlist solve -u").keep_original, true);
  EXPECT_EQ(Action::parse("conflictlist solve -v \"==1.19.5\"").constraint, "==1.19.5");
  EXPECT_EQ(Action::parse("change_python_version 3.11").version, "3.11");
  EXPECT_EQ(Action::parse("clear_configuration").verb, Verb::clear_configuration);
  EXPECT_EQ(Action::parse("poetryruntest").verb, Verb::poetryruntest);
  EXPECT_EQ(Action::parse("runpipreqs").verb, Verb::runpipreqs);
  auto edit = Action::parse("edit_file /repo/a.py\n<<<<<<< SEARCH\na\n=======\nb\n>>>>>>> REPLACE");
  EXPECT_EQ(edit.verb, Verb::edit_file);
  EXPECT_EQ(edit.path, "/repo/a.py");
  EXPECT_TRUE(edit.patch.ends_with("REPLACE\n"));
  EXPECT_EQ(Action::parse("  ls -la  ").command, "ls -la");
}

TEST(ActionText, RejectsInvalidActions) {
  for (auto bad : {"", "ls\nrm x", "waitinglist add -p", "waitinglist frob", "conflictlist solve",
                   "change_python_version", "pip install x && download", "waitinglist add -p x -t conda"}) {
    EXPECT_THROW(Action::parse(bad).validate(), Error) << bad;
  }
}

TEST(ActionText, ToTextRoundTrips) {
  for (auto text : {"waitinglist add -p numpy -v '>=1.20,<2' -t pip", "conflictlist solve -u", "download",
                    "change_python_version 3.12", "echo 'a b' | wc -c", "waitinglist show"}) {
    auto a = Action::parse(text);
    EXPECT_EQ(Action::parse(a.to_text()), a) << text;
  }
}

TEST(TestRuns, ExitCodeMapping) {
  EXPECT_EQ(classify_test_run(0, 0), TestStatus::verified);
  EXPECT_EQ(classify_test_run(0, 1), TestStatus::verified);
  EXPECT_EQ(classify_test_run(2, std::nullopt), TestStatus::collect_error);
  EXPECT_EQ(classify_test_run(5, std::nullopt), TestStatus::no_tests);
  EXPECT_EQ(classify_test_run(0, 3), TestStatus::collect_error);
  EXPECT_EQ(classify_test_run(kTimeoutReturnCode, std::nullopt), TestStatus::timeout);
  EXPECT_EQ(classify_test_run(0, kTimeoutReturnCode), TestStatus::timeout);
}

TEST(Helpers, ProtectedTestFiles) {
  EXPECT_TRUE(is_protected_test_file("tests/test_api.py"));
  EXPECT_TRUE(is_protected_test_file("/repo/pkg/core_test.py"));
  EXPECT_FALSE(is_protected_test_file("/repo/src/app.py"));
  EXPECT_FALSE(is_protected_test_file("/repo/contest.py"));
}

TEST(Helpers, ScanImports) {
  auto pkgs = scan_imports({{"pkg/__init__.py", ""},
                            {"pkg/a.py", "import os, numpy as np\nfrom yaml import load\nfrom . import b\n"},
                            {"pkg/b.py", "import pkg.a\nfrom PIL import Image\n    import requests.adapters\n"}});
  EXPECT_EQ(pkgs, (std::vector<std::string>{"numpy", "pillow", "pyyaml", "requests"}));
}

TEST(Session, PytestThenRuntestVerifies) {
  auto r = build({"pip install pytest", "runtest"});
  EXPECT_EQ(r.trace.outcome, Outcome::verified);
  auto staged = staging_records(r.trace);
  EXPECT_EQ(staged, 2u);
  EXPECT_EQ(r.trace.records.size() - staged, 2u);
  EXPECT_NO_THROW(r.trace.validate());
}

TEST(Session, NoRuntestExhaustsBudget) {
  BuildOptions options;
  options.budget.max_turns = 3;
  auto r = build({"ls", "pip install pytest", "ls /repo", "runtest"}, "runs_pass", options);
  EXPECT_EQ(r.trace.outcome, Outcome::budget_exhausted);
  EXPECT_EQ(r.history.size(), 3u);
}

TEST(Session, ImageChangeSupersedesPriorRecords) {
  auto r = build({"pip install numpy", "change_python_version 3.11", "pip install pytest", "runtest"});
  EXPECT_EQ(r.trace.final_base_image.name, "python:3.11");
  auto change = r.trace.last_base_image_change();
  ASSERT_TRUE(change.has_value());
  for (std::size_t i = 0; i < *change; ++i) EXPECT_TRUE(r.trace.superseded(i));
  EXPECT_EQ(r.trace.outcome, Outcome::verified);
  EXPECT_EQ(r.trace.records[*change + 1].command.raw(), "git clone https://github.com/acme/app.git /repo");
}

TEST(Session, RunsFailIsTerminalAndVerified) {
  sim::SimFactory factory(scenario("runs_fail"));
  Session s(factory, remote());
  s.dispatch(Action::parse("pip install pytest"));
  auto obs = s.dispatch(Action::parse("runtest"));
  EXPECT_TRUE(obs.terminal);
  EXPECT_TRUE(s.verified());
}

TEST(Session, CollectErrorAndNoTestsAreNotTerminal) {
  for (auto outcome : {"collect_error", "no_tests"}) {
    sim::SimFactory factory(scenario(outcome));
    Session s(factory, remote());
    s.dispatch(Action::parse("pip install pytest"));
    auto obs = s.dispatch(Action::parse("runtest"));
    EXPECT_FALSE(obs.terminal) << outcome;
    EXPECT_FALSE(s.verified());
    EXPECT_TRUE(s.trace().records.back().rolled_back);
  }
}

TEST(Session, DownloadWithConflictReportsError) {
  sim::SimFactory factory(scenario());
  Session s(factory, remote());
  s.dispatch(Action::parse("waitinglist add -p numpy -v '>=1.21' -t pip"));
  s.dispatch(Action::parse("waitinglist add -p numpy -v '<1.20' -t pip"));
  auto obs = s.dispatch(Action::parse("download"));
  EXPECT_NE(obs.text.find("conflicts-pending"), std::string::npos) << obs.text;
  s.dispatch(Action::parse("conflictlist solve -v ==1.19.5"));
  obs = s.dispatch(Action::parse("download"));
  EXPECT_EQ(s.sandbox().installed_versions("pip").at("numpy"), "1.19.5") << obs.text;
}

TEST(Session, AddfileReadsFromSandbox) {
  sim::SimFactory factory(scenario());
  Session s(factory, remote());
  s.dispatch(Action::parse("waitinglist addfile /repo/requirements.txt"));
  EXPECT_EQ(s.lists().waiting().size(), 2u);
  auto obs = s.dispatch(Action::parse("waitinglist addfile /repo/missing.txt"));
  EXPECT_NE(obs.text.find("file-missing"), std::string::npos) << obs.text;
}

TEST(Session, DownloadRollsBackPollutionAndContinues) {
  sim::SimFactory factory(scenario());
  Session s(factory, remote());
  s.dispatch(Action::parse("waitinglist add -p cupy -t pip"));
  s.dispatch(Action::parse("waitinglist add -p pytest -t pip"));
  s.dispatch(Action::parse("download"));
  auto pip = s.sandbox().installed_versions("pip");
  EXPECT_FALSE(pip.contains("fastrlock"));
  EXPECT_TRUE(pip.contains("pytest"));
}

TEST(Session, EditFileAppliesAndGuardsTests) {
  sim::SimFactory factory(scenario());
  Session s(factory, remote());
  auto ok = s.edit_file("/repo/src/app.py",
                        "<<<<<<< SEARCH\nprint(f\"{data[\"key\"]}\")\n=======\nprint(f\"{data['key']}\")\n>>>>>>> REPLACE\n");
  EXPECT_EQ(ok.return_code, 0) << ok.text;
  EXPECT_EQ(s.sandbox().read_file("/repo/src/app.py"), "import numpy\nprint(f\"{data['key']}\")\n");
  EXPECT_EQ(s.trace().records.back().classification, CommandKind::code_edit);
  EXPECT_TRUE(s.trace().records.back().patch.has_value());

  auto guarded = s.dispatch(Action::parse("edit_file tests/test_api.py\n<<<<<<< SEARCH\n=======\nx\n>>>>>>> REPLACE"));
  EXPECT_NE(guarded.text.find("guard-violation"), std::string::npos);
  auto rm = s.dispatch(Action::parse("rm /repo/tests/test_api.py"));
  EXPECT_NE(rm.text.find("guard-violation"), std::string::npos);
  EXPECT_TRUE(s.sandbox().read_file("/repo/tests/test_api.py").has_value());

  auto before = dynamic_cast<sim::SimSandbox&>(s.sandbox()).state();
  auto bad = s.edit_file("/repo/src/app.py", "<<<<<<< SEARCH\nnot there\n=======\ny\n>>>>>>> REPLACE\n");
  EXPECT_NE(bad.return_code, 0);
  EXPECT_NE(bad.text.find("patch-apply-failed"), std::string::npos);
  EXPECT_TRUE(s.trace().records.back().rolled_back);
  EXPECT_EQ(dynamic_cast<sim::SimSandbox&>(s.sandbox()).state(), before);
}

TEST(Session, ImageChangeLimitEndsBuild) {
  BuildOptions options;
  options.budget.max_base_image_changes = 1;
  auto r = build({"change_python_version 3.11", "change_python_version 3.12", "pip install pytest", "runtest"},
                 "runs_pass", options);
  EXPECT_EQ(r.trace.outcome, Outcome::budget_exhausted);
  EXPECT_TRUE(r.history.back().observation.terminal);
  EXPECT_EQ(r.trace.final_base_image.name, "python:3.11");
}

TEST(Session, InvalidVersionIsObserved) {
  sim::SimFactory factory(scenario());
  Session s(factory, remote());
  EXPECT_THROW(Action::parse("change_python_version 2"), Error);
  Action a;
  a.verb = Verb::change_python_version;
  a.version = "2";
  auto records = s.trace().records.size();
  auto obs = s.dispatch(a);
  EXPECT_NE(obs.text.find("3.11"), std::string::npos) << obs.text;
  EXPECT_FALSE(obs.return_code.has_value());
  EXPECT_EQ(s.trace().records.size(), records);
  EXPECT_EQ(s.sandbox().handle().base_image.name, "python:3.10");
}

TEST(Session, RunpipreqsWritesRequirements) {
  sim::SimFactory factory(scenario());
  Session s(factory, remote());
  s.dispatch(Action::parse("runpipreqs"));
  EXPECT_EQ(s.sandbox().read_file("/repo/requirements_pipreqs.txt"), "numpy\n");
}

TEST(Session, MissingRepoIsUnavailable) {
  sim::SimFactory factory(scenario());
  try {
    Session s(factory, {{"acme/missing", "x"}, std::nullopt});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::repo_unavailable);
  }
}

TEST(Session, LocalRepoIsStagedAndTraceStreamed) {
  auto fixture = testing::source_path("fixtures/tiny");
  auto sc = std::make_shared<sim::Scenario>(sim::Scenario::load(fixture / "envforge-sim.json"));
  sim::SimFactory factory(sc);
  auto policy = ScriptedPolicy::load(fixture / "envforge-actions.json");
  BuildOptions options;
  options.trace_path = std::filesystem::temp_directory_path() / fmt::format("envforge-trace-{}.jsonl", ::getpid());
  auto r = run_build_session({{"envforge/tiny", "HEAD"}, fixture}, policy, factory, options);
  EXPECT_EQ(r.trace.outcome, Outcome::verified);
  EXPECT_EQ(r.trace.records.front().command.argv0(), "stage_repo");
  EXPECT_EQ(parse_trace(testing::read_file(*options.trace_path)), r.trace);
  std::filesystem::remove(*options.trace_path);
  EXPECT_EQ(r.history.front().action.thought, "Look at the layout first.");
}

TEST(Session, ObservationsAreTruncated) {
  BuildOptions options;
  options.head_limit = 20;
  options.tail_limit = 20;
  sim::SimFactory factory(scenario());
  Session s(factory, remote(), options);
  s.sandbox().put_file("/big.txt", std::string(3000, 'q'));
  auto obs = s.dispatch(Action::parse("cat /big.txt"));
  EXPECT_LT(obs.text.size(), 200u);
  EXPECT_NE(obs.text.find("omitted"), std::string::npos);
}

TEST(Budget, Validation) {
  EXPECT_NO_THROW(BuildBudget{}.validate());
  EXPECT_THROW((BuildBudget{0, 10, 1}.validate()), Error);
}

}  // namespace
}  // namespace envforge
