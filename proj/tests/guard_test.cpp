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

#include <fmt/format.h>

#include "envforge/sim_sandbox.hpp"
#include "support/support.hpp"

namespace envforge {
namespace {

using sim::SimSandbox;

std::shared_ptr<sim::Scenario> scenario() {
  return std::make_shared<sim::Scenario>(sim::Scenario::parse(R"({
    "registry": {
      "cupy": {"behavior": "fail_polluting", "version": "13.0.0", "side_installs": ["fastrlock", "numpy"]},
      "broken": {"behavior": "fail_clean", "version": "0.1"},
      "pytest": {"version": "8.2.0", "side_installs": ["pluggy==1.5.0"]},
      "numpy": {"version": "1.26.4"}, "fastrlock": {"version": "0.8.2"}
    }
  })"));
}

TEST(Guard, PollutingFailureIsRolledBack) {
  SimSandbox box(scenario(), BaseImage("python:3.10"));
  auto before = box.state();
  auto g = exec_guarded(box, Command("pip install cupy"));
  EXPECT_NE(g.record.return_code, 0);
  EXPECT_TRUE(g.record.rolled_back);
  EXPECT_TRUE(g.record.snapshot_before.has_value());
  EXPECT_EQ(g.record.classification, CommandKind::install);
  EXPECT_EQ(box.state(), before);
}

TEST(Guard, SafeFailureTakesNoSnapshot) {
  SimSandbox box(scenario(), BaseImage("python:3.10"));
  auto before = box.state();
  auto g = exec_guarded(box, Command("cat missing.txt"));
  EXPECT_EQ(g.record.return_code, 1);
  EXPECT_FALSE(g.record.snapshot_before.has_value());
  EXPECT_FALSE(g.record.rolled_back);
  EXPECT_EQ(box.retained_snapshots(), 0u);
  EXPECT_EQ(box.state(), before);
}

TEST(Guard, SuccessfulInstallRecordsVersions) {
  SimSandbox box(scenario(), BaseImage("python:3.10"));
  auto g = exec_guarded(box, Command("pip install pytest"));
  EXPECT_EQ(g.record.return_code, 0);
  EXPECT_FALSE(g.record.rolled_back);
  auto has = [&](std::string_view pkg, std::string_view version) {
    return std::any_of(g.record.installed.begin(), g.record.installed.end(), [&](const InstalledPackage& p) {
      return p.tool == "pip" && p.package == pkg && p.version == version;
    });
  };
  EXPECT_TRUE(has("pytest", "8.2.0"));
  EXPECT_TRUE(has("pluggy", "1.5.0"));
}

TEST(Guard, ExportRecordsDelta) {
  SimSandbox box(scenario(), BaseImage("python:3.10"));
  auto g = exec_guarded(box, Command("export PYTHONPATH=/repo/src"));
  EXPECT_EQ(g.record.classification, CommandKind::export_env);
  EXPECT_EQ(g.record.env_delta, (std::vector<std::pair<std::string, std::string>>{{"PYTHONPATH", "/repo/src"}}));
}

TEST(Guard, DisabledRollbackKeepsPollution) {
  SimSandbox box(scenario(), BaseImage("python:3.10"));
  GuardOptions options;
  options.rollback_enabled = false;
  auto g = exec_guarded(box, Command("pip install cupy"), options);
  EXPECT_FALSE(g.record.rolled_back);
  EXPECT_TRUE(box.installed_versions("pip").contains("numpy"));
}

TEST(Guard, OutputIsTruncated) {
  SimSandbox box(scenario(), BaseImage("python:3.10"));
  box.put_file("/big.txt", std::string(5000, 'x'));
  GuardOptions options;
  options.head_limit = 10;
  options.tail_limit = 10;
  auto g = exec_guarded(box, Command("cat /big.txt"), options);
  EXPECT_LT(g.record.stdout_excerpt.size(), 100u);
  EXPECT_EQ(g.result.stdout_text.size(), 5000u);
}

// Any failing guarded command leaves the state exactly as it was; safe
// commands change at most the working directory.
TEST(Guard, FailuresAndSafeCommandsNeverChangeState) {
  testing::Rng rng(99);
  const std::vector<std::string> failing{
      "pip install cupy", "pip install broken", "mkdir -p /w/p && touch /w/p/x && false",
      "export A=1 && false", "rm -rf /etc && false", "apt-get install -y nothing", "cd /etc && exit 3",
      "pip install numpy && pip install broken"};
  const std::vector<std::string> safe{"ls /", "cat /etc/os-release", "grep -r x /etc", "pwd", "env",
                                      "which python", "head -n 1 /etc/os-release", "cat /nope"};
  const std::vector<std::string> ok{"mkdir -p /w", "touch /w/f", "pip install numpy", "export B=2", "cd /w",
                                    "echo hi > /w/g"};
  SimSandbox box(scenario(), BaseImage("python:3.10"));
  int failures = 0;
  for (int i = 0; i < 300; ++i) {
    int pick = rng.between(0, 2);
    const auto& line = pick == 0 ? rng.pick(failing) : pick == 1 ? rng.pick(safe) : rng.pick(ok);
    auto before = box.state();
    GuardOptions guard;
    guard.turn = i + 1;
    auto g = exec_guarded(box, Command(line), guard);
    if (g.record.classification == CommandKind::safe) {
      ASSERT_TRUE(box.state().equivalent_ignoring_cwd(before)) << line;
    } else if (g.record.return_code != 0) {
      ++failures;
      ASSERT_TRUE(g.record.rolled_back) << line;
      ASSERT_EQ(box.state(), before) << line << ": " << box.state().describe_difference(before);
    }
  }
  EXPECT_GT(failures, 50);
}

TEST(ResolvePath, FoldsSegments) {
  EXPECT_EQ(resolve_path("/repo", "src/../a.py"), "/repo/a.py");
  EXPECT_EQ(resolve_path("/repo", "/etc/./x"), "/etc/x");
  EXPECT_EQ(resolve_path("/", "../.."), "/");
}

}  // namespace
}  // namespace envforge
