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

#include "envforge/depmgr.hpp"
#include "envforge/error.hpp"
#include "envforge/sandbox.hpp"
#include "envforge/sim_sandbox.hpp"
#include "support/support.hpp"

namespace envforge {
namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::parse_error;
}

TEST(WaitingList, AddConflictAndIdempotence) {
  DependencyLists lists;
  EXPECT_EQ(lists.wl_add(WaitingItem::make("numpy", ">=1.21", "pip")), AddResult::added);
  EXPECT_EQ(lists.wl_add(WaitingItem::make("numpy", "<1.20", "pip")), AddResult::conflict_queued);
  ASSERT_EQ(lists.conflicts().size(), 1u);
  EXPECT_EQ(lists.conflicts()[0].existing.to_string(), ">=1.21");
  EXPECT_EQ(lists.conflicts()[0].incoming.to_string(), "<1.20");
  EXPECT_EQ(lists.wl_add(WaitingItem::make("NumPy", ">=1.21", "pip")), AddResult::unchanged);
  EXPECT_EQ(lists.waiting().size(), 1u);
}

TEST(WaitingList, ItemValidation) {
  EXPECT_EQ(code_of([] { WaitingItem::make("curl", ">=1", "apt"); }), ErrorCode::bad_constraint);
  EXPECT_EQ(code_of([] { WaitingItem::make("x", "", "conda"); }), ErrorCode::bad_constraint);
  EXPECT_EQ(code_of([] { WaitingItem::make("x", ">>1", "pip"); }), ErrorCode::bad_constraint);
  EXPECT_EQ(WaitingItem::make("Foo_Bar", "", "pip").package, "foo-bar");
}

TEST(WaitingList, AddFile) {
  DependencyLists lists;
  EXPECT_EQ(lists.wl_addfile("A\nB>=1.0,<2.0"), 2);
  EXPECT_EQ(lists.waiting()[1].constraint.to_string(), ">=1.0,<2.0");
  EXPECT_EQ(lists.wl_addfile("A\nB>=1.0,<2.0"), 0);
  EXPECT_TRUE(lists.conflicts().empty());
  EXPECT_EQ(lists.wl_addfile("# only\n\n   # comments\n"), 0);
  try {
    lists.wl_addfile("ok\n-e .\n");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::parse_error);
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
}

TEST(ConflictList, SolveWithNewConstraintOrKeepOriginal) {
  DependencyLists a;
  a.wl_add(WaitingItem::make("numpy", ">=1.21", "pip"));
  a.wl_add(WaitingItem::make("numpy", "<1.20", "pip"));
  a.cl_solve("numpy", "pip", VersionConstraint::parse("==1.19.5"));
  ASSERT_EQ(a.waiting().size(), 1u);
  EXPECT_EQ(a.waiting()[0].constraint.to_string(), "==1.19.5");
  EXPECT_TRUE(a.conflicts().empty());

  DependencyLists b;
  b.wl_add(WaitingItem::make("numpy", ">=1.21", "pip"));
  b.wl_add(WaitingItem::make("numpy", "<1.20", "pip"));
  b.cl_solve_first(KeepOriginal{});
  EXPECT_EQ(b.waiting()[0].constraint.to_string(), ">=1.21");

  EXPECT_EQ(code_of([&] { b.cl_solve_first(KeepOriginal{}); }), ErrorCode::no_such_conflict);
  b.wl_add(WaitingItem::make("numpy", "<1.20", "pip"));
  EXPECT_EQ(code_of([&] { b.cl_solve("scipy", "pip", KeepOriginal{}); }), ErrorCode::no_such_conflict);
}

struct SimRunner {
  std::shared_ptr<sim::Scenario> scenario;
  std::unique_ptr<Sandbox> box;
  InstallRunner runner() {
    return [this](const Command& c) { return exec_guarded(*box, c).record; };
  }
};

SimRunner make_runner(const char* registry) {
  SimRunner r;
  r.scenario = std::make_shared<sim::Scenario>(sim::Scenario::parse(registry));
  sim::SimFactory factory(r.scenario);
  r.box = factory.start(BaseImage("python:3.10"));
  return r;
}

TEST(Download, ResolvesFromRegistry) {
  auto sim = make_runner(R"({"registry": {"pytest": {"version": "8.0.0"}}})");
  DependencyLists lists;
  lists.wl_add(WaitingItem::make("pytest", "", "pip"));
  auto results = lists.download(sim.runner());
  ASSERT_EQ(results.size(), 1u);
  EXPECT_TRUE(results[0].ok);
  EXPECT_EQ(results[0].version, "8.0.0");
  EXPECT_TRUE(lists.waiting().empty());
}

TEST(Download, PollutingFailureLeavesStateCleanAndContinues) {
  auto sim = make_runner(R"({"registry": {
      "cupy": {"behavior": "fail_polluting", "version": "13.0.0", "side_installs": ["fastrlock", "numpy"]},
      "fastrlock": {"version": "0.8.2"}, "numpy": {"version": "1.26.4"},
      "requests": {"version": "2.31.0"}}})");
  DependencyLists lists;
  lists.wl_add(WaitingItem::make("cupy", "", "pip"));
  lists.wl_add(WaitingItem::make("requests", "", "pip"));
  auto results = lists.download(sim.runner());
  ASSERT_EQ(results.size(), 2u);
  EXPECT_FALSE(results[0].ok);
  EXPECT_NE(results[0].return_code, 0);
  EXPECT_TRUE(results[1].ok);
  EXPECT_EQ(results[1].version, "2.31.0");
  auto pip = sim.box->installed_versions("pip");
  EXPECT_EQ(pip, (std::map<std::string, std::string>{{"requests", "2.31.0"}}));
}

TEST(Download, RefusesWithPendingConflictOrEmptyList) {
  DependencyLists lists;
  int calls = 0;
  auto runner = [&](const Command& c) {
    ++calls;
    return CommandRecord(c);
  };
  EXPECT_EQ(code_of([&] { lists.download(runner); }), ErrorCode::empty_waiting_list);
  lists.wl_add(WaitingItem::make("numpy", ">=1.21", "pip"));
  lists.wl_add(WaitingItem::make("numpy", "<1.20", "pip"));
  EXPECT_EQ(code_of([&] { lists.download(runner); }), ErrorCode::conflicts_pending);
  EXPECT_EQ(calls, 0);
  EXPECT_EQ(lists.waiting().size(), 1u);
}

TEST(Download, InstallCommands) {
  EXPECT_EQ(DependencyLists::install_command(WaitingItem::make("B", ">=1.0,<2.0", "pip")).raw(),
            "pip install 'b>=1.0,<2.0'");
  EXPECT_EQ(DependencyLists::install_command(WaitingItem::make("curl", "", "apt")).raw(),
            "apt-get install -y curl");
}

TEST(Lists, ShowAndClear) {
  DependencyLists lists;
  lists.wl_add(WaitingItem::make("six", "", "pip"));
  EXPECT_NE(lists.wl_show().find("six"), std::string::npos);
  lists.wl_clear();
  EXPECT_TRUE(lists.waiting().empty());
  lists.wl_add(WaitingItem::make("a", "==1", "pip"));
  lists.wl_add(WaitingItem::make("a", "==2", "pip"));
  EXPECT_NE(lists.cl_show().find("a"), std::string::npos);
  lists.cl_clear();
  EXPECT_TRUE(lists.conflicts().empty());
}

}  // namespace
}  // namespace envforge
