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

#include <cstdlib>
#include <fstream>

#include <fmt/format.h>

#include "envforge/error.hpp"
#include "envforge/trace.hpp"
#include "support/support.hpp"

namespace envforge {
namespace {

using testing::Rng;

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::parse_error;
}

std::size_t line_count(const std::string& text) {
  return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
}

std::string random_text(Rng& rng) {
  static const std::vector<std::string> pieces{"a", "Z", " ", "\n", "\t", "\"", "\\", "é", "→", "{", "}", "'", "$HOME", "日本"};
  std::string out;
  int n = rng.between(0, 12);
  for (int i = 0; i < n; ++i) out += rng.pick(pieces);
  return out;
}

Trace random_trace(Rng& rng) {
  static const std::vector<std::string> lines{"ls -la", "pip install numpy", "cat README.md",
                                              "apt-get install -y curl", "python setup.py develop",
                                              "echo 'quoted \"text\"' > out.txt", "git status | head -n 3"};
  Trace t;
  t.repo = {fmt::format("owner{}/repo", rng.between(0, 9)), fmt::format("{:x}", rng.next())};
  t.initial_base_image = BaseImage("python:3.10");
  t.final_base_image = t.initial_base_image;
  int n = rng.between(0, 12);
  int turn = 0;
  for (int i = 0; i < n; ++i) {
    turn += rng.between(1, 3);
    int kind = rng.between(0, 5);
    std::unique_ptr<CommandRecord> r;
    if (kind == 0) {
      auto v = std::string(rng.chance(0.5) ? "3.11" : "3.9");
      r = std::make_unique<CommandRecord>(Command("change_python_version " + v));
      r->classification = CommandKind::base_image_change;
      t.final_base_image = BaseImage::python(v);
    } else if (kind == 1) {
      r = std::make_unique<CommandRecord>(Command("export K" + std::to_string(i) + "=v"));
      r->classification = CommandKind::export_env;
      r->env_delta = {{"K" + std::to_string(i), random_text(rng)}};
    } else {
      r = std::make_unique<CommandRecord>(Command(rng.pick(lines)));
      r->classification = kind == 2 ? CommandKind::safe : kind == 3 ? CommandKind::install : CommandKind::mutating;
    }
    r->turn = turn;
    r->cwd = rng.chance(0.5) ? "/" : "/repo/sub dir";
    r->stdout_excerpt = random_text(rng);
    r->stderr_excerpt = random_text(rng);
    if (r->classification != CommandKind::safe && r->classification != CommandKind::base_image_change) {
      r->snapshot_before = SnapshotId{fmt::format("s-{}", turn)};
      if (rng.chance(0.3)) {
        r->return_code = rng.between(1, 255);
        r->rolled_back = rng.chance(0.8);
      }
    } else if (rng.chance(0.2)) {
      r->return_code = rng.between(1, 2);
    }
    if (r->classification == CommandKind::install && r->return_code == 0) {
      r->installed = {{"pip", "numpy", fmt::format("1.{}.0", rng.between(0, 30))}};
    }
    if (rng.chance(0.3)) r->thought = random_text(rng);
    t.records.push_back(std::move(*r));
  }
  t.outcome = rng.chance(0.5) ? Outcome::aborted : Outcome::budget_exhausted;
  return t;
}

TEST(TraceSerialization, EmptyTraceHasHeaderAndFooterOnly) {
  Trace t;
  t.repo = {"a/b", "abc"};
  EXPECT_EQ(line_count(serialize_trace(t)), 2u);
}

TEST(TraceSerialization, ThreeRecordsMakeFiveLines) {
  Trace t;
  t.repo = {"a/b", "abc"};
  for (int i = 1; i <= 3; ++i) t.records.push_back(testing::record(i, "ls", CommandKind::safe));
  EXPECT_EQ(line_count(serialize_trace(t)), 5u);
}

TEST(TraceSerialization, FixedKeyOrder) {
  auto text = serialize_trace(testing::appendix_trace());
  auto header = text.substr(0, text.find('\n'));
  EXPECT_EQ(header, R"({"schema_version":"1","repo_full_name":"example/project","sha":"3f2a9c1","initial_base_image":"python:3.10"})");
  EXPECT_TRUE(text.ends_with("{\"final_base_image\":\"python:3.11\",\"outcome\":\"verified\"}\n"));
}

TEST(TraceSerialization, RoundTripsRandomTraces) {
  Rng rng(2024);
  for (int i = 0; i < 200; ++i) {
    auto t = random_trace(rng);
    auto bytes = serialize_trace(t);
    ASSERT_EQ(parse_trace(bytes), t) << bytes;
  }
}

TEST(TraceSerialization, GoldenTraceFileMatches) {
  auto path = testing::source_path("tests/golden/appendix_example/trace.jsonl");
  auto text = serialize_trace(testing::appendix_trace());
  if (std::getenv("ENVFORGE_UPDATE_GOLDEN") != nullptr) std::ofstream(path, std::ios::binary) << text;
  EXPECT_EQ(text, testing::read_file(path));
  EXPECT_EQ(parse_trace(text), testing::appendix_trace());
}

TEST(TraceParsing, TurnRegressionIsInvariantViolation) {
  Trace t;
  t.repo = {"a/b", "abc"};
  t.records.push_back(testing::record(3, "ls", CommandKind::safe));
  t.records.push_back(testing::record(4, "ls", CommandKind::safe));
  auto text = serialize_trace(t);
  auto pos = text.find("\"turn\":4");
  text.replace(pos, 8, "\"turn\":2");
  EXPECT_EQ(code_of([&] { parse_trace(text); }), ErrorCode::invariant_violation);
}

TEST(TraceParsing, TruncatedFinalLineIsMalformed) {
  auto text = serialize_trace(testing::appendix_trace());
  text.resize(text.size() - 10);
  EXPECT_EQ(code_of([&] { parse_trace(text); }), ErrorCode::malformed_line);
}

TEST(TraceParsing, UnknownSchemaVersionIsRejected) {
  auto text = serialize_trace(testing::appendix_trace());
  text.replace(text.find("\"schema_version\":\"1\""), 20, "\"schema_version\":\"9\"");
  EXPECT_EQ(code_of([&] { parse_trace(text); }), ErrorCode::version_mismatch);
}

TEST(TraceInvariants, RolledBackNeedsNonZeroReturnCode) {
  auto t = testing::appendix_trace();
  t.records[3].return_code = 0;
  EXPECT_EQ(code_of([&] { t.validate(); }), ErrorCode::invariant_violation);
}

TEST(TraceInvariants, SafeRecordsCarryNoSnapshot) {
  auto t = testing::appendix_trace();
  t.records[1].snapshot_before = SnapshotId{"x"};
  EXPECT_EQ(code_of([&] { t.validate(); }), ErrorCode::invariant_violation);
}

TEST(TraceInvariants, FinalImageMustFollowLastChange) {
  auto t = testing::appendix_trace();
  t.final_base_image = BaseImage("python:3.10");
  EXPECT_EQ(code_of([&] { t.validate(); }), ErrorCode::invariant_violation);
}

TEST(TraceInvariants, VerifiedNeedsSuccessfulLastTestRun) {
  auto t = testing::appendix_trace();
  t.records.pop_back();
  EXPECT_EQ(code_of([&] { t.validate(); }), ErrorCode::invariant_violation);
}

TEST(TraceQueries, SupersededRecordsPrecedeLastChange) {
  auto t = testing::appendix_trace();
  ASSERT_EQ(t.last_base_image_change(), 4u);
  for (std::size_t i = 0; i < t.records.size(); ++i) EXPECT_EQ(t.superseded(i), i < 4) << i;
}

TEST(CommandModel, Argv0SkipsAssignments) {
  Command c("FOO=1 BAR=2 pytest -q | tee log.txt");
  EXPECT_EQ(c.argv0(), "pytest");
  EXPECT_FALSE(c.redirects_output());
  EXPECT_TRUE(Command("echo '>' ").argv0() == "echo");
  EXPECT_FALSE(Command("echo '>'").redirects_output());
  EXPECT_TRUE(Command("echo a >> b").redirects_output());
  EXPECT_EQ(code_of([] { Command("   "); }), ErrorCode::unparsable_line);
  EXPECT_EQ(code_of([] { Command("echo 'open"); }), ErrorCode::unparsable_line);
}

TEST(BaseImageModel, PythonVersionFromTag) {
  EXPECT_EQ(BaseImage("python:3.11").python_version, "3.11");
  EXPECT_EQ(BaseImage("python:3.9-slim").python_version, "3.9");
  EXPECT_FALSE(BaseImage("ubuntu:22.04").python_version.has_value());
  EXPECT_EQ(target_image(Command("clear_configuration"))->name, "python:3.10");
  EXPECT_EQ(target_image(Command("change_python_version 3.12"))->name, "python:3.12");
  EXPECT_FALSE(target_image(Command("ls")).has_value());
  EXPECT_TRUE(is_test_runner("runtest"));
  EXPECT_TRUE(is_test_runner("poetryruntest"));
  EXPECT_FALSE(is_test_runner("pytest"));
}

}  // namespace
}  // namespace envforge
