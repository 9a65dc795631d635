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

#include "support.hpp"

#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "envforge/replay.hpp"
#include "json.hpp"

namespace envforge::testing {

std::filesystem::path source_path(std::string_view relative) {
  return std::filesystem::path(ENVFORGE_SOURCE_DIR) / relative;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

CommandRecord record(int turn, std::string raw, CommandKind kind, std::string cwd, int rc) {
  CommandRecord r{Command(std::move(raw))};
  r.turn = turn;
  r.classification = kind;
  r.cwd = std::move(cwd);
  r.return_code = rc;
  if (kind != CommandKind::safe && kind != CommandKind::base_image_change) {
    r.snapshot_before = SnapshotId{fmt::format("golden-snap-{}", turn)};
  }
  return r;
}

Trace appendix_trace() {
  Trace t;
  t.repo = {"example/project", "3f2a9c1"};
  t.initial_base_image = BaseImage("python:3.10");
  const std::string clone = "git clone https://github.com/example/project.git /repo";

  t.records.push_back(record(1, clone, CommandKind::mutating));
  auto cat = record(2, "cat /repo/README.md", CommandKind::safe, "/repo");
  cat.stdout_excerpt = "# project\n";
  t.records.push_back(cat);
  t.records.push_back(record(3, "mkdir -p /data", CommandKind::mutating, "/repo"));
  auto failed = record(4, "pip install nonexistent-pkg", CommandKind::install, "/repo", 1);
  failed.rolled_back = true;
  failed.stderr_excerpt = "ERROR: No matching distribution found for nonexistent-pkg\n";
  t.records.push_back(failed);
  t.records.push_back(record(5, "change_python_version 3.11", CommandKind::base_image_change, "/repo"));
  t.records.push_back(record(6, clone, CommandKind::mutating));
  t.records.push_back(record(7, "cd /repo", CommandKind::safe));
  auto pytest = record(8, "pip install pytest", CommandKind::install, "/repo");
  pytest.installed = {{"pip", "pytest", "8.2.0"}, {"pip", "pluggy", "1.5.0"}};
  t.records.push_back(pytest);
  auto edit = record(9, "edit_file /repo/src/app.py", CommandKind::code_edit, "/repo");
  edit.patch =
      "<<<<<<< SEARCH\nprint(f\"{data[\"key\"]}\")\n=======\nprint(f\"{data['key']}\")\n>>>>>>> REPLACE\n";
  t.records.push_back(edit);
  auto probe = record(10, "runtest", CommandKind::mutating, "/repo", 2);
  probe.rolled_back = true;
  probe.stdout_excerpt = "ModuleNotFoundError: No module named 'b'\n";
  t.records.push_back(probe);
  auto install = record(11, "pip install \"B>=1.0,<2.0\"", CommandKind::install, "/repo");
  install.installed = {{"pip", "b", "1.5.1"}};
  install.stdout_excerpt = "Successfully installed b-1.5.1\n";
  t.records.push_back(install);
  t.records.push_back(record(12, "ls /repo/src", CommandKind::safe, "/repo"));
  auto exp = record(13, "export PYTHONPATH=/repo/src", CommandKind::export_env, "/repo");
  exp.env_delta = {{"PYTHONPATH", "/repo/src"}};
  t.records.push_back(exp);
  t.records.push_back(record(14, "runtest", CommandKind::mutating, "/repo"));

  t.final_base_image = BaseImage("python:3.11");
  t.outcome = Outcome::verified;
  return t;
}

std::shared_ptr<sim::Scenario> appendix_scenario() {
  return std::make_shared<sim::Scenario>(sim::Scenario::parse(R"({
    "registry": {
      "b": {"versions": ["0.9.0", "1.0.0", "1.5.1", "2.0.0"]},
      "pytest": {"versions": ["8.2.0"]}
    },
    "test_profile": {"outcome": "runs_pass", "requires": ["b"],
                     "requires_env": {"PYTHONPATH": "/repo/src"}},
    "repos": {"example/project": {
      "README.md": "# project\n",
      "src/app.py": "data = {'key': 1}\nprint(f\"{data[\"key\"]}\")\n",
      "tests/test_app.py": "def test_app():\n    assert True\n"
    }}
  })"));
}

std::vector<PollutionRow> pollution_table() {
  auto j = nlohmann::json::parse(read_file(source_path("fixtures/pollution/table.json")));
  std::vector<PollutionRow> rows;
  for (const auto& row : j) {
    rows.push_back({row.at("package").get<std::string>(),
                    row.at("side_installs").get<std::vector<std::string>>(), row.at("count").get<int>()});
  }
  return rows;
}

namespace {

const std::vector<std::string> kOkPip{"requests", "six", "numpy", "attrs", "b", "click", "pyyaml"};
const std::vector<std::string> kCleanFailPip{"broken-build", "needs-cuda"};
const std::vector<std::string> kPollutingPip{"cupy", "adb", "zbarlight", "bcolz", "winpdb", "scrapely"};
const std::vector<std::string> kApt{"curl", "libxml2-dev", "git-lfs"};
const std::vector<std::string> kEnvKeys{"APP_MODE", "DEBUG", "PYTHONPATH"};
const std::vector<std::string> kPythons{"3.9", "3.11", "3.12"};

}  // namespace

std::shared_ptr<sim::Scenario> property_scenario() {
  nlohmann::json registry = {
      {"requests", {{"versions", {"2.30.0", "2.31.0"}},
                    {"side_installs", {"idna==3.7", "certifi==2024.2.2", "urllib3==2.2.1"}}}},
      {"six", {{"versions", {"1.15.0", "1.16.0"}}}},
      {"numpy", {{"versions", {"1.24.4", "1.26.4", "2.0.0"}}}},
      {"attrs", {{"versions", {"23.1.0", "23.2.0"}}}},
      {"b", {{"versions", {"1.0.0", "1.5.1", "2.0.0"}}}},
      {"click", {{"versions", {"8.1.7"}}}},
      {"pyyaml", {{"versions", {"6.0.1"}}}},
      {"pytest", {{"versions", {"8.2.0"}}, {"side_installs", {"pluggy==1.5.0", "iniconfig==2.0.0"}}}},
      {"broken-build", {{"behavior", "fail_clean"}, {"versions", {"0.1.0"}}}},
      {"needs-cuda", {{"behavior", "fail_clean"}, {"versions", {"1.0.0"}}}},
      {"curl", {{"tool", "apt"}, {"versions", {"7.88.1"}}}},
      {"libxml2-dev", {{"tool", "apt"}, {"versions", {"2.9.14"}}}},
      {"git-lfs", {{"tool", "apt"}, {"versions", {"3.3.0"}}}},
  };
  for (const auto& row : pollution_table()) {
    registry[row.package] = {{"behavior", "fail_polluting"},
                             {"versions", {"1.0.0"}},
                             {"side_installs", row.side_installs}};
  }
  nlohmann::json scenario = {
      {"registry", registry},
      {"test_profile", {{"outcome", "runs_pass"}, {"requires", {"six"}}}},
      {"repos",
       {{"acme/widget",
         {{"setup.py", "from setuptools import setup\nsetup(name='widget')\n"},
          {"widget/__init__.py", "# marker\nVERSION = '0.1'\n"},
          {"widget/core.py", "import six\n"},
          {"tests/test_core.py", "def test_core():\n    assert True\n"}}}}},
  };
  return std::make_shared<sim::Scenario>(sim::Scenario::parse(scenario.dump()));
}

PropertyCase make_property_case(std::uint64_t seed) {
  Rng rng(seed);
  PropertyCase c;
  c.seed = seed;
  c.source = {{"acme/widget", "a1b2c3d"}, std::nullopt};

  int target_changes = rng.between(0, 2);
  int target_exports = rng.between(0, 3);
  int length = rng.between(8, 22);
  // Positions for the structural events, spread over the run.
  std::vector<int> change_at, export_at;
  for (int i = 0; i < target_changes; ++i) change_at.push_back(rng.between(0, length - 1));
  for (int i = 0; i < target_exports; ++i) export_at.push_back(rng.between(0, length - 1));
  int edits = 0;

  auto bash = [&](std::string line) { c.actions.push_back(Action::bash(std::move(line))); };
  auto pip_line = [&]() {
    const auto& name = rng.pick(kOkPip);
    switch (rng.between(0, 3)) {
      case 0: return fmt::format("pip install {}", name);
      case 1: return fmt::format("pip install \"{}>=1.0\"", name);
      case 2: return fmt::format("pip install {} {}", name, rng.pick(kOkPip));
      default: return fmt::format("python -m pip install -q {}", name);
    }
  };

  bash("pip install pytest");
  for (int step = 0; step < length; ++step) {
    for (int at : change_at) {
      if (at == step) {
        c.actions.push_back(Action::parse(rng.chance(0.2) ? std::string("clear_configuration")
                                                           : "change_python_version " + rng.pick(kPythons)));
        ++c.base_image_changes;
        bash("pip install pytest");
      }
    }
    for (int at : export_at) {
      if (at == step) {
        bash(fmt::format("export {}={}", rng.pick(kEnvKeys), fmt::format("v{}", rng.between(0, 99))));
        ++c.exports;
      }
    }

    if (rng.chance(0.10)) {
      ++c.scripted_failures;
      if (rng.chance(0.30)) {
        ++c.polluting_failures;
        switch (rng.between(0, 2)) {
          case 0: bash("pip install " + rng.pick(kPollutingPip)); break;
          case 1:
            bash(fmt::format("mkdir -p /work/partial{0} && touch /work/partial{0}/x && false", step));
            break;
          default:
            c.actions.push_back(Action::parse(fmt::format("waitinglist add -p {} -t pip", rng.pick(kPollutingPip))));
            c.actions.push_back(Action::parse("download"));
        }
      } else {
        switch (rng.between(0, 3)) {
          case 0: bash("pip install " + rng.pick(kCleanFailPip)); break;
          case 1: bash("false"); break;
          case 2: bash("apt-get install -y no-such-package"); break;
          default: bash("pip install \"b>=9.0\"");
        }
      }
      continue;
    }

    switch (rng.between(0, 13)) {
      case 0: bash(fmt::format("mkdir -p /work/d{}", rng.between(0, 4))); break;
      case 1: bash(fmt::format("mkdir -p /work && echo line{} > /work/f{}.txt", step, rng.between(0, 3))); break;
      case 2: bash(fmt::format("mkdir -p /work && echo entry{} >> /work/log.txt", step)); break;
      case 3: bash(fmt::format("rm -f /work/f{}.txt", rng.between(0, 3))); break;
      case 4: bash(fmt::format("mkdir -p /work && cp /repo/setup.py /work/setup{}.py", rng.between(0, 2))); break;
      case 5: bash(pip_line()); break;
      case 6:
        c.actions.push_back(Action::parse(fmt::format("waitinglist add -p {} -t pip", rng.pick(kOkPip))));
        if (rng.chance(0.5)) {
          c.actions.push_back(Action::parse(fmt::format("waitinglist add -p {} -t apt", rng.pick(kApt))));
        }
        c.actions.push_back(Action::parse("download"));
        break;
      case 7: bash("apt-get update && apt-get install -y " + rng.pick(kApt)); break;
      case 8: {
        Action a;
        a.verb = Verb::edit_file;
        if (rng.chance(0.5)) {
          a.path = "/repo/widget/__init__.py";
          a.patch = fmt::format("<<<<<<< SEARCH\n# marker\n=======\n# marker\nEDIT_{} = {}\n>>>>>>> REPLACE\n",
                                edits, step);
        } else {
          a.path = fmt::format("/repo/widget/extra_{}.py", edits);
          a.patch = fmt::format("<<<<<<< SEARCH\n=======\nVALUE = {}\n>>>>>>> REPLACE\n", step);
        }
        ++edits;
        c.actions.push_back(std::move(a));
        break;
      }
      case 9: bash(rng.chance(0.5) ? "cd /repo/widget" : "cd /repo"); break;
      case 10: bash(fmt::format("mkdir -p sub{0} && touch sub{0}/mark.txt", rng.between(0, 2))); break;
      case 11: bash(rng.pick(std::vector<std::string>{"ls /repo", "cat /repo/setup.py", "grep -r VERSION /repo",
                                                       "pip list", "python --version"}));
        break;
      case 12: c.actions.push_back(Action::parse("runpipreqs")); break;
      default: bash(fmt::format("touch /work/t{} || true", rng.between(0, 3)));
    }
  }
  c.actions.push_back(Action::parse("runtest"));
  return c;
}

SessionRun run_session(const std::shared_ptr<const sim::Scenario>& scenario, const RepoSource& source,
                       const std::vector<Action>& actions, bool rollback_enabled) {
  sim::SimFactory factory(scenario);
  BuildOptions options;
  options.rollback_enabled = rollback_enabled;
  Session session(factory, source, options);
  for (const auto& a : actions) session.dispatch(a);
  SessionRun run{session.finish(session.verified() ? Outcome::verified : Outcome::budget_exhausted),
                 dynamic_cast<sim::SimSandbox&>(session.sandbox()).state()};
  return run;
}

ReplayCheck check_replay(const std::shared_ptr<const sim::Scenario>& scenario, const SessionRun& run) {
  ReplayCheck check;
  SynthesisOptions options;
  options.allow_unverified = true;
  auto program = synthesize(run.trace, options);
  check.dockerfile = render(program);
  sim::SimFactory factory(scenario);
  auto outcome = replay(program.statements, program_assets(program), factory);
  check.built = outcome.built;
  if (!outcome.built) {
    check.difference = outcome.log;
    return check;
  }
  const auto& replayed = dynamic_cast<sim::SimSandbox&>(*outcome.sandbox).state();
  check.equivalent = run.build_state.equivalent_ignoring_cwd(replayed);
  if (!check.equivalent) check.difference = run.build_state.describe_difference(replayed);
  return check;
}

}  // namespace envforge::testing
