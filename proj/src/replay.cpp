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

#include "envforge/replay.hpp"

#include <fstream>
#include <random>
#include <sstream>

#include <fmt/format.h>

#include "envforge/agent.hpp"
#include "envforge/container_sandbox.hpp"
#include "envforge/error.hpp"
#include "envforge/shell.hpp"

namespace envforge {

namespace {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::file_missing, path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

bool tests_ran(int pytest_exit) { return pytest_exit == 0 || pytest_exit == 1; }

}  // namespace

AssetReader directory_assets(std::filesystem::path context_dir) {
  return [dir = std::move(context_dir)](const std::string& source) {
    namespace fs = std::filesystem;
    auto path = dir / source;
    std::vector<std::pair<std::string, std::string>> out;
    if (fs::is_regular_file(path)) {
      out.emplace_back("", read_file(path));
    } else if (fs::is_directory(path)) {
      for (const auto& entry : fs::recursive_directory_iterator(path)) {
        if (entry.is_regular_file()) {
          out.emplace_back(fs::relative(entry.path(), path).generic_string(), read_file(entry.path()));
        }
      }
      std::sort(out.begin(), out.end());
    } else {
      throw Error(ErrorCode::file_missing, path.string());
    }
    return out;
  };
}

AssetReader program_assets(const DockerfileProgram& program) {
  return [files = program.files, dirs = program.directories](const std::string& source) {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& f : files) {
      if (f.path == source) {
        out.emplace_back("", f.content);
        return out;
      }
    }
    for (const auto& d : dirs) {
      if (d.path == source) return local_repo_files(d.source);
    }
    throw Error(ErrorCode::file_missing, source);
  };
}

ReplayOutcome replay(const std::vector<DockerfileStatement>& statements, const AssetReader& assets,
                     SandboxFactory& factory, std::chrono::milliseconds timeout) {
  ReplayOutcome outcome;
  auto fail = [&](std::size_t i, int rc, std::string message) {
    outcome.failed_statement = i;
    outcome.return_code = rc;
    outcome.log += message;
    return std::move(outcome);
  };
  for (std::size_t i = 0; i < statements.size(); ++i) {
    const auto& s = statements[i];
    outcome.log += fmt::format("Step {}/{} : {}\n", i + 1, statements.size(), s.line());
    if (s.keyword == Keyword::from) {
      outcome.sandbox = factory.start(BaseImage(s.payload));
      outcome.sandbox->set_timeout(timeout);
      continue;
    }
    if (!outcome.sandbox) return fail(i, 1, "no FROM before the first instruction\n");
    auto& sb = *outcome.sandbox;
    if (s.keyword == Keyword::env) {
      auto [key, value] = parse_env_payload(s.payload);
      sb.set_env(key, value);
    } else if (s.keyword == Keyword::copy) {
      auto space = s.payload.find(' ');
      if (space == std::string::npos) return fail(i, 1, "COPY needs a source and a destination\n");
      auto source = s.payload.substr(0, space);
      auto dest = s.payload.substr(space + 1);
      std::vector<std::pair<std::string, std::string>> files;
      try {
        files = assets(source);
      } catch (const Error& e) {
        return fail(i, 1, std::string("COPY failed: ") + e.what() + "\n");
      }
      for (const auto& [suffix, content] : files) {
        std::string target = dest;
        if (!suffix.empty()) {
          target = resolve_path(dest, suffix);
        } else if (dest.ends_with("/")) {
          target = resolve_path(dest, source.substr(source.rfind('/') + 1));
        }
        sb.put_file(target, content);
      }
    } else {
      sb.set_cwd("/");
      auto result = sb.exec(Command(s.payload));
      outcome.log += result.stdout_text + result.stderr_text;
      if (result.return_code != 0) {
        return fail(i, result.return_code,
                    fmt::format("The command '/bin/sh -c {}' returned a non-zero code: {}\n",
                                s.payload, result.return_code));
      }
    }
  }
  outcome.built = outcome.sandbox != nullptr;
  return outcome;
}

VerifyResult verify_sim(const std::vector<DockerfileStatement>& statements, const AssetReader& assets,
                        const sim::Scenario& scenario, const std::string& repo_dir) {
  sim::SimFactory factory(std::make_shared<sim::Scenario>(scenario.for_replay()));
  VerifyResult result;
  auto outcome = replay(statements, assets, factory);
  result.log = outcome.log;
  result.dockerfile_built = outcome.built;
  if (!outcome.built) return result;
  auto run = outcome.sandbox->exec(Command("cd " + shell::quote(repo_dir) + " && pytest"));
  result.log += run.stdout_text + run.stderr_text;
  result.tests_ran = tests_ran(run.return_code);
  return result;
}

VerifyResult verify_container(const std::filesystem::path& dockerfile_dir, const std::string& repo_dir,
                              std::chrono::milliseconds build_timeout,
                              std::chrono::milliseconds test_timeout) {
  std::random_device rd;
  auto tag = fmt::format("envforge-verify-{:08x}", rd());
  VerifyResult result;
  auto build = build_image(dockerfile_dir, tag, build_timeout);
  result.log = build.stdout_text + build.stderr_text;
  result.dockerfile_built = build.exit_code == 0;
  if (result.dockerfile_built) {
    auto run = run_in_image(tag, "cd " + shell::quote(repo_dir) + " && pytest", test_timeout);
    result.log += run.stdout_text + run.stderr_text;
    result.tests_ran = !run.timed_out && tests_ran(run.exit_code);
    remove_image(tag);
  }
  return result;
}

VerifyResult verify_dockerfile(const std::filesystem::path& dockerfile_dir, Backend backend,
                               const sim::Scenario* scenario, const std::string& repo_dir) {
  if (backend == Backend::container) {
    if (!container_runtime_available()) {
      throw Error(ErrorCode::backend_unavailable, container_runtime() + " is not available");
    }
    return verify_container(dockerfile_dir, repo_dir);
  }
  if (scenario == nullptr) throw Error(ErrorCode::backend_unavailable, "sim backend needs a scenario");
  auto statements = parse_dockerfile(read_file(dockerfile_dir / "Dockerfile"));
  return verify_sim(statements, directory_assets(dockerfile_dir), *scenario, repo_dir);
}

}  // namespace envforge
