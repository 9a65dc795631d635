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
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "envforge/sandbox.hpp"
#include "envforge/sim_sandbox.hpp"
#include "envforge/synthesizer.hpp"

namespace envforge {

// Contents of a COPY source as (path suffix, content) pairs. A plain file
// yields one pair with an empty suffix. Throws Error(file_missing).
using AssetReader =
    std::function<std::vector<std::pair<std::string, std::string>>(const std::string& source)>;

AssetReader directory_assets(std::filesystem::path context_dir);
AssetReader program_assets(const DockerfileProgram& program);

struct ReplayOutcome {
  bool built = false;
  std::optional<std::size_t> failed_statement;  // index into the statements
  int return_code = 0;
  std::string log;
  std::unique_ptr<Sandbox> sandbox;
};

// Executes the statements one by one the way an image build would: FROM
// starts a sandbox, ENV sets a variable, COPY writes files and each RUN is
// a fresh shell at "/".
ReplayOutcome replay(const std::vector<DockerfileStatement>& statements, const AssetReader& assets,
                     SandboxFactory& factory,
                     std::chrono::milliseconds timeout = kDefaultCommandTimeout);

struct VerifyResult {
  bool dockerfile_built = false;
  bool tests_ran = false;
  std::string log;
};

// Replays on the sim backend with the scenario's replay registry, then runs
// pytest in the repository.
VerifyResult verify_sim(const std::vector<DockerfileStatement>& statements, const AssetReader& assets,
                        const sim::Scenario& scenario, const std::string& repo_dir = "/repo");

// Builds the image from `dockerfile_dir` and runs pytest in a container of it.
VerifyResult verify_container(const std::filesystem::path& dockerfile_dir,
                              const std::string& repo_dir = "/repo",
                              std::chrono::milliseconds build_timeout = std::chrono::hours(2),
                              std::chrono::milliseconds test_timeout = kDefaultCommandTimeout);

// Dispatches on the backend; the sim backend needs a scenario.
VerifyResult verify_dockerfile(const std::filesystem::path& dockerfile_dir, Backend backend,
                               const sim::Scenario* scenario = nullptr,
                               const std::string& repo_dir = "/repo");

}  // namespace envforge
