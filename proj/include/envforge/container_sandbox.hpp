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

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "envforge/process.hpp"
#include "envforge/sandbox.hpp"

namespace envforge {

// Container CLI to drive; ENVFORGE_CONTAINER_RUNTIME or "docker".
std::string container_runtime();

// True when the runtime CLI exists and its daemon answers.
bool container_runtime_available();

// A long-lived container named "envforge-<session_id>". Commands run via
// "exec" in a fresh shell; snapshots are committed images.
class ContainerSandbox final : public Sandbox {
 public:
  // Throws Error(image_unavailable) or Error(backend_unavailable).
  explicit ContainerSandbox(const BaseImage& image);
  ~ContainerSandbox() override;
  ContainerSandbox(const ContainerSandbox&) = delete;
  ContainerSandbox& operator=(const ContainerSandbox&) = delete;

  const SandboxHandle& handle() const override { return handle_; }
  ExecResult exec(const Command& command) override;
  SnapshotId snapshot(bool pinned = false) override;
  void rollback(const SnapshotId& id) override;
  void reset_with_base_image(const BaseImage& image) override;
  std::map<std::string, std::string> installed_versions(std::string_view tool) override;
  void put_file(std::string_view path, std::string_view content) override;
  std::optional<std::string> read_file(std::string_view path) override;
  void set_env(std::string_view key, std::string_view value) override;
  std::optional<std::string> env_value(std::string_view key) const override;
  void set_cwd(std::string_view path) override;
  void set_timeout(std::chrono::milliseconds timeout) override { timeout_ = timeout; }
  std::int64_t elapsed_ms() const override { return elapsed_ms_; }

  const std::string& container_name() const noexcept { return name_; }

 private:
  struct Saved {
    std::string image;
    std::string cwd;
    std::map<std::string, std::string> env;
  };

  void launch(const std::string& image);
  void remove_container();
  void remove_image(const std::string& image);
  ProcessResult docker_exec(const std::string& script, const std::string& stdin_text = {},
                            std::optional<std::chrono::milliseconds> timeout = std::nullopt) const;

  SandboxHandle handle_;
  std::string name_;
  std::map<std::string, std::string> env_;  // variables exported during the session
  std::map<std::string, Saved> snapshots_;
  std::optional<std::string> latest_unpinned_;
  int snapshot_counter_ = 0;
  std::chrono::milliseconds timeout_ = kDefaultCommandTimeout;
  std::int64_t elapsed_ms_ = 0;
};

class ContainerFactory final : public SandboxFactory {
 public:
  Backend backend() const override { return Backend::container; }
  std::unique_ptr<Sandbox> start(const BaseImage& image) override {
    return std::make_unique<ContainerSandbox>(image);
  }
};

// "docker build -t TAG DIR".
ProcessResult build_image(const std::filesystem::path& context_dir, const std::string& tag,
                          std::chrono::milliseconds timeout);

// Runs a shell line in a throwaway container of `image`.
ProcessResult run_in_image(const std::string& image, const std::string& line,
                           std::chrono::milliseconds timeout);

void remove_image(const std::string& image);

}  // namespace envforge
