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

#include "envforge/container_sandbox.hpp"

#include <unistd.h>

#include <atomic>
#include <cstdlib>
#include <random>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "envforge/classify.hpp"
#include "envforge/error.hpp"
#include "envforge/shell.hpp"
#include "envforge/version.hpp"

namespace envforge {

namespace {

constexpr std::chrono::seconds kControlTimeout{120};
constexpr std::chrono::minutes kPullTimeout{30};

std::atomic<int> g_counter{0};

std::string new_session_id() {
  std::random_device rd;
  return fmt::format("{}-{}-{:04x}", ::getpid(), ++g_counter, rd() & 0xffff);
}

ProcessResult docker(std::vector<std::string> args,
                     std::chrono::milliseconds timeout = kControlTimeout,
                     const std::string& stdin_text = {}) {
  args.insert(args.begin(), container_runtime());
  return run_process(args, timeout, stdin_text);
}

std::string trim(std::string text) {
  while (!text.empty() && (text.back() == '\n' || text.back() == '\r')) text.pop_back();
  return text;
}

bool image_missing(const std::string& stderr_text) {
  for (const char* marker : {"Unable to find image", "pull access denied", "manifest unknown",
                             "not found", "repository does not exist"}) {
    if (stderr_text.find(marker) != std::string::npos) return true;
  }
  return false;
}

}  // namespace

std::string container_runtime() {
  const char* runtime = std::getenv("ENVFORGE_CONTAINER_RUNTIME");
  return runtime && *runtime ? runtime : "docker";
}

bool container_runtime_available() {
  if (!program_on_path(container_runtime())) return false;
  try {
    return docker({"info", "--format", "{{.ServerVersion}}"}, std::chrono::seconds(20)).exit_code == 0;
  } catch (const Error&) {
    return false;
  }
}

ContainerSandbox::ContainerSandbox(const BaseImage& image) {
  if (!program_on_path(container_runtime())) {
    throw Error(ErrorCode::backend_unavailable, container_runtime() + " not found on PATH");
  }
  handle_.backend = Backend::container;
  handle_.session_id = new_session_id();
  name_ = "envforge-" + handle_.session_id;
  launch(image.name);
  handle_.base_image = image;
  handle_.cwd = "/";
}

ContainerSandbox::~ContainerSandbox() {
  try {
    remove_container();
    for (const auto& [id, saved] : snapshots_) remove_image(saved.image);
  } catch (const std::exception& e) {
    spdlog::warn("cleanup of {} failed: {}", name_, e.what());
  }
}

void ContainerSandbox::launch(const std::string& image) {
  auto r = docker({"run", "-d", "--name", name_, "--entrypoint", "sleep", image, "infinity"},
                  kPullTimeout);
  if (r.exit_code != 0) {
    docker({"rm", "-f", name_});
    if (image_missing(r.stderr_text)) throw Error(ErrorCode::image_unavailable, image);
    throw Error(ErrorCode::backend_unavailable, trim(r.stderr_text));
  }
}

void ContainerSandbox::remove_container() { docker({"rm", "-f", name_}); }

void ContainerSandbox::remove_image(const std::string& image) { envforge::remove_image(image); }

ProcessResult ContainerSandbox::docker_exec(const std::string& script, const std::string& stdin_text,
                                            std::optional<std::chrono::milliseconds> timeout) const {
  std::vector<std::string> args{"exec"};
  if (!stdin_text.empty()) args.push_back("-i");
  args.insert(args.end(), {"-w", handle_.cwd});
  for (const auto& [k, v] : env_) args.insert(args.end(), {"-e", k + "=" + v});
  args.insert(args.end(), {name_, "/bin/sh", "-c", script});
  return docker(args, timeout.value_or(kControlTimeout), stdin_text);
}

ExecResult ContainerSandbox::exec(const Command& command) {
  const auto& list = command.parsed();
  const auto& first = list.first_stage();
  bool bare_cd = list.single_stage() && first.program() == "cd" && first.redirects.empty();
  bool is_export = classify(command).kind == CommandKind::export_env;

  std::string script = command.raw();
  std::vector<std::string> exported;
  if (bare_cd) {
    script += " && pwd";
  } else if (is_export) {
    for (const auto& [k, v] : classify(command).exports()) exported.push_back(k);
    script += " && printf '\\036%s' ";
    for (const auto& k : exported) script += "\"$" + k + "\" ";
  }
  auto r = docker_exec(script, {}, timeout_);
  ExecResult result;
  result.return_code = r.exit_code;
  result.stdout_text = std::move(r.stdout_text);
  result.stderr_text = std::move(r.stderr_text);
  result.duration_ms = r.duration_ms;
  elapsed_ms_ += r.duration_ms;
  if (r.timed_out) {
    result.stderr_text += fmt::format("command timed out after {} s\n", timeout_.count() / 1000);
    return result;
  }
  if (result.return_code == 0 && bare_cd) {
    handle_.cwd = trim(result.stdout_text);
    result.stdout_text.clear();
  } else if (result.return_code == 0 && is_export) {
    auto marker = result.stdout_text.find('\036');
    std::string values = marker == std::string::npos ? "" : result.stdout_text.substr(marker + 1);
    result.stdout_text.resize(marker == std::string::npos ? result.stdout_text.size() : marker);
    std::size_t pos = 0;
    for (const auto& k : exported) {
      auto next = values.find('\036', pos);
      env_[k] = values.substr(pos, next == std::string::npos ? std::string::npos : next - pos);
      pos = next == std::string::npos ? values.size() : next + 1;
    }
  }
  return result;
}

SnapshotId ContainerSandbox::snapshot(bool pinned) {
  auto image = fmt::format("envforge-snap-{}:{}", handle_.session_id, ++snapshot_counter_);
  auto r = docker({"commit", name_, image}, std::chrono::minutes(20));
  if (r.exit_code != 0) throw Error(ErrorCode::backend_io, "commit failed: " + trim(r.stderr_text));
  SnapshotId id{image};
  if (!pinned && latest_unpinned_) {
    remove_image(snapshots_.at(*latest_unpinned_).image);
    snapshots_.erase(*latest_unpinned_);
  }
  snapshots_[id.id] = Saved{image, handle_.cwd, env_};
  if (!pinned) latest_unpinned_ = id.id;
  return id;
}

void ContainerSandbox::rollback(const SnapshotId& id) {
  auto it = snapshots_.find(id.id);
  if (it == snapshots_.end()) throw Error(ErrorCode::unknown_snapshot, id.id);
  remove_container();
  launch(it->second.image);
  handle_.cwd = it->second.cwd;
  env_ = it->second.env;
}

void ContainerSandbox::reset_with_base_image(const BaseImage& image) {
  remove_container();
  for (const auto& [id, saved] : snapshots_) remove_image(saved.image);
  snapshots_.clear();
  latest_unpinned_.reset();
  env_.clear();
  handle_.cwd = "/";
  try {
    launch(image.name);
  } catch (const Error&) {
    launch(handle_.base_image.name);
    throw;
  }
  handle_.base_image = image;
}

std::map<std::string, std::string> ContainerSandbox::installed_versions(std::string_view tool) {
  std::map<std::string, std::string> versions;
  if (tool == "pip") {
    auto r = docker_exec("python -m pip list --format=freeze 2>/dev/null");
    std::istringstream lines(r.stdout_text);
    for (std::string line; std::getline(lines, line);) {
      auto eq = line.find("==");
      if (eq != std::string::npos) {
        versions[normalize_package_name(line.substr(0, eq))] = trim(line.substr(eq + 2));
      }
    }
  } else if (tool == "apt") {
    auto r = docker_exec("dpkg-query -W -f='${Package}=${Version}\\n' 2>/dev/null");
    std::istringstream lines(r.stdout_text);
    for (std::string line; std::getline(lines, line);) {
      auto eq = line.find('=');
      if (eq != std::string::npos) versions[line.substr(0, eq)] = trim(line.substr(eq + 1));
    }
  } else {
    throw Error(ErrorCode::backend_io, "unknown package tool " + std::string(tool));
  }
  return versions;
}

void ContainerSandbox::put_file(std::string_view path, std::string_view content) {
  auto p = resolve_path("/", path);
  auto dir = p.substr(0, std::max<std::size_t>(1, p.rfind('/')));
  std::string script = fmt::format("mkdir -p {} && cat > {}", shell::quote(dir), shell::quote(p));
  ProcessResult r;
  if (content.empty()) {
    r = docker_exec(fmt::format("mkdir -p {} && : > {}", shell::quote(dir), shell::quote(p)));
  } else {
    r = docker_exec(script, std::string(content));
  }
  if (r.exit_code != 0) throw Error(ErrorCode::backend_io, "writing " + p + ": " + trim(r.stderr_text));
}

std::optional<std::string> ContainerSandbox::read_file(std::string_view path) {
  auto r = docker_exec("cat " + shell::quote(resolve_path(handle_.cwd, path)));
  if (r.exit_code != 0) return std::nullopt;
  return r.stdout_text;
}

void ContainerSandbox::set_env(std::string_view key, std::string_view value) {
  env_[std::string(key)] = std::string(value);
}

std::optional<std::string> ContainerSandbox::env_value(std::string_view key) const {
  auto it = env_.find(std::string(key));
  if (it != env_.end()) return it->second;
  auto r = docker_exec("printenv " + shell::quote(key));
  if (r.exit_code != 0) return std::nullopt;
  return trim(r.stdout_text);
}

void ContainerSandbox::set_cwd(std::string_view path) {
  auto p = resolve_path("/", path);
  auto r = docker({"exec", name_, "test", "-d", p});
  if (r.exit_code != 0) throw Error(ErrorCode::backend_io, "no such directory " + p);
  handle_.cwd = p;
}

ProcessResult build_image(const std::filesystem::path& context_dir, const std::string& tag,
                          std::chrono::milliseconds timeout) {
  return docker({"build", "-t", tag, context_dir.string()}, timeout);
}

ProcessResult run_in_image(const std::string& image, const std::string& line,
                           std::chrono::milliseconds timeout) {
  return docker({"run", "--rm", "--entrypoint", "/bin/sh", image, "-c", line}, timeout);
}

void remove_image(const std::string& image) { docker({"rmi", "-f", image}); }

}  // namespace envforge
