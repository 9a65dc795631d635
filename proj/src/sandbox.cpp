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

#include "envforge/sandbox.hpp"

#include <set>

#include "envforge/classify.hpp"
#include "envforge/version.hpp"

namespace envforge {

namespace {

std::set<std::string> tools_touched(const Classification& c) {
  std::set<std::string> tools;
  if (c.kind == CommandKind::install) {
    for (const auto& spec : c.installs()) tools.insert(spec.tool);
  }
  return tools;
}

std::string key_for(const std::string& tool, std::string_view package) {
  return tool == "pip" ? normalize_package_name(package) : std::string(package);
}

}  // namespace

std::string_view to_string(Backend backend) {
  return backend == Backend::container ? "docker" : "sim";
}

std::string resolve_path(std::string_view cwd, std::string_view path) {
  std::string joined;
  if (path.starts_with("/")) {
    joined = path;
  } else if (path == "~" || path.starts_with("~/")) {
    joined = "/root" + std::string(path.substr(1));
  } else {
    joined = std::string(cwd) + "/" + std::string(path);
  }
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (start <= joined.size()) {
    auto slash = joined.find('/', start);
    if (slash == std::string::npos) slash = joined.size();
    auto piece = joined.substr(start, slash - start);
    start = slash + 1;
    if (piece.empty() || piece == ".") continue;
    if (piece == "..") {
      if (!parts.empty()) parts.pop_back();
      continue;
    }
    parts.push_back(std::move(piece));
  }
  std::string out;
  for (const auto& p : parts) out += "/" + p;
  return out.empty() ? "/" : out;
}

GuardedResult exec_guarded(Sandbox& sandbox, const Command& command,
                           const GuardOptions& options) {
  auto classification = classify(command);
  CommandKind kind = options.kind.value_or(classification.kind);

  CommandRecord record(command);
  record.turn = options.turn;
  record.cwd = sandbox.handle().cwd;
  record.classification = kind;

  auto tools = tools_touched(classification);
  std::map<std::string, std::map<std::string, std::string>> before;
  for (const auto& tool : tools) before[tool] = sandbox.installed_versions(tool);

  if (kind != CommandKind::safe && options.rollback_enabled) {
    record.snapshot_before = sandbox.snapshot();
  }
  for (const auto& [path, content] : options.uploads) sandbox.put_file(path, content);

  ExecResult result = options.run ? options.run(sandbox) : sandbox.exec(command);

  record.return_code = result.return_code;
  record.stdout_excerpt = truncate(sanitize_utf8(result.stdout_text), options.head_limit,
                                   options.tail_limit);
  record.stderr_excerpt = truncate(sanitize_utf8(result.stderr_text), options.head_limit,
                                   options.tail_limit);

  if (kind == CommandKind::export_env && classification.kind == CommandKind::export_env) {
    for (const auto& [key, raw_value] : classification.exports()) {
      auto value = result.return_code == 0 ? sandbox.env_value(key) : std::nullopt;
      record.env_delta.emplace_back(key, value.value_or(raw_value));
    }
  }

  if (result.return_code != 0 && record.snapshot_before) {
    sandbox.rollback(*record.snapshot_before);
    record.rolled_back = true;
  } else if (result.return_code == 0 && !tools.empty()) {
    // every package the command named, plus anything it changed on the side
    std::set<std::pair<std::string, std::string>> seen;
    for (const auto& tool : tools) {
      auto after = sandbox.installed_versions(tool);
      for (const auto& spec : classification.installs()) {
        if (spec.tool != tool || spec.kind != InstallSpec::Kind::package) continue;
        auto it = after.find(key_for(tool, spec.package));
        if (it != after.end() && seen.emplace(tool, it->first).second) {
          record.installed.push_back({tool, it->first, it->second});
        }
      }
      for (const auto& [package, version] : after) {
        auto old = before[tool].find(package);
        bool changed = old == before[tool].end() || old->second != version;
        if (changed && seen.emplace(tool, package).second) {
          record.installed.push_back({tool, package, version});
        }
      }
    }
  }
  return {std::move(result), std::move(record)};
}

}  // namespace envforge
