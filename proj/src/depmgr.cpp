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

#include "envforge/depmgr.hpp"

#include <algorithm>
#include <cctype>

#include <fmt/format.h>

#include "envforge/classify.hpp"
#include "envforge/error.hpp"

namespace envforge {

namespace {

bool valid_package_name(std::string_view name) {
  if (name.empty()) return false;
  return std::all_of(name.begin(), name.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.' ||
           c == '+';
  });
}

std::string describe(const VersionConstraint& c) {
  return c.is_latest() ? "latest" : c.to_string();
}

std::string_view trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

WaitingItem WaitingItem::make(std::string_view package, std::string_view constraint,
                              std::string_view tool) {
  if (tool != "pip" && tool != "apt") {
    throw Error(ErrorCode::bad_constraint, fmt::format("unknown tool \"{}\"", tool));
  }
  if (!valid_package_name(package)) {
    throw Error(ErrorCode::bad_constraint, fmt::format("invalid package name \"{}\"", package));
  }
  WaitingItem item;
  item.tool = std::string(tool);
  item.package = tool == "pip" ? normalize_package_name(package) : std::string(package);
  item.constraint = VersionConstraint::parse(constraint);
  if (tool == "apt" && !item.constraint.is_latest()) {
    throw Error(ErrorCode::bad_constraint, "apt packages take no version constraint");
  }
  return item;
}

AddResult DependencyLists::wl_add(WaitingItem item) {
  auto existing = std::find_if(waiting_.begin(), waiting_.end(), [&](const WaitingItem& w) {
    return w.package == item.package && w.tool == item.tool;
  });
  if (existing == waiting_.end()) {
    waiting_.push_back(std::move(item));
    return AddResult::added;
  }
  if (existing->constraint.to_string() == item.constraint.to_string()) return AddResult::unchanged;
  ConflictItem conflict{item.package, item.tool, existing->constraint, item.constraint};
  if (std::find(conflicts_.begin(), conflicts_.end(), conflict) == conflicts_.end()) {
    conflicts_.push_back(std::move(conflict));
  }
  return AddResult::conflict_queued;
}

int DependencyLists::wl_addfile(std::string_view text) {
  std::vector<WaitingItem> items;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    auto hash = line.find('#');
    line = trim(line.substr(0, hash));
    if (line.empty()) continue;
    if (line.front() == '-') {
      throw Error(ErrorCode::parse_error, fmt::format("line {}: options are not supported", line_no));
    }
    auto [name, constraint] = split_requirement(line);
    try {
      items.push_back(WaitingItem::make(trim(name), constraint, "pip"));
    } catch (const Error& e) {
      throw Error(ErrorCode::parse_error, fmt::format("line {}: {}", line_no, e.detail()));
    }
  }
  int added = 0;
  for (auto& item : items) {
    if (wl_add(std::move(item)) == AddResult::added) ++added;
  }
  return added;
}

std::string DependencyLists::wl_show() const {
  if (waiting_.empty()) return "waiting list is empty\n";
  std::string out;
  for (std::size_t i = 0; i < waiting_.size(); ++i) {
    const auto& w = waiting_[i];
    out += fmt::format("{}. {} {} ({})\n", i + 1, w.package, describe(w.constraint), w.tool);
  }
  return out;
}

void DependencyLists::cl_solve(std::string_view package, std::string_view tool,
                               const Resolution& resolution) {
  if (conflicts_.empty() || conflicts_.front().package != package ||
      conflicts_.front().tool != tool) {
    throw Error(ErrorCode::no_such_conflict, fmt::format("{} ({})", package, tool));
  }
  cl_solve_first(resolution);
}

void DependencyLists::cl_solve_first(const Resolution& resolution) {
  if (conflicts_.empty()) throw Error(ErrorCode::no_such_conflict, "conflict list is empty");
  ConflictItem conflict = conflicts_.front();
  if (const auto* replacement = std::get_if<VersionConstraint>(&resolution)) {
    if (conflict.tool == "apt" && !replacement->is_latest()) {
      throw Error(ErrorCode::bad_constraint, "apt packages take no version constraint");
    }
    for (auto& w : waiting_) {
      if (w.package == conflict.package && w.tool == conflict.tool) w.constraint = *replacement;
    }
  }
  conflicts_.pop_front();
}

std::string DependencyLists::cl_show() const {
  if (conflicts_.empty()) return "conflict list is empty\n";
  std::string out;
  for (std::size_t i = 0; i < conflicts_.size(); ++i) {
    const auto& c = conflicts_[i];
    out += fmt::format("{}. {} ({}): existing {} vs incoming {}\n", i + 1, c.package, c.tool,
                       describe(c.existing), describe(c.incoming));
  }
  return out;
}

Command DependencyLists::install_command(const WaitingItem& item) {
  if (item.tool == "apt") return Command("apt-get install -y " + shell::quote(item.package));
  return Command("pip install " + shell::quote(item.package + item.constraint.to_string()));
}

std::vector<DownloadResult> DependencyLists::download(const InstallRunner& run) {
  if (!conflicts_.empty()) {
    throw Error(ErrorCode::conflicts_pending,
                fmt::format("{} conflict(s) must be solved first", conflicts_.size()));
  }
  if (waiting_.empty()) throw Error(ErrorCode::empty_waiting_list, "nothing to download");
  std::vector<DownloadResult> results;
  while (!waiting_.empty()) {
    WaitingItem item = std::move(waiting_.front());
    waiting_.pop_front();
    auto record = run(install_command(item));
    DownloadResult result{item.package, item.tool, std::nullopt, record.return_code == 0,
                          record.return_code};
    if (result.ok) {
      for (const auto& p : record.installed) {
        bool same = p.tool == item.tool && (item.tool == "pip"
                                                ? normalize_package_name(p.package) == item.package
                                                : p.package == item.package);
        if (same) result.version = p.version;
      }
    }
    results.push_back(std::move(result));
  }
  return results;
}

}  // namespace envforge
