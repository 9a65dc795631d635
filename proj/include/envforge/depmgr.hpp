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

#include <deque>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "envforge/trace.hpp"
#include "envforge/version.hpp"

namespace envforge {

struct WaitingItem {
  std::string package;
  VersionConstraint constraint;
  std::string tool;  // "pip" or "apt"

  // Validates the tool, normalizes pip names and parses the constraint.
  // apt packages accept no constraint. Throws Error(bad_constraint).
  static WaitingItem make(std::string_view package, std::string_view constraint,
                          std::string_view tool);

  friend bool operator==(const WaitingItem&, const WaitingItem&) = default;
};

struct ConflictItem {
  std::string package;
  std::string tool;
  VersionConstraint existing;
  VersionConstraint incoming;

  friend bool operator==(const ConflictItem&, const ConflictItem&) = default;
};

enum class AddResult { added, conflict_queued, unchanged };

struct KeepOriginal {};
using Resolution = std::variant<VersionConstraint, KeepOriginal>;

struct DownloadResult {
  std::string package;
  std::string tool;
  std::optional<std::string> version;  // set when ok
  bool ok = false;
  int return_code = 0;
};

// Runs one install command guarded (snapshot, rollback on failure) and
// returns its populated record.
using InstallRunner = std::function<CommandRecord(const Command&)>;

// The waiting list / conflict list pair of one build session. Conflict
// detection is textual: any differing constraint for a known (package, tool)
// is queued for the policy to settle with cl_solve.
class DependencyLists {
 public:
  AddResult wl_add(WaitingItem item);

  // Feeds every "name [constraints]" line of a requirements-style text
  // through wl_add and returns how many were added. Throws
  // Error(parse_error) naming the 1-based line.
  int wl_addfile(std::string_view text);

  void wl_clear() { waiting_.clear(); }
  std::string wl_show() const;

  // Settles the first conflict, which must belong to (package, tool).
  void cl_solve(std::string_view package, std::string_view tool, const Resolution& resolution);
  // Settles whatever conflict is first.
  void cl_solve_first(const Resolution& resolution);
  void cl_clear() { conflicts_.clear(); }
  std::string cl_show() const;

  // Drains the waiting list FIFO; one failed item does not stop the batch.
  std::vector<DownloadResult> download(const InstallRunner& run);

  static Command install_command(const WaitingItem& item);

  const std::deque<WaitingItem>& waiting() const noexcept { return waiting_; }
  const std::deque<ConflictItem>& conflicts() const noexcept { return conflicts_; }

 private:
  std::deque<WaitingItem> waiting_;
  std::deque<ConflictItem> conflicts_;
};

}  // namespace envforge
