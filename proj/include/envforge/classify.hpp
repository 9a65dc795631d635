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

#include <set>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "envforge/trace.hpp"

namespace envforge {

struct InstallSpec {
  enum class Kind { package, requirements_file, editable };

  std::string tool;  // "pip" or "apt"
  Kind kind = Kind::package;
  std::string package;     // package name, or the path for the file kinds
  std::string constraint;  // raw constraint text, e.g. ">=1.0,<2.0"; empty = latest

  friend bool operator==(const InstallSpec&, const InstallSpec&) = default;
};

using EnvPairs = std::vector<std::pair<std::string, std::string>>;

struct Classification {
  CommandKind kind = CommandKind::mutating;
  std::variant<std::monostate, EnvPairs, std::vector<InstallSpec>> detail;

  const EnvPairs& exports() const { return std::get<EnvPairs>(detail); }
  const std::vector<InstallSpec>& installs() const {
    return std::get<std::vector<InstallSpec>>(detail);
  }
};

// The allowlist of read-only commands exempt from snapshot and synthesis.
// Note "tee" and "find" are on it even though they can write; kept verbatim.
const std::set<std::string, std::less<>>& safe_list();

bool is_safe_program(std::string_view program);

// A line is safe only when every stage of every pipeline runs an allowlisted
// program and nothing redirects output. Chains take their most dangerous
// member: any install stage makes the line an install, otherwise mutating.
Classification classify(const Command& command);

// Package specs of every pip / apt install stage in the line.
// Throws Error(unsupported_flag) for flags it does not understand.
std::vector<InstallSpec> parse_install_specs(const Command& command);

// Specs of a single install stage; empty for stages that do not install.
std::vector<InstallSpec> parse_install_stage(const shell::SimpleCommand& stage);

// True if the stage invokes "pip install", "pip3 install",
// "python -m pip install" or "apt-get/apt install".
bool is_install_stage(const shell::SimpleCommand& stage);

// Splits "name>=1.0,<2.0" into ("name", ">=1.0,<2.0").
std::pair<std::string, std::string> split_requirement(std::string_view spec);

}  // namespace envforge
