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

#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

// A deliberately small shell-line reader: quotes, backslash escapes,
// pipelines, "&&" / "||" / ";" lists and redirections. No globbing, no
// subshells, no aliases. Command substitution is detected, never evaluated.
namespace envforge::shell {

struct Redirect {
  enum class Mode { truncate, append, input, duplicate, heredoc };

  int fd = 1;
  Mode mode = Mode::truncate;
  std::string target;

  // True when a file may be written; "2>&1" and ">&-" only rewire descriptors.
  bool writes_output() const noexcept {
    if (mode == Mode::duplicate) {
      return !(target == "-" ||
               (!target.empty() && target.find_first_not_of("0123456789") == std::string::npos));
    }
    return mode == Mode::truncate || mode == Mode::append;
  }
};

struct SimpleCommand {
  std::vector<std::string> assignments;  // leading NAME=value words
  std::vector<std::string> argv;
  std::vector<Redirect> redirects;

  std::string_view program() const noexcept {
    return argv.empty() ? std::string_view{} : std::string_view{argv.front()};
  }
};

struct Pipeline {
  std::vector<SimpleCommand> stages;
};

enum class Connector { first, and_then, or_else, sequence };

struct CommandList {
  std::vector<std::pair<Connector, Pipeline>> items;
  bool has_substitution = false;

  bool redirects_output() const;
  std::size_t stage_count() const;
  bool single_stage() const { return stage_count() == 1; }
  const SimpleCommand& first_stage() const { return items.front().second.stages.front(); }

  template <typename F>
  void for_each_stage(F&& fn) const {
    for (const auto& item : items) {
      for (const auto& stage : item.second.stages) fn(stage);
    }
  }
};

// Returns the value for $NAME / ${NAME}; nullopt expands to "".
using VariableLookup = std::function<std::optional<std::string>(std::string_view)>;

// Throws Error(unparsable_line) on unbalanced quotes or a dangling operator.
// With `lookup`, variables outside single quotes are expanded (no field
// splitting); without it, "$NAME" is kept verbatim.
CommandList parse(std::string_view line, const VariableLookup* lookup = nullptr);

// Single-quotes `word` unless it only contains shell-inert characters.
std::string quote(std::string_view word);

// Renders a command back to a line that parses to the same structure.
std::string render(const SimpleCommand& command);
std::string render(const CommandList& list);
// Like render, but words holding "$" are double-quoted so that variables
// read without a lookup expand again.
std::string render_keeping_variables(const CommandList& list);

bool is_identifier(std::string_view name);

}  // namespace envforge::shell
