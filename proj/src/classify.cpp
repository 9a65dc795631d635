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

#include "envforge/classify.hpp"

#include <algorithm>

#include "envforge/error.hpp"

namespace envforge {

namespace {

// Offset of the "install" sub-command's first argument within argv, or 0
// when the stage is not an install.
std::size_t install_args_offset(const shell::SimpleCommand& stage, std::string& tool) {
  const auto& argv = stage.argv;
  if (argv.empty()) return 0;
  const auto& prog = argv[0];
  std::size_t sub = 0;
  if (prog == "pip" || prog == "pip3") {
    tool = "pip";
    sub = 1;
  } else if ((prog == "python" || prog == "python3") && argv.size() > 2 && argv[1] == "-m" &&
             argv[2] == "pip") {
    tool = "pip";
    sub = 3;
  } else if (prog == "apt-get" || prog == "apt") {
    tool = "apt";
    sub = 1;
  } else {
    return 0;
  }
  // apt accepts options before the sub-command ("apt-get -y install x")
  while (sub < argv.size() && argv[sub].starts_with("-") && tool == "apt") ++sub;
  if (sub < argv.size() && argv[sub] == "install") return sub + 1;
  return 0;
}

std::vector<InstallSpec> pip_specs(const std::vector<std::string>& argv, std::size_t i) {
  static const std::set<std::string, std::less<>> bare_flags = {
      "-U", "--upgrade", "-q", "--quiet", "-v", "--verbose", "--no-cache-dir",
      "--user", "--pre", "--no-deps", "--force-reinstall", "--ignore-installed",
      "--no-input", "--disable-pip-version-check", "--no-build-isolation", "-I"};
  static const std::set<std::string, std::less<>> valued_flags = {
      "-i", "--index-url", "--extra-index-url", "-f", "--find-links", "--trusted-host",
      "-c", "--constraint", "--timeout", "--retries", "-t", "--target", "--prefix", "--root"};
  std::vector<InstallSpec> out;
  for (; i < argv.size(); ++i) {
    const auto& arg = argv[i];
    if (arg == "-r" || arg == "--requirement" || arg == "-e" || arg == "--editable") {
      if (i + 1 >= argv.size()) throw Error(ErrorCode::unsupported_flag, arg + " without a value");
      auto kind = (arg == "-r" || arg == "--requirement") ? InstallSpec::Kind::requirements_file
                                                          : InstallSpec::Kind::editable;
      out.push_back({"pip", kind, argv[++i], ""});
    } else if (arg.starts_with("--requirement=")) {
      out.push_back({"pip", InstallSpec::Kind::requirements_file,
                     arg.substr(std::string_view("--requirement=").size()), ""});
    } else if (bare_flags.contains(arg)) {
      continue;
    } else if (valued_flags.contains(arg)) {
      ++i;
    } else if (arg.starts_with("--") && arg.find('=') != std::string::npos &&
               valued_flags.contains(std::string_view(arg).substr(0, arg.find('=')))) {
      continue;
    } else if (arg.starts_with("-")) {
      throw Error(ErrorCode::unsupported_flag, arg);
    } else {
      auto [name, constraint] = split_requirement(arg);
      out.push_back({"pip", InstallSpec::Kind::package, std::move(name), std::move(constraint)});
    }
  }
  return out;
}

std::vector<InstallSpec> apt_specs(const std::vector<std::string>& argv, std::size_t i) {
  static const std::set<std::string, std::less<>> bare_flags = {
      "-y", "--yes", "--assume-yes", "-q", "-qq", "--quiet", "--no-install-recommends",
      "--no-install-suggests", "--fix-missing", "-f", "--fix-broken"};
  std::vector<InstallSpec> out;
  for (; i < argv.size(); ++i) {
    const auto& arg = argv[i];
    if (bare_flags.contains(arg)) continue;
    if (arg.starts_with("-")) throw Error(ErrorCode::unsupported_flag, arg);
    auto eq = arg.find('=');
    out.push_back({"apt", InstallSpec::Kind::package, arg.substr(0, eq),
                   eq == std::string::npos ? "" : arg.substr(eq)});
  }
  return out;
}

bool is_reserved(std::string_view program, std::initializer_list<std::string_view> verbs) {
  return std::find(verbs.begin(), verbs.end(), program) != verbs.end();
}

}  // namespace

const std::set<std::string, std::less<>>& safe_list() {
  static const std::set<std::string, std::less<>> list = {
      "cd",     "ls",     "cat",      "echo",   "pwd",    "whoami",     "who",   "date",
      "cal",    "df",     "du",       "free",   "uname",  "uptime",     "w",     "ps",
      "pgrep",  "top",    "dmesg",    "tail",   "head",   "grep",       "find",  "locate",
      "which",  "file",   "stat",     "cmp",    "diff",   "xz",         "unxz",  "sort",
      "wc",     "tr",     "cut",      "paste",  "tee",    "awk",        "env",   "printenv",
      "hostname", "ping", "traceroute", "ssh"};
  return list;
}

bool is_safe_program(std::string_view program) { return safe_list().contains(program); }

bool is_install_stage(const shell::SimpleCommand& stage) {
  std::string tool;
  return install_args_offset(stage, tool) != 0;
}

std::pair<std::string, std::string> split_requirement(std::string_view spec) {
  auto cut = spec.find_first_of("<>=!~ ;[");
  std::string name(spec.substr(0, cut));
  if (cut == std::string_view::npos) return {name, ""};
  auto rest = spec.substr(cut);
  if (rest.front() == '[') {  // extras are dropped
    auto close = rest.find(']');
    rest = close == std::string_view::npos ? std::string_view{} : rest.substr(close + 1);
  }
  auto marker = rest.find(';');
  if (marker != std::string_view::npos) rest = rest.substr(0, marker);
  std::string constraint;
  for (char c : rest) {
    if (c != ' ' && c != '\t') constraint += c;
  }
  return {name, constraint};
}

std::vector<InstallSpec> parse_install_stage(const shell::SimpleCommand& stage) {
  std::string tool;
  auto offset = install_args_offset(stage, tool);
  if (offset == 0) return {};
  return tool == "pip" ? pip_specs(stage.argv, offset) : apt_specs(stage.argv, offset);
}

std::vector<InstallSpec> parse_install_specs(const Command& command) {
  std::vector<InstallSpec> out;
  command.parsed().for_each_stage([&](const shell::SimpleCommand& stage) {
    auto specs = parse_install_stage(stage);
    out.insert(out.end(), specs.begin(), specs.end());
  });
  return out;
}

Classification classify(const Command& command) {
  const auto& parsed = command.parsed();
  const auto& first = parsed.first_stage();

  if (parsed.single_stage() && first.redirects.empty() && first.assignments.empty()) {
    auto program = first.program();
    if (is_reserved(program, {"change_python_version", "clear_configuration"})) {
      return {CommandKind::base_image_change, {}};
    }
    if (is_reserved(program, {"edit_file", "stage_repo"})) {
      return {CommandKind::code_edit, {}};
    }
    if (program == "export" && first.argv.size() > 1) {
      EnvPairs pairs;
      bool all_assignments = true;
      for (std::size_t i = 1; i < first.argv.size(); ++i) {
        const auto& arg = first.argv[i];
        auto eq = arg.find('=');
        if (eq == std::string::npos || !shell::is_identifier(std::string_view(arg).substr(0, eq))) {
          all_assignments = false;
          break;
        }
        pairs.emplace_back(arg.substr(0, eq), arg.substr(eq + 1));
      }
      if (all_assignments && !parsed.has_substitution) {
        return {CommandKind::export_env, std::move(pairs)};
      }
    }
  }

  bool any_install = false;
  bool all_safe = !parsed.has_substitution && !command.redirects_output();
  parsed.for_each_stage([&](const shell::SimpleCommand& stage) {
    if (is_install_stage(stage)) any_install = true;
    if (!is_safe_program(stage.program())) all_safe = false;
  });
  if (all_safe) return {CommandKind::safe, {}};
  if (any_install) {
    try {
      return {CommandKind::install, parse_install_specs(command)};
    } catch (const Error&) {
      // flags we cannot interpret: run it, but never try to pin it
      return {CommandKind::mutating, {}};
    }
  }
  return {CommandKind::mutating, {}};
}

}  // namespace envforge
