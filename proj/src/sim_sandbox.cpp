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

#include "envforge/sim_sandbox.hpp"

#include <fnmatch.h>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "envforge/classify.hpp"
#include "envforge/code_edit.hpp"
#include "envforge/error.hpp"
#include "envforge/version.hpp"
#include "json.hpp"

namespace envforge::sim {

namespace {

using json = nlohmann::json;

constexpr std::int64_t kStageMs = 5;
constexpr std::int64_t kCloneMs = 2000;

std::atomic<int> g_session_counter{0};

std::string parent_of(const std::string& path) {
  auto slash = path.rfind('/');
  if (slash == 0 || slash == std::string::npos) return "/";
  return path.substr(0, slash);
}

std::string base_name(const std::string& path) {
  auto slash = path.rfind('/');
  return slash == std::string::npos ? path : path.substr(slash + 1);
}

bool is_under(const std::string& path, const std::string& dir) {
  if (dir == "/") return path != "/";
  return path.size() > dir.size() && path.starts_with(dir) && path[dir.size()] == '/';
}

std::string join_path(const std::string& dir, const std::string& name) {
  return dir == "/" ? "/" + name : dir + "/" + name;
}

std::vector<std::string> split_lines(std::string_view text) {
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    lines.emplace_back(text.substr(start, end - start));
    start = end + 1;
  }
  return lines;
}

std::string join_lines(const std::vector<std::string>& lines) {
  std::string out;
  for (const auto& l : lines) out += l + "\n";
  return out;
}

std::optional<long> to_number(std::string_view text) {
  long value = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size()) return std::nullopt;
  return value;
}

Behavior behavior_from_string(const std::string& text) {
  if (text == "ok") return Behavior::ok;
  if (text == "fail_clean") return Behavior::fail_clean;
  if (text == "fail_polluting") return Behavior::fail_polluting;
  throw Error(ErrorCode::parse_error, "unknown registry behavior \"" + text + "\"");
}

Registry registry_from_json(const json& j) {
  Registry registry;
  if (!j.is_object()) throw Error(ErrorCode::parse_error, "registry must be a JSON object");
  for (const auto& [name, spec] : j.items()) {
    RegistryEntry entry;
    entry.tool = spec.value("tool", "pip");
    entry.behavior = behavior_from_string(spec.value("behavior", "ok"));
    if (spec.contains("versions")) {
      entry.versions = spec.at("versions").get<std::vector<std::string>>();
    } else if (spec.contains("version")) {
      entry.versions.push_back(spec.at("version").get<std::string>());
    }
    entry.side_installs = spec.value("side_installs", std::vector<std::string>{});
    entry.requires_python = spec.value("requires_python", "");
    entry.install_ms = spec.value("install_ms", std::int64_t{1500});
    entry.error = spec.value("error", "");
    registry.add(name, std::move(entry));
  }
  return registry;
}

TestProfile profile_from_json(const json& j) {
  TestProfile p;
  if (j.contains("outcome")) {
    auto o = outcome_from_string(j.at("outcome").get<std::string>());
    if (!o) throw Error(ErrorCode::parse_error, "unknown test outcome");
    p.outcome = *o;
  }
  p.requires_packages = j.value("requires", std::vector<std::string>{});
  p.requires_python = j.value("requires_python", "");
  p.requires_env = j.value("requires_env", std::map<std::string, std::string>{});
  p.test_count = j.value("test_count", 3);
  p.duration_ms = j.value("duration_ms", std::int64_t{2000});
  p.collect_error = j.value("collect_error", "");
  return p;
}

bool python_matches(const BaseImage& image, const std::string& constraint) {
  if (constraint.empty()) return true;
  if (!image.python_version) return false;
  return constraint_satisfies(Version::parse(*image.python_version),
                              VersionConstraint::parse(constraint));
}

struct StageIO {
  std::string in;
  std::string out;
  std::string err;
};

}  // namespace

std::optional<TestProfile::Outcome> outcome_from_string(std::string_view text) {
  using O = TestProfile::Outcome;
  if (text == "runs_pass") return O::runs_pass;
  if (text == "runs_fail") return O::runs_fail;
  if (text == "collect_error") return O::collect_error;
  if (text == "no_tests") return O::no_tests;
  return std::nullopt;
}

Registry Registry::parse(std::string_view json_text) {
  auto j = json::parse(json_text, nullptr, false);
  if (j.is_discarded()) throw Error(ErrorCode::parse_error, "registry is not valid JSON");
  try {
    return registry_from_json(j);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::parse_error, e.what());
  }
}

void Registry::add(const std::string& name, RegistryEntry entry) {
  auto key = entry.tool == "pip" ? normalize_package_name(name) : name;
  entries_[{entry.tool, key}] = std::move(entry);
}

const RegistryEntry* Registry::find(std::string_view tool, std::string_view name) const {
  auto key = tool == "pip" ? normalize_package_name(name) : std::string(name);
  auto it = entries_.find(std::pair<std::string, std::string>(tool, key));
  return it == entries_.end() ? nullptr : &it->second;
}

Scenario Scenario::parse(std::string_view json_text) {
  auto j = json::parse(json_text, nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    throw Error(ErrorCode::parse_error, "sim scenario is not a JSON object");
  }
  Scenario s;
  try {
    if (j.contains("registry")) s.registry = registry_from_json(j.at("registry"));
    if (j.contains("test_profile")) s.test_profile = profile_from_json(j.at("test_profile"));
    if (j.contains("repos")) {
      s.repos = j.at("repos").get<std::map<std::string, std::map<std::string, std::string>>>();
    }
    if (j.contains("replay_registry")) s.replay_registry = registry_from_json(j.at("replay_registry"));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::parse_error, e.what());
  }
  return s;
}

Scenario Scenario::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::file_missing, path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse(buffer.str());
}

Scenario Scenario::for_replay() const {
  Scenario s = *this;
  if (replay_registry) s.registry = *replay_registry;
  return s;
}

State State::empty() {
  State s;
  s.base_image = BaseImage("scratch");
  s.dirs = {"/"};
  return s;
}

State State::fresh(const BaseImage& image) {
  if (!image.python_version) throw Error(ErrorCode::image_unavailable, image.name);
  State s = empty();
  s.base_image = image;
  for (const char* dir : {"/bin", "/etc", "/home", "/root", "/tmp", "/usr", "/usr/bin",
                          "/usr/local", "/usr/local/bin", "/usr/local/lib", "/var"}) {
    s.dirs.insert(dir);
  }
  s.files["/etc/os-release"] = "PRETTY_NAME=\"Debian GNU/Linux 12 (bookworm)\"\n";
  s.env = {{"HOME", "/root"},
           {"LANG", "C.UTF-8"},
           {"PATH", "/usr/local/bin:/usr/local/sbin:/usr/sbin:/usr/bin:/sbin:/bin"},
           {"PYTHON_VERSION", *image.python_version + ".0"}};
  return s;
}

bool State::equivalent_ignoring_cwd(const State& other) const {
  return base_image == other.base_image && files == other.files && dirs == other.dirs &&
         env == other.env && installed == other.installed;
}

std::string State::describe_difference(const State& other) const {
  if (!(base_image == other.base_image)) {
    return fmt::format("base image {} vs {}", base_image.name, other.base_image.name);
  }
  for (const auto& [path, content] : files) {
    auto it = other.files.find(path);
    if (it == other.files.end()) return "file only on the left: " + path;
    if (it->second != content) return "file content differs: " + path;
  }
  for (const auto& [path, content] : other.files) {
    if (!files.contains(path)) return "file only on the right: " + path;
  }
  if (dirs != other.dirs) {
    for (const auto& d : dirs) {
      if (!other.dirs.contains(d)) return "directory only on the left: " + d;
    }
    for (const auto& d : other.dirs) {
      if (!dirs.contains(d)) return "directory only on the right: " + d;
    }
  }
  if (env != other.env) {
    for (const auto& [k, v] : env) {
      auto it = other.env.find(k);
      if (it == other.env.end()) return "env only on the left: " + k;
      if (it->second != v) return fmt::format("env {}: \"{}\" vs \"{}\"", k, v, it->second);
    }
    return "env differs";
  }
  if (installed != other.installed) {
    std::set<std::string> tools;
    for (const auto& [tool, _] : installed) tools.insert(tool);
    for (const auto& [tool, _] : other.installed) tools.insert(tool);
    for (const auto& tool : tools) {
      auto left = installed.contains(tool) ? installed.at(tool) : std::map<std::string, std::string>{};
      auto right = other.installed.contains(tool) ? other.installed.at(tool)
                                                  : std::map<std::string, std::string>{};
      for (const auto& [pkg, v] : left) {
        auto it = right.find(pkg);
        if (it == right.end()) return fmt::format("{} package only on the left: {}=={}", tool, pkg, v);
        if (it->second != v) return fmt::format("{} {}: {} vs {}", tool, pkg, v, it->second);
      }
      for (const auto& [pkg, v] : right) {
        if (!left.contains(pkg)) return fmt::format("{} package only on the right: {}=={}", tool, pkg, v);
      }
    }
    return "installed packages differ";
  }
  if (cwd != other.cwd) return fmt::format("cwd {} vs {}", cwd, other.cwd);
  return {};
}

// Runs one line against a sandbox's state. Working directory and variables
// are local to the line; the caller persists them only for bare "cd" and
// "export" lines.
class Interpreter {
 public:
  explicit Interpreter(SimSandbox& box)
      : box_(box), st_(box.state_), sc_(*box.scenario_), cwd_(st_.cwd), env_(st_.env) {}

  ExecResult run(const Command& command) {
    ExecResult result;
    shell::VariableLookup lookup = [this](std::string_view name) -> std::optional<std::string> {
      auto it = env_.find(std::string(name));
      if (it == env_.end()) return std::nullopt;
      return it->second;
    };
    shell::CommandList list;
    try {
      list = shell::parse(command.raw(), &lookup);
    } catch (const Error& e) {
      result.return_code = 2;
      result.stderr_text = "sh: 1: Syntax error: " + e.detail() + "\n";
      return result;
    }
    int rc = 0;
    for (const auto& [connector, pipeline] : list.items) {
      if (exited_) break;
      if (connector == shell::Connector::and_then && rc != 0) continue;
      if (connector == shell::Connector::or_else && rc == 0) continue;
      rc = run_pipeline(pipeline, result.stdout_text, result.stderr_text);
    }
    result.return_code = std::clamp(rc, 0, 255);
    result.duration_ms = duration_;

    auto kind = classify(command).kind;
    const auto& first = command.parsed().first_stage();
    bool bare_cd = command.parsed().single_stage() && first.program() == "cd" &&
                   first.redirects.empty();
    if (result.return_code == 0 && bare_cd) st_.cwd = cwd_;
    if (result.return_code == 0 && kind == CommandKind::export_env) st_.env = env_;
    return result;
  }

 private:
  int run_pipeline(const shell::Pipeline& pipeline, std::string& out, std::string& err) {
    std::string carry;
    int rc = 0;
    for (std::size_t i = 0; i < pipeline.stages.size(); ++i) {
      StageIO io;
      io.in = std::move(carry);
      rc = run_stage(pipeline.stages[i], io);
      err += io.err;
      if (i + 1 == pipeline.stages.size()) {
        out += io.out;
      } else {
        carry = std::move(io.out);
      }
      if (exited_) break;
    }
    return rc;
  }

  int run_stage(const shell::SimpleCommand& stage, StageIO& io) {
    duration_ += kStageMs;
    for (const auto& r : stage.redirects) {
      if (r.mode == shell::Redirect::Mode::heredoc) {
        io.err += "sh: 1: here-documents are not supported\n";
        return 2;
      }
      if (r.mode == shell::Redirect::Mode::input) {
        auto path = resolve_path(cwd_, r.target);
        auto it = st_.files.find(path);
        if (it == st_.files.end()) {
          io.err += fmt::format("sh: 1: cannot open {}: No such file\n", r.target);
          return 2;
        }
        io.in = it->second;
      }
    }
    int rc = 0;
    if (stage.argv.empty()) {
      for (const auto& a : stage.assignments) {
        auto eq = a.find('=');
        env_[a.substr(0, eq)] = a.substr(eq + 1);
      }
    } else {
      auto saved_env = env_;
      for (const auto& a : stage.assignments) {
        auto eq = a.find('=');
        env_[a.substr(0, eq)] = a.substr(eq + 1);
      }
      rc = dispatch(stage, io);
      if (!stage.assignments.empty() && stage.program() != "export") env_ = std::move(saved_env);
    }
    for (const auto& r : stage.redirects) {
      if (!r.writes_output()) continue;
      if (r.mode == shell::Redirect::Mode::duplicate) {
        if (r.fd == 2 && r.target == "1") {
          io.out += io.err;
          io.err.clear();
        } else if (r.fd == 1 && r.target == "2") {
          io.err += io.out;
          io.out.clear();
        }
        continue;
      }
      std::string& stream = r.fd == 2 ? io.err : io.out;
      auto error = write_file(resolve_path(cwd_, r.target), stream,
                              r.mode == shell::Redirect::Mode::append);
      stream.clear();
      if (!error.empty()) {
        io.err += fmt::format("sh: 1: cannot create {}: {}\n", r.target, error);
        rc = 2;
      }
    }
    return rc;
  }

  // --- filesystem -------------------------------------------------------

  bool is_dir(const std::string& p) const { return st_.dirs.contains(p); }
  bool is_file(const std::string& p) const { return st_.files.contains(p); }
  bool exists(const std::string& p) const { return is_dir(p) || is_file(p); }

  std::string write_file(const std::string& path, const std::string& content, bool append) {
    if (path == "/dev/null") return {};
    if (is_dir(path)) return "Is a directory";
    if (!is_dir(parent_of(path))) return "Directory nonexistent";
    if (append) {
      st_.files[path] += content;
    } else {
      st_.files[path] = content;
    }
    return {};
  }

  bool make_dirs(const std::string& path) {
    if (is_dir(path)) return true;
    if (is_file(path)) return false;
    if (!make_dirs(parent_of(path))) return false;
    st_.dirs.insert(path);
    return true;
  }

  void remove_tree(const std::string& path) {
    st_.files.erase(path);
    st_.dirs.erase(path);
    std::erase_if(st_.files, [&](const auto& kv) { return is_under(kv.first, path); });
    std::erase_if(st_.dirs, [&](const std::string& d) { return is_under(d, path); });
  }

  void copy_tree(const std::string& from, const std::string& to) {
    std::vector<std::pair<std::string, std::string>> files;
    std::vector<std::string> dirs;
    for (const auto& [p, c] : st_.files) {
      if (is_under(p, from)) files.emplace_back(to + p.substr(from.size()), c);
    }
    for (const auto& d : st_.dirs) {
      if (is_under(d, from)) dirs.push_back(to + d.substr(from.size()));
    }
    st_.dirs.insert(to);
    for (auto& d : dirs) st_.dirs.insert(std::move(d));
    for (auto& [p, c] : files) st_.files[p] = std::move(c);
  }

  std::vector<std::string> children(const std::string& dir) const {
    std::set<std::string> names;
    for (const auto& [p, _] : st_.files) {
      if (parent_of(p) == dir && p != dir) names.insert(base_name(p));
    }
    for (const auto& d : st_.dirs) {
      if (d != "/" && parent_of(d) == dir) names.insert(base_name(d));
    }
    return {names.begin(), names.end()};
  }

  // Entries under `root` (inclusive), depth-first in path order.
  std::vector<std::string> walk(const std::string& root) const {
    std::vector<std::string> out{root};
    for (const auto& name : children(root)) {
      auto child = join_path(root, name);
      if (is_dir(child)) {
        auto sub = walk(child);
        out.insert(out.end(), sub.begin(), sub.end());
      } else {
        out.push_back(child);
      }
    }
    return out;
  }

  std::optional<std::string> read_input(const std::vector<std::string>& files, StageIO& io,
                                        int& rc, const std::string& tool) {
    if (files.empty()) return io.in;
    std::string text;
    for (const auto& f : files) {
      auto p = resolve_path(cwd_, f);
      auto it = st_.files.find(p);
      if (it == st_.files.end()) {
        io.err += fmt::format("{}: {}: No such file or directory\n", tool, f);
        rc = 1;
        continue;
      }
      text += it->second;
    }
    return text;
  }

  // --- dispatch ---------------------------------------------------------

  int dispatch(const shell::SimpleCommand& stage, StageIO& io) {
    const auto& argv = stage.argv;
    const std::string& prog = argv[0];
    std::vector<std::string> args(argv.begin() + 1, argv.end());

    if (prog == "cd") return cmd_cd(args, io);
    if (prog == "pwd") return io.out += cwd_ + "\n", 0;
    if (prog == "echo") return cmd_echo(args, io);
    if (prog == "printf") return cmd_printf(args, io);
    if (prog == "true" || prog == ":") return 0;
    if (prog == "false") return 1;
    if (prog == "exit") {
      exited_ = true;
      return args.empty() ? 0 : static_cast<int>(to_number(args[0]).value_or(2));
    }
    if (prog == "sleep") {
      duration_ += 1000 * (args.empty() ? 0 : to_number(args[0]).value_or(0));
      return 0;
    }
    if (prog == "export") return cmd_export(args);
    if (prog == "unset") {
      for (const auto& a : args) env_.erase(a);
      return 0;
    }
    if (prog == "mkdir") return cmd_mkdir(args, io);
    if (prog == "touch") return cmd_touch(args, io);
    if (prog == "rm") return cmd_rm(args, io);
    if (prog == "cp") return cmd_cp(args, io, false);
    if (prog == "mv") return cmd_cp(args, io, true);
    if (prog == "cat") return cmd_cat(args, io);
    if (prog == "ls") return cmd_ls(args, io);
    if (prog == "head" || prog == "tail") return cmd_head_tail(prog, args, io);
    if (prog == "grep") return cmd_grep(args, io);
    if (prog == "wc") return cmd_wc(args, io);
    if (prog == "sort") return cmd_sort(args, io);
    if (prog == "tee") return cmd_tee(args, io);
    if (prog == "find") return cmd_find(args, io);
    if (prog == "env" || prog == "printenv") return cmd_env(prog, args, io);
    if (prog == "uname") return io.out += (args.empty() ? "Linux\n" : "Linux sim 6.1.0 x86_64 GNU/Linux\n"), 0;
    if (prog == "whoami") return io.out += "root\n", 0;
    if (prog == "hostname") return io.out += box_.handle_.session_id + "\n", 0;
    if (prog == "date") return io.out += "Thu Jan  1 00:00:00 UTC 2026\n", 0;
    if (prog == "which") return cmd_which(args, io);
    if (prog == "python" || prog == "python3") return cmd_python(args, io);
    if (prog == "pip" || prog == "pip3") return cmd_pip(stage, 1, io);
    if (prog == "apt-get" || prog == "apt") return cmd_apt(stage, io);
    if (prog == "git") return cmd_git(args, io);
    if (prog == "pytest") {
      if (!pip_has("pytest")) return io.err += "sh: 1: pytest: not found\n", 127;
      return cmd_pytest(args, io);
    }
    if (prog == "poetry" && !args.empty() && args[0] == "run" && args.size() > 1) {
      shell::SimpleCommand inner = stage;
      inner.argv.erase(inner.argv.begin(), inner.argv.begin() + 2);
      return dispatch(inner, io);
    }
    if (is_safe_program(prog)) return 0;
    io.err += fmt::format("sh: 1: {}: not found\n", prog);
    return 127;
  }

  // --- builtins ---------------------------------------------------------

  int cmd_cd(const std::vector<std::string>& args, StageIO& io) {
    auto target = args.empty() ? std::string("/root") : resolve_path(cwd_, args[0]);
    if (!is_dir(target)) {
      io.err += fmt::format("sh: 1: cd: can't cd to {}\n", args.empty() ? target : args[0]);
      return 2;
    }
    cwd_ = target;
    return 0;
  }

  int cmd_echo(const std::vector<std::string>& args, StageIO& io) {
    bool newline = true;
    std::size_t i = 0;
    if (!args.empty() && args[0] == "-n") newline = false, i = 1;
    std::string text;
    for (; i < args.size(); ++i) {
      if (!text.empty() || i > (newline ? 0u : 1u)) text += ' ';
      text += args[i];
    }
    io.out += text;
    if (newline) io.out += '\n';
    return 0;
  }

  int cmd_printf(const std::vector<std::string>& args, StageIO& io) {
    if (args.empty()) return io.err += "printf: usage: printf format [arguments]\n", 2;
    const std::string& format = args[0];
    std::size_t next_arg = 1;
    std::string out;
    do {
      std::size_t consumed = next_arg;
      for (std::size_t i = 0; i < format.size(); ++i) {
        char c = format[i];
        if (c == '\\' && i + 1 < format.size()) {
          char e = format[++i];
          switch (e) {
            case 'n': out += '\n'; break;
            case 't': out += '\t'; break;
            case '\\': out += '\\'; break;
            default: out += '\\', out += e; break;
          }
        } else if (c == '%' && i + 1 < format.size()) {
          char e = format[++i];
          if (e == '%') {
            out += '%';
          } else if (e == 's' || e == 'd') {
            if (next_arg < args.size()) out += args[next_arg++];
          } else {
            out += '%', out += e;
          }
        } else {
          out += c;
        }
      }
      if (next_arg == consumed) break;
    } while (next_arg < args.size());
    io.out += out;
    return 0;
  }

  int cmd_export(const std::vector<std::string>& args) {
    for (const auto& a : args) {
      auto eq = a.find('=');
      if (eq != std::string::npos) env_[a.substr(0, eq)] = a.substr(eq + 1);
    }
    return 0;
  }

  int cmd_mkdir(const std::vector<std::string>& args, StageIO& io) {
    bool parents = false;
    int rc = 0;
    for (const auto& a : args) {
      if (a == "-p") {
        parents = true;
        continue;
      }
      auto p = resolve_path(cwd_, a);
      if (parents) {
        if (!make_dirs(p)) {
          io.err += fmt::format("mkdir: cannot create directory '{}': Not a directory\n", a);
          rc = 1;
        }
      } else if (exists(p)) {
        io.err += fmt::format("mkdir: cannot create directory '{}': File exists\n", a);
        rc = 1;
      } else if (!is_dir(parent_of(p))) {
        io.err += fmt::format("mkdir: cannot create directory '{}': No such file or directory\n", a);
        rc = 1;
      } else {
        st_.dirs.insert(p);
      }
    }
    return rc;
  }

  int cmd_touch(const std::vector<std::string>& args, StageIO& io) {
    int rc = 0;
    for (const auto& a : args) {
      auto p = resolve_path(cwd_, a);
      if (exists(p)) continue;
      if (!is_dir(parent_of(p))) {
        io.err += fmt::format("touch: cannot touch '{}': No such file or directory\n", a);
        rc = 1;
        continue;
      }
      st_.files[p] = "";
    }
    return rc;
  }

  int cmd_rm(const std::vector<std::string>& args, StageIO& io) {
    bool recursive = false, force = false;
    std::vector<std::string> targets;
    for (const auto& a : args) {
      if (a.size() > 1 && a[0] == '-') {
        for (char f : a.substr(1)) {
          if (f == 'r' || f == 'R') recursive = true;
          if (f == 'f') force = true;
        }
      } else {
        targets.push_back(a);
      }
    }
    int rc = 0;
    for (const auto& a : targets) {
      auto p = resolve_path(cwd_, a);
      if (p == "/") {
        io.err += "rm: it is dangerous to operate recursively on '/'\n";
        rc = 1;
      } else if (is_file(p)) {
        st_.files.erase(p);
      } else if (is_dir(p)) {
        if (!recursive) {
          io.err += fmt::format("rm: cannot remove '{}': Is a directory\n", a);
          rc = 1;
        } else {
          remove_tree(p);
        }
      } else if (!force) {
        io.err += fmt::format("rm: cannot remove '{}': No such file or directory\n", a);
        rc = 1;
      }
    }
    return rc;
  }

  int cmd_cp(const std::vector<std::string>& args, StageIO& io, bool move) {
    bool recursive = move;
    std::vector<std::string> operands;
    for (const auto& a : args) {
      if (a.size() > 1 && a[0] == '-') {
        if (a.find_first_of("rRa") != std::string::npos) recursive = true;
      } else {
        operands.push_back(a);
      }
    }
    const char* tool = move ? "mv" : "cp";
    if (operands.size() != 2) {
      io.err += fmt::format("{}: expected a source and a destination\n", tool);
      return 1;
    }
    auto from = resolve_path(cwd_, operands[0]);
    auto to = resolve_path(cwd_, operands[1]);
    if (is_dir(to)) to = join_path(to, base_name(from));
    if (!exists(from)) {
      io.err += fmt::format("{}: cannot stat '{}': No such file or directory\n", tool, operands[0]);
      return 1;
    }
    if (!is_dir(parent_of(to))) {
      io.err += fmt::format("{}: cannot create '{}': No such file or directory\n", tool, operands[1]);
      return 1;
    }
    if (from == to || is_under(to, from)) {
      io.err += fmt::format("{}: cannot copy '{}' into itself\n", tool, operands[0]);
      return 1;
    }
    if (is_file(from)) {
      if (is_dir(to)) {
        io.err += fmt::format("{}: cannot overwrite directory '{}'\n", tool, operands[1]);
        return 1;
      }
      st_.files[to] = st_.files[from];
      if (move) st_.files.erase(from);
      return 0;
    }
    if (!recursive) {
      io.err += fmt::format("cp: -r not specified; omitting directory '{}'\n", operands[0]);
      return 1;
    }
    if (is_file(to)) {
      io.err += fmt::format("{}: cannot overwrite non-directory '{}'\n", tool, operands[1]);
      return 1;
    }
    copy_tree(from, to);
    if (move) remove_tree(from);
    return 0;
  }

  int cmd_cat(const std::vector<std::string>& args, StageIO& io) {
    if (args.empty()) return io.out += io.in, 0;
    int rc = 0;
    for (const auto& a : args) {
      auto p = resolve_path(cwd_, a);
      if (is_dir(p)) {
        io.err += fmt::format("cat: {}: Is a directory\n", a);
        rc = 1;
      } else if (auto it = st_.files.find(p); it != st_.files.end()) {
        io.out += it->second;
      } else {
        io.err += fmt::format("cat: {}: No such file or directory\n", a);
        rc = 1;
      }
    }
    return rc;
  }

  int cmd_ls(const std::vector<std::string>& args, StageIO& io) {
    std::vector<std::string> paths;
    for (const auto& a : args) {
      if (!a.starts_with("-")) paths.push_back(a);
    }
    if (paths.empty()) paths.push_back(".");
    int rc = 0;
    for (const auto& a : paths) {
      auto p = resolve_path(cwd_, a);
      if (is_file(p)) {
        io.out += a + "\n";
      } else if (is_dir(p)) {
        if (paths.size() > 1) io.out += a + ":\n";
        for (const auto& name : children(p)) io.out += name + "\n";
      } else {
        io.err += fmt::format("ls: cannot access '{}': No such file or directory\n", a);
        rc = 2;
      }
    }
    return rc;
  }

  int cmd_head_tail(const std::string& prog, const std::vector<std::string>& args, StageIO& io) {
    long n = 10;
    std::vector<std::string> files;
    for (std::size_t i = 0; i < args.size(); ++i) {
      const auto& a = args[i];
      if (a == "-n" && i + 1 < args.size()) {
        n = to_number(args[++i]).value_or(10);
      } else if (a.starts_with("-n")) {
        n = to_number(std::string_view(a).substr(2)).value_or(10);
      } else if (a.size() > 1 && a[0] == '-') {
        n = to_number(std::string_view(a).substr(1)).value_or(10);
      } else {
        files.push_back(a);
      }
    }
    int rc = 0;
    auto text = read_input(files, io, rc, prog);
    auto lines = split_lines(*text);
    auto count = std::min<std::size_t>(lines.size(), static_cast<std::size_t>(std::max(0L, n)));
    if (prog == "head") {
      lines.resize(count);
    } else {
      lines.erase(lines.begin(), lines.end() - static_cast<long>(count));
    }
    io.out += join_lines(lines);
    return rc;
  }

  int cmd_grep(const std::vector<std::string>& args, StageIO& io) {
    bool ignore_case = false, invert = false, quiet = false, count_only = false,
         names_only = false, recursive = false, numbers = false;
    std::optional<std::string> pattern;
    std::vector<std::string> files;
    for (const auto& a : args) {
      if (a.size() > 1 && a[0] == '-' && !pattern) {
        for (char f : a.substr(1)) {
          switch (f) {
            case 'i': ignore_case = true; break;
            case 'v': invert = true; break;
            case 'q': quiet = true; break;
            case 'c': count_only = true; break;
            case 'l': names_only = true; break;
            case 'r': case 'R': recursive = true; break;
            case 'n': numbers = true; break;
            default: break;
          }
        }
      } else if (!pattern) {
        pattern = a;
      } else {
        files.push_back(a);
      }
    }
    if (!pattern) return io.err += "Usage: grep [OPTION]... PATTERNS [FILE]...\n", 2;
    auto lower = [](std::string s) {
      std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
      return s;
    };
    auto needle = ignore_case ? lower(*pattern) : *pattern;
    if (recursive && files.empty()) files.push_back(".");

    std::vector<std::pair<std::string, std::string>> inputs;  // label, text
    int rc_err = 0;
    if (files.empty()) {
      inputs.emplace_back("", io.in);
    } else {
      for (const auto& f : files) {
        auto p = resolve_path(cwd_, f);
        if (is_file(p)) {
          inputs.emplace_back(f, st_.files.at(p));
        } else if (is_dir(p) && recursive) {
          for (const auto& entry : walk(p)) {
            if (is_file(entry)) {
              auto label = f == "." ? "./" + entry.substr(p == "/" ? 1 : p.size() + 1)
                                    : f + entry.substr(p.size());
              inputs.emplace_back(label, st_.files.at(entry));
            }
          }
        } else {
          io.err += fmt::format("grep: {}: {}\n", f, is_dir(p) ? "Is a directory" : "No such file or directory");
          rc_err = 2;
        }
      }
    }
    bool prefix = inputs.size() > 1 || recursive;
    bool any = false;
    for (const auto& [label, text] : inputs) {
      int matches = 0;
      auto lines = split_lines(text);
      for (std::size_t i = 0; i < lines.size(); ++i) {
        auto hay = ignore_case ? lower(lines[i]) : lines[i];
        bool hit = (hay.find(needle) != std::string::npos) != invert;
        if (!hit) continue;
        ++matches;
        any = true;
        if (quiet || count_only || names_only) continue;
        if (prefix) io.out += label + ":";
        if (numbers) io.out += std::to_string(i + 1) + ":";
        io.out += lines[i] + "\n";
      }
      if (quiet) continue;
      if (count_only) io.out += (prefix ? label + ":" : "") + std::to_string(matches) + "\n";
      if (names_only && matches > 0) io.out += label + "\n";
    }
    if (rc_err != 0 && !(quiet && any)) return rc_err;
    return any ? 0 : 1;
  }

  int cmd_wc(const std::vector<std::string>& args, StageIO& io) {
    bool lines = false, words = false, bytes = false;
    std::vector<std::string> files;
    for (const auto& a : args) {
      if (a.size() > 1 && a[0] == '-') {
        lines |= a.find('l') != std::string::npos;
        words |= a.find('w') != std::string::npos;
        bytes |= a.find('c') != std::string::npos;
      } else {
        files.push_back(a);
      }
    }
    if (!lines && !words && !bytes) lines = words = bytes = true;
    int rc = 0;
    auto text = *read_input(files, io, rc, "wc");
    std::vector<std::string> fields;
    if (lines) fields.push_back(std::to_string(std::count(text.begin(), text.end(), '\n')));
    if (words) {
      std::istringstream in(text);
      std::size_t n = 0;
      for (std::string w; in >> w;) ++n;
      fields.push_back(std::to_string(n));
    }
    if (bytes) fields.push_back(std::to_string(text.size()));
    std::string line;
    for (const auto& f : fields) line += (line.empty() ? "" : " ") + f;
    io.out += line + "\n";
    return rc;
  }

  int cmd_sort(const std::vector<std::string>& args, StageIO& io) {
    bool reverse = false, unique = false;
    std::vector<std::string> files;
    for (const auto& a : args) {
      if (a == "-r") reverse = true;
      else if (a == "-u") unique = true;
      else if (!a.starts_with("-")) files.push_back(a);
    }
    int rc = 0;
    auto lines = split_lines(*read_input(files, io, rc, "sort"));
    std::sort(lines.begin(), lines.end());
    if (unique) lines.erase(std::unique(lines.begin(), lines.end()), lines.end());
    if (reverse) std::reverse(lines.begin(), lines.end());
    io.out += join_lines(lines);
    return rc;
  }

  int cmd_tee(const std::vector<std::string>& args, StageIO& io) {
    bool append = false;
    int rc = 0;
    for (const auto& a : args) {
      if (a == "-a") {
        append = true;
        continue;
      }
      auto error = write_file(resolve_path(cwd_, a), io.in, append);
      if (!error.empty()) {
        io.err += fmt::format("tee: {}: {}\n", a, error);
        rc = 1;
      }
    }
    io.out += io.in;
    return rc;
  }

  int cmd_find(const std::vector<std::string>& args, StageIO& io) {
    std::vector<std::string> roots;
    std::optional<std::string> name_pattern;
    std::optional<char> type;
    std::optional<long> max_depth;
    std::size_t i = 0;
    for (; i < args.size() && !args[i].starts_with("-"); ++i) roots.push_back(args[i]);
    for (; i < args.size(); ++i) {
      if ((args[i] == "-name" || args[i] == "-iname") && i + 1 < args.size()) {
        name_pattern = args[++i];
      } else if (args[i] == "-type" && i + 1 < args.size()) {
        type = args[++i].front();
      } else if (args[i] == "-maxdepth" && i + 1 < args.size()) {
        max_depth = to_number(args[++i]);
      }
    }
    if (roots.empty()) roots.push_back(".");
    int rc = 0;
    for (const auto& root : roots) {
      auto p = resolve_path(cwd_, root);
      if (!exists(p)) {
        io.err += fmt::format("find: '{}': No such file or directory\n", root);
        rc = 1;
        continue;
      }
      auto depth_of = [&](const std::string& entry) {
        if (entry == p) return 0L;
        auto rel = entry.substr(p == "/" ? 1 : p.size() + 1);
        return static_cast<long>(std::count(rel.begin(), rel.end(), '/') + 1);
      };
      for (const auto& entry : is_dir(p) ? walk(p) : std::vector<std::string>{p}) {
        if (max_depth && depth_of(entry) > *max_depth) continue;
        if (type == 'f' && !is_file(entry)) continue;
        if (type == 'd' && !is_dir(entry)) continue;
        if (name_pattern && fnmatch(name_pattern->c_str(), base_name(entry).c_str(), 0) != 0) {
          continue;
        }
        std::string shown = root;
        if (entry != p) {
          auto rel = entry.substr(p == "/" ? 1 : p.size() + 1);
          shown = root.ends_with("/") ? root + rel : root + "/" + rel;
        }
        io.out += shown + "\n";
      }
    }
    return rc;
  }

  int cmd_env(const std::string& prog, const std::vector<std::string>& args, StageIO& io) {
    if (prog == "printenv" && !args.empty()) {
      int rc = 0;
      for (const auto& k : args) {
        auto it = env_.find(k);
        if (it == env_.end()) {
          rc = 1;
        } else {
          io.out += it->second + "\n";
        }
      }
      return rc;
    }
    for (const auto& [k, v] : env_) io.out += k + "=" + v + "\n";
    return 0;
  }

  int cmd_which(const std::vector<std::string>& args, StageIO& io) {
    int rc = 0;
    for (const auto& a : args) {
      bool known = a == "python" || a == "python3" || a == "pip" || a == "pip3" ||
                   (a == "pytest" && pip_has("pytest"));
      bool system = a == "apt-get" || a == "apt" || a == "git" || is_safe_program(a);
      if (known) {
        io.out += "/usr/local/bin/" + a + "\n";
      } else if (system) {
        io.out += "/usr/bin/" + a + "\n";
      } else {
        rc = 1;
      }
    }
    return rc;
  }

  // --- python / pip / apt / git / pytest --------------------------------

  bool pip_has(std::string_view package) const {
    auto it = st_.installed.find("pip");
    return it != st_.installed.end() && it->second.contains(normalize_package_name(package));
  }

  std::string python_version() const { return st_.base_image.python_version.value_or("3"); }

  int cmd_python(const std::vector<std::string>& args, StageIO& io) {
    if (args.empty()) return 0;
    if (args[0] == "--version" || args[0] == "-V") {
      io.out += "Python " + python_version() + ".0\n";
      return 0;
    }
    if (args[0] == "-m" && args.size() > 1) {
      const auto& module = args[1];
      if (module == "pip") {
        shell::SimpleCommand pip;
        pip.argv = {"pip"};
        pip.argv.insert(pip.argv.end(), args.begin() + 2, args.end());
        return cmd_pip(pip, 1, io);
      }
      if (!pip_has(module) && module != "venv" && module != "json" && module != "http.server") {
        io.err += fmt::format("/usr/local/bin/python: No module named {}\n", module);
        return 1;
      }
      if (module == "pytest") return cmd_pytest({args.begin() + 2, args.end()}, io);
      return 0;
    }
    if (args[0] == "-c") {
      if (args.size() < 2) return io.err += "Argument expected for the -c option\n", 2;
      return python_imports(args[1], io);
    }
    auto script = resolve_path(cwd_, args[0]);
    if (!is_file(script)) {
      io.err += fmt::format("python: can't open file '{}': [Errno 2] No such file or directory\n",
                            script);
      return 2;
    }
    if (base_name(script) == code_edit::kScriptName) return run_code_edit(args, io);
    return 0;
  }

  int python_imports(const std::string& code, StageIO& io) {
    static const std::set<std::string> stdlib = {
        "os", "sys", "json", "re", "enum", "typing", "pathlib", "subprocess", "collections",
        "itertools", "functools", "math", "asyncio", "dataclasses", "unittest", "logging"};
    std::string_view rest = code;
    if (!rest.starts_with("import ")) return 0;
    rest.remove_prefix(7);
    auto end = rest.find_first_of(";\n");
    rest = rest.substr(0, end);
    std::stringstream modules{std::string(rest)};
    for (std::string module; std::getline(modules, module, ',');) {
      module.erase(0, module.find_first_not_of(' '));
      module.erase(module.find_last_not_of(' ') + 1);
      auto top = module.substr(0, module.find('.'));
      if (stdlib.contains(top) || pip_has(top)) continue;
      io.err += "Traceback (most recent call last):\n  File \"<string>\", line 1, in <module>\n";
      io.err += fmt::format("ModuleNotFoundError: No module named '{}'\n", top);
      return 1;
    }
    return 0;
  }

  int run_code_edit(const std::vector<std::string>& args, StageIO& io) {
    if (args.size() != 3) return io.err += "usage: code_edit.py TARGET PATCH_FILE\n", 2;
    auto target = resolve_path(cwd_, args[1]);
    auto patch_file = resolve_path(cwd_, args[2]);
    auto patch = st_.files.find(patch_file);
    if (patch == st_.files.end()) {
      io.err += fmt::format("FileNotFoundError: [Errno 2] No such file or directory: '{}'\n",
                            args[2]);
      return 1;
    }
    std::optional<std::string> current;
    if (auto it = st_.files.find(target); it != st_.files.end()) current = it->second;
    auto result = code_edit::apply(current, patch->second);
    if (result.return_code != 0) {
      io.err += result.message + "\n";
      return result.return_code;
    }
    if (!is_dir(parent_of(target))) {
      io.err += parent_of(target) + ": no such directory\n";
      return 1;
    }
    st_.files[target] = std::move(result.content);
    io.out += result.message + " to " + args[1] + "\n";
    return 0;
  }

  struct Planned {
    std::string name;
    std::string version;
    const RegistryEntry* entry;
  };

  std::string side_version(const std::string& tool, const std::string& spec,
                           std::string& name) const {
    auto eq = spec.find("==");
    if (eq != std::string::npos) {
      name = spec.substr(0, eq);
      return spec.substr(eq + 2);
    }
    name = spec;
    const auto* e = sc_.registry.find(tool, spec);
    return e && !e->versions.empty() ? e->versions.back() : "1.0.0";
  }

  // Applies a failing entry's side installs; returns the install's exit code.
  int fail_install(const std::string& tool, const Planned& p, StageIO& io) {
    if (p.entry->behavior == Behavior::fail_polluting) {
      auto& installed = st_.installed[tool];
      for (const auto& side : p.entry->side_installs) {
        std::string name;
        auto version = side_version(tool, side, name);
        auto key = tool == "pip" ? normalize_package_name(name) : name;
        installed.try_emplace(key, version);
      }
    }
    if (tool == "apt") {
      io.err += p.entry->error.empty()
                    ? fmt::format("E: Sub-process /usr/bin/dpkg returned an error code (1)\n")
                    : p.entry->error + "\n";
      return 100;
    }
    io.err += p.entry->error.empty()
                  ? fmt::format("error: subprocess-exited-with-error\n  × Building wheel for {} "
                                "did not run successfully.\nERROR: Failed to build {}\n",
                                p.name, p.name)
                  : p.entry->error + "\n";
    return 1;
  }

  int cmd_pip(const shell::SimpleCommand& stage, std::size_t sub, StageIO& io) {
    const auto& argv = stage.argv;
    if (argv.size() <= sub) return io.err += "Usage: pip <command> [options]\n", 1;
    const auto& command = argv[sub];
    auto& installed = st_.installed["pip"];
    if (command == "--version" || command == "-V") {
      io.out += fmt::format("pip 23.0.1 from /usr/local/lib/python{0}/site-packages/pip (python {0})\n",
                            python_version());
      return 0;
    }
    if (command == "list" || command == "freeze") {
      if (command == "list") io.out += "Package    Version\n---------- -------\n";
      for (const auto& [name, version] : installed) {
        io.out += command == "list" ? fmt::format("{} {}\n", name, version)
                                    : fmt::format("{}=={}\n", name, version);
      }
      return 0;
    }
    if (command == "show") {
      int rc = 0;
      for (std::size_t i = sub + 1; i < argv.size(); ++i) {
        auto it = installed.find(normalize_package_name(argv[i]));
        if (it == installed.end()) {
          io.err += "WARNING: Package(s) not found: " + argv[i] + "\n";
          rc = 1;
        } else {
          io.out += fmt::format("Name: {}\nVersion: {}\n", it->first, it->second);
        }
      }
      return rc;
    }
    if (command == "uninstall") {
      bool yes = false;
      std::vector<std::string> names;
      for (std::size_t i = sub + 1; i < argv.size(); ++i) {
        if (argv[i] == "-y" || argv[i] == "--yes") {
          yes = true;
        } else if (!argv[i].starts_with("-")) {
          names.push_back(argv[i]);
        }
      }
      if (!yes) return io.err += "Proceed (Y/n)? ERROR: EOF when reading a line\n", 1;
      for (const auto& n : names) {
        auto it = installed.find(normalize_package_name(n));
        if (it == installed.end()) {
          io.err += fmt::format("WARNING: Skipping {} as it is not installed.\n", n);
        } else {
          io.out += fmt::format("Successfully uninstalled {}-{}\n", it->first, it->second);
          installed.erase(it);
        }
      }
      return 0;
    }
    if (command != "install") return 0;

    std::vector<InstallSpec> specs;
    try {
      specs = parse_install_stage(stage);
    } catch (const Error& e) {
      io.err += "no such option: " + e.detail() + "\n";
      return 2;
    }
    bool upgrade = std::any_of(argv.begin(), argv.end(),
                               [](const std::string& a) { return a == "-U" || a == "--upgrade"; });
    std::vector<std::pair<std::string, std::string>> requirements;  // name, constraint
    std::vector<std::pair<std::string, std::string>> local_projects;
    for (const auto& spec : specs) {
      if (spec.kind == InstallSpec::Kind::package) {
        requirements.emplace_back(spec.package, spec.constraint);
      } else if (spec.kind == InstallSpec::Kind::requirements_file) {
        auto path = resolve_path(cwd_, spec.package);
        auto it = st_.files.find(path);
        if (it == st_.files.end()) {
          io.err += fmt::format("ERROR: Could not open requirements file: [Errno 2] No such file "
                                "or directory: '{}'\n", spec.package);
          return 1;
        }
        for (auto line : split_lines(it->second)) {
          line = line.substr(0, line.find('#'));
          if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
          auto [name, constraint] = split_requirement(line.substr(line.find_first_not_of(" \t")));
          name.erase(name.find_last_not_of(" \t\r") + 1);
          requirements.emplace_back(name, constraint);
        }
      } else {
        auto path = resolve_path(cwd_, spec.package);
        bool project = is_file(path + "/setup.py") || is_file(path + "/pyproject.toml") ||
                       is_file(path + "/setup.cfg");
        if (!project) {
          io.err += fmt::format("ERROR: {} does not appear to be a Python project\n", spec.package);
          return 1;
        }
        local_projects.emplace_back(normalize_package_name(base_name(path)), "0.0.0");
      }
    }

    std::vector<Planned> plan;
    std::int64_t cost = 0;
    for (const auto& [raw_name, raw_constraint] : requirements) {
      auto name = normalize_package_name(raw_name);
      VersionConstraint constraint;
      try {
        constraint = VersionConstraint::parse(raw_constraint);
      } catch (const Error&) {
        io.err += fmt::format("ERROR: Invalid requirement: '{}{}'\n", raw_name, raw_constraint);
        return 1;
      }
      const auto* entry = sc_.registry.find("pip", name);
      if (entry == nullptr) {
        io.err += fmt::format("ERROR: Could not find a version that satisfies the requirement "
                              "{}{} (from versions: none)\nERROR: No matching distribution "
                              "found for {}\n", raw_name, raw_constraint, raw_name);
        return 1;
      }
      if (!python_matches(st_.base_image, entry->requires_python)) {
        io.err += fmt::format("ERROR: Package '{}' requires a different Python: {}.0 not in '{}'\n",
                              raw_name, python_version(), entry->requires_python);
        return 1;
      }
      auto have = installed.find(name);
      if (have != installed.end() && !upgrade) {
        auto v = Version::try_parse(have->second);
        if (v && constraint_satisfies(*v, constraint)) {
          io.out += fmt::format("Requirement already satisfied: {} in /usr/local/lib/python{}/"
                                "site-packages ({})\n", raw_name, python_version(), have->second);
          continue;
        }
      }
      std::optional<std::string> chosen;
      for (auto it = entry->versions.rbegin(); it != entry->versions.rend(); ++it) {
        auto v = Version::try_parse(*it);
        if (v && constraint_satisfies(*v, constraint)) {
          chosen = *it;
          break;
        }
      }
      if (!chosen) {
        std::string available;
        for (const auto& v : entry->versions) available += (available.empty() ? "" : ", ") + v;
        io.err += fmt::format("ERROR: Could not find a version that satisfies the requirement "
                              "{}{} (from versions: {})\nERROR: No matching distribution found "
                              "for {}{}\n", raw_name, raw_constraint, available, raw_name,
                              raw_constraint);
        return 1;
      }
      cost += entry->install_ms;
      plan.push_back({name, *chosen, entry});
    }
    duration_ += cost;
    for (const auto& p : plan) {
      if (p.entry->behavior != Behavior::ok) return fail_install("pip", p, io);
    }
    std::string summary;
    for (const auto& p : plan) {
      for (const auto& side : p.entry->side_installs) {
        std::string dep;
        auto version = side_version("pip", side, dep);
        if (installed.try_emplace(normalize_package_name(dep), version).second) {
          summary += fmt::format(" {}-{}", normalize_package_name(dep), version);
        }
      }
      installed[p.name] = p.version;
      summary += fmt::format(" {}-{}", p.name, p.version);
    }
    for (const auto& [name, version] : local_projects) {
      installed[name] = version;
      summary += fmt::format(" {}-{}", name, version);
    }
    if (!summary.empty()) io.out += "Successfully installed" + summary + "\n";
    return 0;
  }

  int cmd_apt(const shell::SimpleCommand& stage, StageIO& io) {
    const auto& argv = stage.argv;
    std::size_t sub = 1;
    while (sub < argv.size() && argv[sub].starts_with("-")) ++sub;
    if (sub >= argv.size()) return io.err += "E: Invalid operation\n", 100;
    if (argv[sub] == "update") {
      duration_ += 3000;
      io.out += "Reading package lists... Done\n";
      return 0;
    }
    if (argv[sub] != "install") return 0;
    std::vector<InstallSpec> specs;
    try {
      specs = parse_install_stage(stage);
    } catch (const Error& e) {
      io.err += "E: Command line option " + e.detail() + " is not understood\n";
      return 100;
    }
    bool yes = std::any_of(argv.begin(), argv.end(), [](const std::string& a) {
      return a == "-y" || a == "--yes" || a == "--assume-yes";
    });
    auto& installed = st_.installed["apt"];
    std::vector<Planned> plan;
    for (const auto& spec : specs) {
      const auto* entry = sc_.registry.find("apt", spec.package);
      if (entry == nullptr) {
        io.err += fmt::format("E: Unable to locate package {}\n", spec.package);
        return 100;
      }
      if (installed.contains(spec.package)) {
        io.out += fmt::format("{} is already the newest version ({}).\n", spec.package,
                              installed.at(spec.package));
        continue;
      }
      plan.push_back({spec.package, entry->versions.empty() ? "1.0" : entry->versions.back(), entry});
    }
    if (!plan.empty() && !yes) {
      io.out += "Do you want to continue? [Y/n] Abort.\n";
      return 1;
    }
    for (const auto& p : plan) duration_ += p.entry->install_ms;
    for (const auto& p : plan) {
      if (p.entry->behavior != Behavior::ok) return fail_install("apt", p, io);
    }
    for (const auto& p : plan) {
      installed[p.name] = p.version;
      io.out += fmt::format("Setting up {} ({}) ...\n", p.name, p.version);
    }
    return 0;
  }

  int cmd_git(const std::vector<std::string>& args, StageIO& io) {
    if (args.empty()) return io.err += "usage: git <command>\n", 1;
    if (args[0] == "clone") {
      std::vector<std::string> operands;
      for (std::size_t i = 1; i < args.size(); ++i) {
        if (args[i] == "--depth" || args[i] == "-b" || args[i] == "--branch") {
          ++i;
        } else if (!args[i].starts_with("-")) {
          operands.push_back(args[i]);
        }
      }
      if (operands.empty()) return io.err += "fatal: You must specify a repository to clone.\n", 129;
      std::string full_name = operands[0];
      for (std::string_view prefix : {"https://github.com/", "http://github.com/", "git@github.com:"}) {
        if (full_name.starts_with(prefix)) full_name = full_name.substr(prefix.size());
      }
      if (full_name.ends_with(".git")) full_name.resize(full_name.size() - 4);
      auto dest = resolve_path(cwd_, operands.size() > 1 ? operands[1] : base_name(full_name));
      auto repo = sc_.repos.find(full_name);
      duration_ += kCloneMs;
      if (is_file(dest) || (is_dir(dest) && !children(dest).empty())) {
        io.err += fmt::format("fatal: destination path '{}' already exists and is not an empty "
                              "directory.\n", dest);
        return 128;
      }
      if (repo == sc_.repos.end()) {
        io.err += fmt::format("fatal: repository '{}' not found\n", operands[0]);
        return 128;
      }
      if (!make_dirs(dest)) {
        io.err += fmt::format("fatal: could not create work tree dir '{}'\n", dest);
        return 128;
      }
      for (const auto& [rel, content] : repo->second) {
        auto path = resolve_path(dest, rel);
        make_dirs(parent_of(path));
        st_.files[path] = content;
      }
      make_dirs(dest + "/.git");
      st_.files[dest + "/.git/HEAD"] = "ref: refs/heads/main\n";
      io.err += fmt::format("Cloning into '{}'...\n", dest);
      return 0;
    }
    if (args[0] == "checkout") {
      if (args.size() < 2) return io.err += "error: pathspec required\n", 1;
      std::string dir = cwd_;
      while (!is_dir(join_path(dir, ".git")) && dir != "/") dir = parent_of(dir);
      if (!is_dir(join_path(dir, ".git"))) {
        io.err += "fatal: not a git repository (or any of the parent directories): .git\n";
        return 128;
      }
      st_.files[join_path(dir, ".git/HEAD")] = args.back() + "\n";
      io.err += fmt::format("HEAD is now at {}\n", args.back().substr(0, 7));
      return 0;
    }
    return 0;
  }

  int cmd_pytest(const std::vector<std::string>& args, StageIO& io) {
    const auto& profile = sc_.test_profile;
    bool collect_only = std::any_of(args.begin(), args.end(), [](const std::string& a) {
      return a == "--collect-only" || a == "--co";
    });
    duration_ += collect_only ? profile.duration_ms / 10 : profile.duration_ms;
    io.out += "============================= test session starts ==============================\n";
    io.out += fmt::format("platform linux -- Python {}.0, pytest-8.0.0\nrootdir: {}\n",
                          python_version(), cwd_);

    std::string collect_error;
    if (!python_matches(st_.base_image, profile.requires_python)) {
      collect_error = fmt::format("ImportError: requires Python {}, running {}",
                                  profile.requires_python, python_version());
    }
    for (const auto& pkg : profile.requires_packages) {
      if (collect_error.empty() && !pip_has(pkg)) {
        std::string module = normalize_package_name(pkg);
        std::replace(module.begin(), module.end(), '-', '_');
        collect_error = fmt::format("ModuleNotFoundError: No module named '{}'", module);
      }
    }
    for (const auto& [key, value] : profile.requires_env) {
      auto it = env_.find(key);
      if (collect_error.empty() && (it == env_.end() || it->second != value)) {
        collect_error = fmt::format("ImportError while importing test module: {} must be '{}'",
                                    key, value);
      }
    }
    if (collect_error.empty() && profile.outcome == TestProfile::Outcome::collect_error) {
      collect_error = profile.collect_error.empty() ? "SyntaxError: invalid syntax"
                                                    : profile.collect_error;
    }
    if (!collect_error.empty()) {
      io.out += "==================================== ERRORS ====================================\n";
      io.out += "_________________________ ERROR collecting tests _________________________\n";
      io.out += collect_error + "\n";
      io.out += "!!!!!!!!!!!!!!!!!!!! Interrupted: 1 error during collection !!!!!!!!!!!!!!!!!!!!\n";
      return 2;
    }
    if (profile.outcome == TestProfile::Outcome::no_tests || profile.test_count <= 0) {
      io.out += "collected 0 items\n\n============================ no tests ran in 0.01s =============================\n";
      return 5;
    }
    if (collect_only) {
      io.out += fmt::format("{} tests collected in 0.01s\n", profile.test_count);
      return 0;
    }
    io.out += fmt::format("collected {} items\n\n", profile.test_count);
    if (profile.outcome == TestProfile::Outcome::runs_fail) {
      io.out += fmt::format("=================== 1 failed, {} passed in 1.00s ===================\n",
                            profile.test_count - 1);
      return 1;
    }
    io.out += fmt::format("=================== {} passed in 1.00s ===================\n",
                          profile.test_count);
    return 0;
  }

  SimSandbox& box_;
  State& st_;
  const Scenario& sc_;
  std::string cwd_;
  std::map<std::string, std::string> env_;
  std::int64_t duration_ = 0;
  bool exited_ = false;
};

SimSandbox::SimSandbox(std::shared_ptr<const Scenario> scenario, const BaseImage& image)
    : scenario_(std::move(scenario)), state_(State::fresh(image)) {
  handle_.backend = Backend::sim;
  handle_.base_image = image;
  handle_.cwd = "/";
  handle_.session_id = "sim" + std::to_string(++g_session_counter);
}

ExecResult SimSandbox::exec(const Command& command) {
  Interpreter interpreter(*this);
  auto result = interpreter.run(command);
  if (result.duration_ms > timeout_.count()) {
    result.return_code = kTimeoutReturnCode;
    result.stderr_text += fmt::format("command timed out after {} s\n", timeout_.count() / 1000);
    result.duration_ms = timeout_.count();
  }
  elapsed_ms_ += result.duration_ms;
  handle_.cwd = state_.cwd;
  return result;
}

SnapshotId SimSandbox::snapshot(bool pinned) {
  SnapshotId id{fmt::format("{}-snap-{}", handle_.session_id, ++snapshot_counter_)};
  if (!pinned && latest_unpinned_) snapshots_.erase(*latest_unpinned_);
  snapshots_.emplace(id.id, state_);
  if (pinned) {
    pinned_.insert(id.id);
  } else {
    latest_unpinned_ = id.id;
  }
  return id;
}

void SimSandbox::rollback(const SnapshotId& id) {
  auto it = snapshots_.find(id.id);
  if (it == snapshots_.end()) throw Error(ErrorCode::unknown_snapshot, id.id);
  state_ = it->second;
  handle_.cwd = state_.cwd;
}

void SimSandbox::reset_with_base_image(const BaseImage& image) {
  state_ = State::fresh(image);
  handle_.base_image = image;
  handle_.cwd = state_.cwd;
  snapshots_.clear();
  pinned_.clear();
  latest_unpinned_.reset();
}

std::map<std::string, std::string> SimSandbox::installed_versions(std::string_view tool) {
  auto it = state_.installed.find(std::string(tool));
  return it == state_.installed.end() ? std::map<std::string, std::string>{} : it->second;
}

void SimSandbox::put_file(std::string_view path, std::string_view content) {
  auto p = resolve_path("/", path);
  std::string dir = parent_of(p);
  std::vector<std::string> missing;
  while (!state_.dirs.contains(dir)) {
    if (state_.files.contains(dir)) throw Error(ErrorCode::backend_io, dir + " is a file");
    missing.push_back(dir);
    dir = parent_of(dir);
  }
  for (auto& d : missing) state_.dirs.insert(std::move(d));
  if (state_.dirs.contains(p)) throw Error(ErrorCode::backend_io, p + " is a directory");
  state_.files[p] = std::string(content);
}

std::optional<std::string> SimSandbox::read_file(std::string_view path) {
  auto it = state_.files.find(resolve_path(handle_.cwd, path));
  if (it == state_.files.end()) return std::nullopt;
  return it->second;
}

void SimSandbox::set_env(std::string_view key, std::string_view value) {
  state_.env[std::string(key)] = std::string(value);
}

std::optional<std::string> SimSandbox::env_value(std::string_view key) const {
  auto it = state_.env.find(std::string(key));
  if (it == state_.env.end()) return std::nullopt;
  return it->second;
}

void SimSandbox::set_cwd(std::string_view path) {
  auto p = resolve_path("/", path);
  if (!state_.dirs.contains(p)) throw Error(ErrorCode::backend_io, "no such directory " + p);
  state_.cwd = p;
  handle_.cwd = p;
}

}  // namespace envforge::sim
