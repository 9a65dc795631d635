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

#include "envforge/agent.hpp"

#include <algorithm>
#include <fstream>
#include <regex>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "envforge/classify.hpp"
#include "envforge/code_edit.hpp"
#include "envforge/error.hpp"
#include "envforge/shell.hpp"
#include "envforge/text.hpp"

namespace envforge {

namespace {

const std::set<std::string, std::less<>>& reserved_programs() {
  static const std::set<std::string, std::less<>> names = {
      "waitinglist",   "conflictlist",          "download",            "runtest",
      "poetryruntest", "runpipreqs",            "change_python_version", "clear_configuration",
      "edit_file",     "stage_repo"};
  return names;
}

std::string trim(std::string_view text) {
  auto first = text.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  auto last = text.find_last_not_of(" \t\r\n");
  return std::string(text.substr(first, last - first + 1));
}

[[noreturn]] void invalid(const std::string& message) {
  throw Error(ErrorCode::invalid_action, message);
}

std::vector<std::string> words_of(std::string_view line) {
  shell::CommandList list;
  try {
    list = shell::parse(line);
  } catch (const Error& e) {
    invalid(e.detail());
  }
  if (list.items.empty()) return {};
  if (!list.single_stage()) invalid("expected a single command: " + std::string(line));
  return list.first_stage().argv;
}

bool is_version_xy(std::string_view text) {
  static const std::regex pattern(R"(\d+\.\d+)");
  return std::regex_match(text.begin(), text.end(), pattern);
}

std::string base_name(std::string_view path) {
  auto slash = path.rfind('/');
  return std::string(slash == std::string_view::npos ? path : path.substr(slash + 1));
}

bool is_fatal(ErrorCode code) {
  switch (code) {
    case ErrorCode::backend_io:
    case ErrorCode::backend_unavailable:
    case ErrorCode::unknown_snapshot:
    case ErrorCode::invariant_violation:
    case ErrorCode::repo_unavailable:
      return true;
    default:
      return false;
  }
}

const std::set<std::string, std::less<>>& stdlib_modules() {
  static const std::set<std::string, std::less<>> names = {
      "__future__", "abc", "argparse", "array", "ast", "asyncio", "base64", "bisect", "builtins",
      "bz2", "calendar", "cgi", "cmath", "codecs", "collections", "colorsys", "concurrent",
      "configparser", "contextlib", "contextvars", "copy", "copyreg", "cProfile", "csv",
      "ctypes", "curses", "dataclasses", "datetime", "dbm", "decimal", "difflib", "dis",
      "doctest", "email", "encodings", "enum", "errno", "faulthandler", "fcntl", "filecmp",
      "fileinput", "fnmatch", "fractions", "ftplib", "functools", "gc", "getopt", "getpass",
      "gettext", "glob", "graphlib", "gzip", "hashlib", "heapq", "hmac", "html", "http",
      "imaplib", "importlib", "inspect", "io", "ipaddress", "itertools", "json", "keyword",
      "linecache", "locale", "logging", "lzma", "mailbox", "marshal", "math", "mimetypes",
      "mmap", "multiprocessing", "netrc", "numbers", "operator", "optparse", "os", "pathlib",
      "pdb", "pickle", "pkgutil", "platform", "plistlib", "poplib", "posixpath", "pprint",
      "profile", "pstats", "pty", "pwd", "queue", "quopri", "random", "re", "readline",
      "reprlib", "resource", "runpy", "sched", "secrets", "select", "selectors", "shelve",
      "shlex", "shutil", "signal", "site", "smtplib", "socket", "socketserver", "sqlite3",
      "ssl", "stat", "statistics", "string", "stringprep", "struct", "subprocess", "symtable",
      "sys", "sysconfig", "syslog", "tarfile", "tempfile", "termios", "textwrap", "threading",
      "time", "timeit", "tkinter", "token", "tokenize", "tomllib", "trace", "traceback",
      "tracemalloc", "tty", "turtle", "types", "typing", "unicodedata", "unittest", "urllib",
      "uuid", "venv", "warnings", "wave", "weakref", "webbrowser", "wsgiref", "xml", "xmlrpc",
      "zipapp", "zipfile", "zipimport", "zlib", "zoneinfo"};
  return names;
}

const std::map<std::string, std::string, std::less<>>& distribution_aliases() {
  static const std::map<std::string, std::string, std::less<>> aliases = {
      {"PIL", "pillow"},         {"bs4", "beautifulsoup4"}, {"cv2", "opencv-python"},
      {"dateutil", "python-dateutil"}, {"dotenv", "python-dotenv"}, {"jwt", "pyjwt"},
      {"sklearn", "scikit-learn"}, {"skimage", "scikit-image"}, {"yaml", "pyyaml"},
      {"google.protobuf", "protobuf"}, {"attr", "attrs"},   {"serial", "pyserial"},
      {"Crypto", "pycryptodome"}, {"magic", "python-magic"}, {"usb", "pyusb"}};
  return aliases;
}

}  // namespace

std::string_view to_string(Verb verb) {
  switch (verb) {
    case Verb::bash: return "bash";
    case Verb::waitinglist_add: return "waitinglist add";
    case Verb::waitinglist_addfile: return "waitinglist addfile";
    case Verb::waitinglist_clear: return "waitinglist clear";
    case Verb::waitinglist_show: return "waitinglist show";
    case Verb::conflictlist_solve: return "conflictlist solve";
    case Verb::conflictlist_clear: return "conflictlist clear";
    case Verb::conflictlist_show: return "conflictlist show";
    case Verb::download: return "download";
    case Verb::runtest: return "runtest";
    case Verb::poetryruntest: return "poetryruntest";
    case Verb::runpipreqs: return "runpipreqs";
    case Verb::change_python_version: return "change_python_version";
    case Verb::clear_configuration: return "clear_configuration";
    case Verb::edit_file: return "edit_file";
  }
  return "bash";
}

std::string_view to_string(TestStatus status) {
  switch (status) {
    case TestStatus::verified: return "verified";
    case TestStatus::collect_error: return "collect-error";
    case TestStatus::no_tests: return "no-tests";
    case TestStatus::timeout: return "timeout";
  }
  return "collect-error";
}

Action Action::bash(std::string line) {
  Action a;
  a.verb = Verb::bash;
  a.command = std::move(line);
  return a;
}

Action Action::parse(std::string_view text) {
  std::string body = trim(text);
  if (body.empty()) invalid("empty action");
  auto newline = body.find('\n');
  std::string first = trim(body.substr(0, newline));
  std::string rest = newline == std::string::npos ? "" : body.substr(newline + 1);

  std::string_view head(first);
  auto space = head.find_first_of(" \t");
  auto program = head.substr(0, space);

  Action a;
  if (program == "edit_file") {
    auto words = words_of(first);
    if (words.size() != 2) invalid("usage: edit_file PATH, followed by SEARCH/REPLACE blocks");
    a.verb = Verb::edit_file;
    a.path = words[1];
    a.patch = rest;
    if (!a.patch.empty() && !a.patch.ends_with("\n")) a.patch += '\n';
    a.validate();
    return a;
  }
  if (!trim(rest).empty()) {
    invalid("only include a SINGLE command per reply; found several lines");
  }
  if (!reserved_programs().contains(program)) {
    a.verb = Verb::bash;
    a.command = first;
    a.validate();
    return a;
  }

  auto words = words_of(first);
  auto arity = [&](std::size_t n) {
    if (words.size() != n) invalid("wrong number of arguments for " + words[0]);
  };
  const std::string& verb = words[0];
  if (verb == "waitinglist" || verb == "conflictlist") {
    if (words.size() < 2) invalid("usage: " + verb + " add|addfile|solve|clear|show ...");
    const std::string& sub = words[1];
    if (verb == "waitinglist" && sub == "add") {
      a.verb = Verb::waitinglist_add;
      for (std::size_t i = 2; i < words.size(); ++i) {
        auto value = [&]() -> std::string {
          if (i + 1 >= words.size()) invalid("missing value for " + words[i]);
          return words[++i];
        };
        if (words[i] == "-p") {
          a.package = value();
        } else if (words[i] == "-v") {
          a.constraint = value();
        } else if (words[i] == "-t") {
          a.tool = value();
        } else {
          invalid("unknown option " + words[i] + " for waitinglist add");
        }
      }
    } else if (verb == "waitinglist" && sub == "addfile") {
      arity(3);
      a.verb = Verb::waitinglist_addfile;
      a.path = words[2];
    } else if (sub == "clear") {
      arity(2);
      a.verb = verb == "waitinglist" ? Verb::waitinglist_clear : Verb::conflictlist_clear;
    } else if (sub == "show") {
      arity(2);
      a.verb = verb == "waitinglist" ? Verb::waitinglist_show : Verb::conflictlist_show;
    } else if (verb == "conflictlist" && sub == "solve") {
      a.verb = Verb::conflictlist_solve;
      if (words.size() == 3 && words[2] == "-u") {
        a.keep_original = true;
      } else if (words.size() == 4 && words[2] == "-v") {
        a.constraint = words[3];
      } else {
        invalid("usage: conflictlist solve -v \"CONSTRAINTS\" | conflictlist solve -u");
      }
    } else {
      invalid("unknown " + verb + " subcommand " + sub);
    }
  } else if (verb == "download") {
    arity(1);
    a.verb = Verb::download;
  } else if (verb == "runtest") {
    arity(1);
    a.verb = Verb::runtest;
  } else if (verb == "poetryruntest") {
    arity(1);
    a.verb = Verb::poetryruntest;
  } else if (verb == "runpipreqs") {
    arity(1);
    a.verb = Verb::runpipreqs;
  } else if (verb == "clear_configuration") {
    arity(1);
    a.verb = Verb::clear_configuration;
  } else if (verb == "change_python_version") {
    arity(2);
    a.verb = Verb::change_python_version;
    a.version = words[1];
  } else {
    invalid(verb + " cannot be used as an action");
  }
  a.validate();
  return a;
}

void Action::validate() const {
  switch (verb) {
    case Verb::bash: {
      if (trim(command).empty()) invalid("empty command");
      if (command.find('\n') != std::string::npos) {
        invalid("only include a SINGLE command per reply; found several lines");
      }
      try {
        Command parsed(command);
        bool reserved = false;
        parsed.parsed().for_each_stage([&](const shell::SimpleCommand& stage) {
          if (reserved_programs().contains(stage.program())) reserved = true;
        });
        if (reserved) invalid("tool commands must be issued on their own, not inside a shell line");
      } catch (const Error& e) {
        if (e.code() == ErrorCode::invalid_action) throw;
        invalid(e.detail());
      }
      break;
    }
    case Verb::waitinglist_add:
      if (package.empty()) invalid("waitinglist add needs -p PACKAGE");
      if (tool != "pip" && tool != "apt") invalid("waitinglist add needs -t pip or -t apt");
      break;
    case Verb::waitinglist_addfile:
    case Verb::edit_file:
      if (path.empty()) invalid("missing file path");
      break;
    case Verb::change_python_version:
      if (!is_version_xy(version)) invalid("change_python_version expects a version like 3.11");
      break;
    default:
      break;
  }
}

std::string Action::to_text() const {
  switch (verb) {
    case Verb::bash:
      return command;
    case Verb::waitinglist_add: {
      auto text = "waitinglist add -p " + shell::quote(package);
      if (!constraint.empty()) text += " -v " + shell::quote(constraint);
      return text + " -t " + shell::quote(tool);
    }
    case Verb::waitinglist_addfile:
      return "waitinglist addfile " + shell::quote(path);
    case Verb::conflictlist_solve:
      if (keep_original) return "conflictlist solve -u";
      return "conflictlist solve -v " + shell::quote(constraint.empty() ? "" : constraint);
    case Verb::change_python_version:
      return "change_python_version " + version;
    case Verb::edit_file:
      return "edit_file " + shell::quote(path) + "\n" + patch;
    default:
      return std::string(to_string(verb));
  }
}

void BuildBudget::validate() const {
  if (max_turns <= 0 || max_wall_seconds <= 0 || max_base_image_changes <= 0) {
    throw Error(ErrorCode::invalid_action, "budget limits must be positive");
  }
}

TestStatus classify_test_run(int collect_exit, std::optional<int> run_exit) {
  if (collect_exit == kTimeoutReturnCode) return TestStatus::timeout;
  if (collect_exit == 5) return TestStatus::no_tests;
  if (collect_exit != 0 || !run_exit) return TestStatus::collect_error;
  switch (*run_exit) {
    case 0:
    case 1: return TestStatus::verified;
    case 5: return TestStatus::no_tests;
    case kTimeoutReturnCode: return TestStatus::timeout;
    default: return TestStatus::collect_error;
  }
}

bool is_protected_test_file(std::string_view path) {
  auto name = base_name(path);
  return name.starts_with("test_") || name.ends_with("_test.py");
}

std::vector<std::string> scan_imports(
    const std::vector<std::pair<std::string, std::string>>& sources) {
  std::set<std::string> local;
  for (const auto& [path, _] : sources) {
    std::stringstream parts(path);
    for (std::string part; std::getline(parts, part, '/');) {
      if (part.ends_with(".py")) part.resize(part.size() - 3);
      if (!part.empty()) local.insert(part);
    }
  }
  static const std::regex import_line(R"(^\s*import\s+([\w.]+(?:\s*,\s*[\w.]+)*))");
  static const std::regex from_line(R"(^\s*from\s+([\w.]+)\s+import\b)");
  std::set<std::string> found;
  for (const auto& [path, content] : sources) {
    std::istringstream lines(content);
    for (std::string line; std::getline(lines, line);) {
      std::smatch m;
      std::vector<std::string> modules;
      if (std::regex_search(line, m, from_line)) {
        modules.push_back(m[1]);
      } else if (std::regex_search(line, m, import_line)) {
        std::stringstream names(m[1].str());
        for (std::string name; std::getline(names, name, ',');) modules.push_back(trim(name));
      }
      for (const auto& module : modules) {
        auto alias = distribution_aliases().find(module);
        if (module.empty() || module.starts_with('.')) continue;
        auto top = module.substr(0, module.find('.'));
        if (alias == distribution_aliases().end()) alias = distribution_aliases().find(top);
        if (stdlib_modules().contains(top) || local.contains(top)) continue;
        found.insert(alias != distribution_aliases().end() ? alias->second : top);
      }
    }
  }
  return {found.begin(), found.end()};
}

std::vector<std::pair<std::string, std::string>> local_repo_files(
    const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw Error(ErrorCode::repo_unavailable, root.string());
  std::vector<std::pair<std::string, std::string>> files;
  for (auto it = fs::recursive_directory_iterator(root); it != fs::recursive_directory_iterator();
       ++it) {
    auto name = it->path().filename().string();
    if (it->is_directory() && (name == ".git" || name == "__pycache__" || name == ".pytest_cache")) {
      it.disable_recursion_pending();
      continue;
    }
    if (!it->is_regular_file()) continue;
    if (it.depth() == 0 && name.starts_with("envforge-")) continue;
    std::ifstream in(it->path(), std::ios::binary);
    std::stringstream buffer;
    buffer << in.rdbuf();
    files.emplace_back(fs::relative(it->path(), root).generic_string(), buffer.str());
  }
  std::sort(files.begin(), files.end());
  return files;
}

Session::Session(SandboxFactory& factory, RepoSource source, BuildOptions options)
    : source_(std::move(source)), options_(std::move(options)) {
  options_.budget.validate();
  BaseImage initial{std::string(kDefaultBaseImage)};
  trace_.repo = source_.ref;
  trace_.initial_base_image = initial;
  trace_.final_base_image = initial;
  if (options_.trace_path) {
    writer_ = std::make_unique<TraceWriter>(options_.trace_path->string(), trace_.repo, initial);
  }
  sandbox_ = factory.start(initial);
  sandbox_->set_timeout(options_.command_timeout);
  stage_repository();
}

void Session::append(CommandRecord record) {
  if (pending_thought_) record.thought = pending_thought_;
  if (writer_) writer_->append(record);
  trace_.records.push_back(std::move(record));
}

GuardedResult Session::guarded(const Command& command, GuardOptions guard) {
  guard.turn = next_turn_++;
  guard.rollback_enabled = options_.rollback_enabled;
  guard.head_limit = options_.head_limit;
  guard.tail_limit = options_.tail_limit;
  auto result = exec_guarded(*sandbox_, command, guard);
  append(result.record);
  return result;
}

void Session::stage_repository() {
  const auto& dir = options_.repo_dir;
  if (source_.local_path) {
    auto root = std::filesystem::absolute(*source_.local_path).lexically_normal();
    GuardOptions guard;
    guard.kind = CommandKind::code_edit;
    for (auto& [rel, content] : local_repo_files(root)) {
      guard.uploads.emplace_back(resolve_path(dir, rel), std::move(content));
    }
    guard.run = [dir](Sandbox& sb) { return sb.exec(Command("mkdir -p " + shell::quote(dir))); };
    auto staged = guarded(Command("stage_repo " + shell::quote(root.string()) + " " +
                                  shell::quote(dir)),
                          std::move(guard));
    if (staged.result.return_code != 0) {
      throw Error(ErrorCode::repo_unavailable, root.string() + ": " + staged.result.stderr_text);
    }
  } else {
    auto url = "https://github.com/" + source_.ref.full_name + ".git";
    auto clone = guarded(Command("git clone " + shell::quote(url) + " " + shell::quote(dir)));
    if (clone.result.return_code != 0) {
      throw Error(ErrorCode::repo_unavailable,
                  source_.ref.full_name + ": " + trim(clone.result.stderr_text));
    }
    if (!source_.ref.sha.empty()) {
      auto checkout = guarded(Command("cd " + shell::quote(dir) + " && git checkout " +
                                      shell::quote(source_.ref.sha)));
      if (checkout.result.return_code != 0) {
        throw Error(ErrorCode::repo_unavailable,
                    source_.ref.sha + ": " + trim(checkout.result.stderr_text));
      }
    }
  }
  sandbox_->set_cwd(dir);
}

Observation Session::observe(std::string text, std::optional<int> rc, bool terminal) const {
  return {truncate(sanitize_utf8(text), options_.head_limit, options_.tail_limit), rc, terminal};
}

void Session::check_guard(const Command& command) const {
  const auto& cwd = sandbox_->handle().cwd;
  auto check = [&](const std::string& target) {
    if (is_protected_test_file(target)) {
      throw Error(ErrorCode::guard_violation,
                  "test files may not be modified or deleted: " + resolve_path(cwd, target));
    }
  };
  command.parsed().for_each_stage([&](const shell::SimpleCommand& stage) {
    for (const auto& r : stage.redirects) {
      if (r.writes_output() && r.mode != shell::Redirect::Mode::duplicate) check(r.target);
    }
    auto program = stage.program();
    std::vector<std::string> operands;
    bool in_place = false;
    for (std::size_t i = 1; i < stage.argv.size(); ++i) {
      const auto& arg = stage.argv[i];
      if (arg.starts_with("-")) {
        if (arg == "-i" || arg.starts_with("-i") || arg == "--in-place") in_place = true;
        continue;
      }
      operands.push_back(arg);
    }
    if (program == "rm" || program == "unlink" || program == "mv" || program == "tee" ||
        program == "truncate" || (program == "sed" && in_place)) {
      for (const auto& o : operands) check(o);
    } else if ((program == "cp" || program == "ln") && !operands.empty()) {
      check(operands.back());
    }
  });
}

Observation Session::run_bash(const Action& action) {
  Command command(action.command);
  check_guard(command);
  auto [result, record] = guarded(command);
  std::string text = result.stdout_text + result.stderr_text;
  if (!text.empty() && !text.ends_with("\n")) text += '\n';
  text += fmt::format("return code: {}", result.return_code);
  if (record.rolled_back) text += " (the environment was rolled back to its state before this command)";
  return observe(std::move(text), result.return_code);
}

TestRun Session::run_tests(bool poetry) {
  std::string prefix = "cd " + shell::quote(options_.repo_dir) + " && " + (poetry ? "poetry run " : "");
  TestRun run;
  GuardOptions guard;
  guard.kind = CommandKind::mutating;
  guard.run = [&](Sandbox& sb) {
    ExecResult combined;
    auto collect = sb.exec(Command(prefix + "pytest --collect-only -q"));
    combined.duration_ms = collect.duration_ms;
    combined.stdout_text = collect.stdout_text;
    combined.stderr_text = collect.stderr_text;
    std::optional<int> full_exit;
    if (collect.return_code == 0) {
      auto full = sb.exec(Command(prefix + "pytest"));
      combined.duration_ms += full.duration_ms;
      combined.stdout_text += full.stdout_text;
      combined.stderr_text += full.stderr_text;
      full_exit = full.return_code;
    }
    run.status = classify_test_run(collect.return_code, full_exit);
    run.pytest_exit = full_exit.value_or(collect.return_code);
    run.log = combined.stdout_text + combined.stderr_text;
    if (run.status == TestStatus::verified) {
      combined.return_code = 0;
    } else {
      combined.return_code = run.pytest_exit != 0 ? run.pytest_exit : 1;
    }
    return combined;
  };
  guarded(Command(poetry ? "poetryruntest" : "runtest"), std::move(guard));
  verified_ = run.status == TestStatus::verified;
  last_test_log_ = run.log;
  return run;
}

Observation Session::run_test_action(bool poetry, const std::optional<std::string>&) {
  auto run = run_tests(poetry);
  std::string text = run.log;
  if (!text.empty() && !text.ends_with("\n")) text += '\n';
  switch (run.status) {
    case TestStatus::verified:
      text += fmt::format("tests ran (pytest exit {}); the environment is verified", run.pytest_exit);
      break;
    case TestStatus::no_tests:
      text += "no tests were collected";
      break;
    case TestStatus::timeout:
      text += "the test run timed out";
      break;
    case TestStatus::collect_error:
      text += fmt::format("tests could not run (pytest exit {}); the environment was rolled back",
                          run.pytest_exit);
      break;
  }
  return observe(std::move(text), run.status == TestStatus::verified ? 0 : run.pytest_exit,
                 run.status == TestStatus::verified);
}

Observation Session::edit_file(std::string_view path, std::string_view patch,
                               std::optional<std::string> thought) {
  auto target = resolve_path(sandbox_->handle().cwd, path);
  if (is_protected_test_file(target)) {
    throw Error(ErrorCode::guard_violation, "test files may not be modified: " + target);
  }
  if (thought) pending_thought_ = std::move(thought);
  int turn = next_turn_;
  auto patch_file = code_edit::patch_path(turn);
  GuardOptions guard;
  guard.kind = CommandKind::code_edit;
  guard.uploads = {{code_edit::script_path(), std::string(code_edit::script())},
                   {patch_file, std::string(patch)}};
  guard.run = [&](Sandbox& sb) {
    return sb.exec(Command("python " + code_edit::script_path() + " " + shell::quote(target) +
                           " " + patch_file));
  };
  guard.turn = next_turn_++;
  guard.rollback_enabled = options_.rollback_enabled;
  guard.head_limit = options_.head_limit;
  guard.tail_limit = options_.tail_limit;
  auto [result, record] = exec_guarded(*sandbox_, Command("edit_file " + shell::quote(target)), guard);
  record.patch = std::string(patch);
  append(record);
  if (result.return_code != 0) {
    return observe(fmt::format("{}: {}{}return code: {}; the edit was rolled back",
                               to_string(ErrorCode::patch_apply_failed), result.stdout_text,
                               result.stderr_text, result.return_code),
                   result.return_code);
  }
  return observe(result.stdout_text + "return code: 0", 0);
}

Observation Session::change_base_image(const BaseImage& image, std::string raw) {
  if (base_image_changes_ >= options_.budget.max_base_image_changes) {
    return observe("base image change limit reached", std::nullopt, true);
  }
  auto cwd = sandbox_->handle().cwd;
  try {
    sandbox_->reset_with_base_image(image);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::image_unavailable) throw;
    return observe(std::string("error: ") + e.what(), std::nullopt);
  }
  CommandRecord record{Command(std::move(raw))};
  record.turn = next_turn_++;
  record.cwd = cwd;
  record.classification = CommandKind::base_image_change;
  append(std::move(record));
  ++base_image_changes_;
  verified_ = false;
  trace_.final_base_image = image;
  stage_repository();
  return observe(fmt::format("the base image is now {}; all earlier building was discarded and "
                             "the repository is staged again at {}",
                             image.name, options_.repo_dir),
                 0);
}

Observation Session::download() {
  auto first_record = trace_.records.size();
  auto results = lists_.download([&](const Command& command) { return guarded(command).record; });
  std::string text;
  bool all_ok = true;
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& r = results[i];
    if (r.ok) {
      text += fmt::format("{} ({}): installed {}\n", r.package, r.tool, r.version.value_or("?"));
    } else {
      all_ok = false;
      text += fmt::format("{} ({}): failed with return code {}; the environment was rolled back\n",
                          r.package, r.tool, r.return_code);
    }
  }
  for (auto i = first_record; i < trace_.records.size(); ++i) {
    const auto& record = trace_.records[i];
    if (record.return_code != 0) text += record.command.raw() + ":\n" + record.stderr_excerpt;
  }
  return observe(std::move(text), all_ok ? 0 : 1);
}

Observation Session::runpipreqs(const std::optional<std::string>&) {
  const auto& dir = options_.repo_dir;
  auto listing = sandbox_->exec(Command("find " + shell::quote(dir) + " -name '*.py' -type f"));
  std::vector<std::pair<std::string, std::string>> sources;
  std::istringstream lines(listing.stdout_text);
  for (std::string path; std::getline(lines, path);) {
    if (path.empty()) continue;
    auto content = sandbox_->read_file(path);
    auto rel = path.starts_with(dir + "/") ? path.substr(dir.size() + 1) : path;
    if (content) sources.emplace_back(rel, *content);
  }
  auto requirements = scan_imports(sources);
  std::string write_requirements;
  if (requirements.empty()) {
    write_requirements = ": > requirements_pipreqs.txt";
  } else {
    write_requirements = "printf '%s\\n'";
    for (const auto& r : requirements) write_requirements += " " + shell::quote(r);
    write_requirements += " > requirements_pipreqs.txt";
  }
  auto saved = fmt::format("INFO: Successfully saved requirements file in {}/requirements_pipreqs.txt",
                           dir);
  Command command("cd " + shell::quote(dir) + " && " + write_requirements + " && printf '%s\\n' " +
                  shell::quote(saved) + " > pipreqs_output.txt && : > pipreqs_error.txt");
  auto [result, record] = guarded(command);
  std::string text;
  for (const auto& r : requirements) text += r + "\n";
  text += result.return_code == 0 ? saved : fmt::format("runpipreqs failed: {}", result.stderr_text);
  return observe(std::move(text), result.return_code);
}

Observation Session::dispatch(const Action& action) {
  pending_thought_ = action.thought;
  try {
    action.validate();
    switch (action.verb) {
      case Verb::bash:
        return run_bash(action);
      case Verb::waitinglist_add: {
        auto item = WaitingItem::make(action.package, action.constraint, action.tool);
        auto name = item.package;
        switch (lists_.wl_add(std::move(item))) {
          case AddResult::added:
            return observe(fmt::format("added {} to the waiting list", name), 0);
          case AddResult::unchanged:
            return observe(fmt::format("{} is already in the waiting list with that constraint", name), 0);
          case AddResult::conflict_queued:
            return observe(fmt::format("{} is already waiting with a different constraint; a conflict "
                                       "was queued:\n{}", name, lists_.cl_show()), 0);
        }
        break;
      }
      case Verb::waitinglist_addfile: {
        auto path = resolve_path(sandbox_->handle().cwd, action.path);
        auto content = sandbox_->read_file(path);
        if (!content) throw Error(ErrorCode::file_missing, path);
        auto conflicts_before = lists_.conflicts().size();
        int added = lists_.wl_addfile(*content);
        return observe(fmt::format("added {} item(s) from {}; {} new conflict(s)", added, path,
                                   lists_.conflicts().size() - conflicts_before),
                       0);
      }
      case Verb::waitinglist_clear:
        lists_.wl_clear();
        return observe("waiting list cleared", 0);
      case Verb::waitinglist_show:
        return observe(lists_.wl_show(), 0);
      case Verb::conflictlist_solve: {
        Resolution resolution = KeepOriginal{};
        if (!action.keep_original) resolution = VersionConstraint::parse(action.constraint);
        lists_.cl_solve_first(resolution);
        return observe("conflict resolved\n" + lists_.wl_show(), 0);
      }
      case Verb::conflictlist_clear:
        lists_.cl_clear();
        return observe("conflict list cleared", 0);
      case Verb::conflictlist_show:
        return observe(lists_.cl_show(), 0);
      case Verb::download:
        return download();
      case Verb::runtest:
      case Verb::poetryruntest:
        return run_test_action(action.verb == Verb::poetryruntest, action.thought);
      case Verb::runpipreqs:
        return runpipreqs(action.thought);
      case Verb::change_python_version:
        return change_base_image(BaseImage::python(action.version),
                                 "change_python_version " + action.version);
      case Verb::clear_configuration:
        return change_base_image(BaseImage(std::string(kDefaultBaseImage)), "clear_configuration");
      case Verb::edit_file:
        return edit_file(action.path, action.patch);
    }
  } catch (const Error& e) {
    if (is_fatal(e.code())) throw;
    return observe(std::string("error: ") + e.what(), std::nullopt);
  }
  return observe("error: unhandled action", std::nullopt);
}

Trace Session::finish(Outcome outcome) {
  trace_.outcome = outcome;
  trace_.final_base_image = sandbox_->handle().base_image;
  if (writer_) writer_->finish(trace_.final_base_image, outcome);
  return trace_;
}

BuildResult run_build_session(const RepoSource& source, Policy& policy, SandboxFactory& factory,
                              const BuildOptions& options) {
  auto started = std::chrono::steady_clock::now();
  Session session(factory, source, options);
  auto elapsed_ms = [&]() -> std::int64_t {
    if (factory.backend() == Backend::sim) return session.sandbox().elapsed_ms();
    return std::chrono::duration_cast<std::chrono::milliseconds>(
               std::chrono::steady_clock::now() - started)
        .count();
  };
  BuildResult result;
  Outcome outcome = Outcome::budget_exhausted;
  int turns = 0;
  try {
    while (turns < options.budget.max_turns &&
           elapsed_ms() < std::int64_t{options.budget.max_wall_seconds} * 1000) {
      PolicyContext context{source.ref, options.repo_dir, session.sandbox().handle().base_image,
                            turns + 1};
      auto action = policy.next_action(result.history, context);
      if (!action) break;
      ++turns;
      auto observation = session.dispatch(*action);
      result.history.push_back({*action, observation});
      if (observation.terminal) {
        if (session.verified()) outcome = Outcome::verified;
        break;
      }
    }
  } catch (const Error& e) {
    spdlog::warn("build of {} aborted: {}", source.ref.full_name, e.what());
    outcome = Outcome::aborted;
  }
  result.trace = session.finish(outcome);
  result.elapsed_ms = elapsed_ms();
  result.last_test_log = session.last_test_log();
  return result;
}

Trace run_build(const RepoSource& source, Policy& policy, SandboxFactory& factory,
                const BuildOptions& options) {
  return run_build_session(source, policy, factory, options).trace;
}

}  // namespace envforge
