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

#include "envforge/synthesizer.hpp"

#include <fstream>
#include <regex>
#include <set>

#include <fmt/format.h>

#include "envforge/agent.hpp"
#include "envforge/classify.hpp"
#include "envforge/code_edit.hpp"
#include "envforge/error.hpp"
#include "envforge/sandbox.hpp"
#include "envforge/shell.hpp"
#include "envforge/version.hpp"

namespace envforge {

namespace {

using PinLedger = std::map<std::pair<std::string, std::string>, std::string>;

bool runs_apt_update(const shell::CommandList& list) {
  bool found = false;
  list.for_each_stage([&](const shell::SimpleCommand& stage) {
    auto p = stage.program();
    if (p != "apt-get" && p != "apt") return;
    for (std::size_t i = 1; i < stage.argv.size(); ++i) {
      if (stage.argv[i].starts_with("-")) continue;
      found = found || stage.argv[i] == "update";
      return;
    }
  });
  return found;
}

bool runs_apt_install(const shell::CommandList& list) {
  bool found = false;
  list.for_each_stage([&](const shell::SimpleCommand& stage) {
    if (!is_install_stage(stage)) return;
    auto p = stage.program();
    found = found || p == "apt-get" || p == "apt";
  });
  return found;
}

// Rewrites every pip package spec of the line to name[extras]==version.
std::string pin_line(const CommandRecord& record, const PinLedger& ledger) {
  auto version_of = [&](const std::string& package) -> std::optional<std::string> {
    auto key = normalize_package_name(package);
    for (const auto& p : record.installed) {
      if (p.tool == "pip" && p.package == key) return p.version;
    }
    auto it = ledger.find({"pip", key});
    if (it != ledger.end()) return it->second;
    return std::nullopt;
  };
  static const std::regex name_with_extras(R"(^\s*([A-Za-z0-9][A-Za-z0-9._-]*)\s*(\[[^\]]*\])?)");

  shell::CommandList list = record.command.parsed();
  bool changed = false;
  for (auto& [connector, pipeline] : list.items) {
    for (auto& stage : pipeline.stages) {
      if (!is_install_stage(stage)) continue;
      auto specs = parse_install_stage(stage);
      std::vector<std::string> wanted;
      for (const auto& spec : specs) {
        if (spec.tool == "pip" && spec.kind == InstallSpec::Kind::package) {
          wanted.push_back(normalize_package_name(spec.package));
        }
      }
      if (wanted.empty()) continue;
      std::size_t next = 0;
      bool after_install = false;
      for (auto& word : stage.argv) {
        if (!after_install) {
          after_install = word == "install";
          continue;
        }
        if (next >= wanted.size() || word.starts_with("-")) continue;
        auto [name, constraint] = split_requirement(word);
        if (normalize_package_name(name) != wanted[next]) continue;
        auto version = version_of(name);
        if (!version) throw Error(ErrorCode::missing_pin, name);
        std::smatch m;
        std::string head = name;
        if (std::regex_search(word, m, name_with_extras)) head = m[1].str() + m[2].str();
        auto pinned = head + "==" + *version;
        if (pinned != word) {
          word = pinned;
          changed = true;
        }
        ++next;
      }
    }
  }
  return changed ? shell::render_keeping_variables(list) : record.command.raw();
}

// "cd DIR && git checkout REF" and similar lines made only of cd and git checkout.
bool is_checkout_line(const shell::CommandList& list) {
  bool checkout = false;
  bool other = false;
  list.for_each_stage([&](const shell::SimpleCommand& stage) {
    if (stage.program() == "cd") return;
    if (stage.program() == "git" && stage.argv.size() >= 2 && stage.argv[1] == "checkout") {
      checkout = true;
    } else {
      other = true;
    }
  });
  return checkout && !other;
}

std::string with_cwd(const std::string& cwd, const std::string& line) {
  if (cwd == "/" || line.starts_with("cd /")) return line;
  return "cd " + shell::quote(cwd) + " && " + line;
}

std::string unescape_env_value(std::string_view text) {
  std::string out;
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (text[i] == '\\' && i + 1 < text.size()) {
      out += text[++i];
    } else {
      out += text[i];
    }
  }
  return out;
}

}  // namespace

std::string_view to_string(Keyword keyword) {
  switch (keyword) {
    case Keyword::from: return "FROM";
    case Keyword::env: return "ENV";
    case Keyword::copy: return "COPY";
    case Keyword::run: return "RUN";
  }
  return "RUN";
}

std::string DockerfileStatement::line() const {
  return std::string(to_string(keyword)) + " " + payload;
}

std::string env_payload(std::string_view key, std::string_view value) {
  std::string out = std::string(key) + "=\"";
  for (char c : value) {
    if (c == '\\' || c == '"' || c == '$' || c == '`') out += '\\';
    if (c == '\n') {
      out += "\\n";
      continue;
    }
    out += c;
  }
  return out + "\"";
}

std::pair<std::string, std::string> parse_env_payload(std::string_view payload) {
  auto eq = payload.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    throw Error(ErrorCode::parse_error, "ENV without KEY=VALUE: " + std::string(payload));
  }
  std::string key(payload.substr(0, eq));
  auto value = payload.substr(eq + 1);
  if (value.size() >= 2 && value.front() == '"' && value.back() == '"') {
    return {key, unescape_env_value(value.substr(1, value.size() - 2))};
  }
  return {key, std::string(value)};
}

std::vector<CommandRecord> supersession_filter(const std::vector<CommandRecord>& records) {
  std::size_t start = 0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].classification == CommandKind::base_image_change) start = i;
  }
  return {records.begin() + static_cast<long>(start), records.end()};
}

DockerfileProgram synthesize(const Trace& trace, const SynthesisOptions& options) {
  if (trace.outcome != Outcome::verified && !options.allow_unverified) {
    throw Error(ErrorCode::unverified_trace, std::string(to_string(trace.outcome)));
  }
  auto records = supersession_filter(trace.records);
  DockerfileProgram program;

  std::string from = trace.initial_base_image.name;
  std::optional<int> from_turn;
  if (!records.empty() && records.front().classification == CommandKind::base_image_change) {
    if (auto image = target_image(records.front().command)) from = image->name;
    from_turn = records.front().turn;
  }
  program.statements.push_back({Keyword::from, from, from_turn});

  auto contributes = [](const CommandRecord& r) {
    return r.classification != CommandKind::safe &&
           r.classification != CommandKind::base_image_change && r.return_code == 0 &&
           !r.rolled_back && !is_test_runner(r.command.argv0());
  };
  for (const auto& r : records) {
    if (!contributes(r)) continue;
    for (const auto& p : r.installed) program.pin_ledger[{p.tool, p.package}] = p.version;
  }

  bool script_copied = false;
  bool apt_updated = false;
  std::map<std::string, std::size_t> env_position;
  for (const auto& r : records) {
    if (!contributes(r)) continue;
    const auto& argv = r.command.parsed().first_stage().argv;
    auto add = [&](Keyword k, std::string payload) {
      program.statements.push_back({k, std::move(payload), r.turn});
    };

    if (r.classification == CommandKind::export_env) {
      for (const auto& [key, value] : r.env_delta) {
        auto payload = env_payload(key, value);
        auto it = env_position.find(key);
        if (it != env_position.end()) {
          program.statements[it->second].payload = std::move(payload);
          program.statements[it->second].origin_turn = r.turn;
        } else {
          env_position[key] = program.statements.size();
          add(Keyword::env, std::move(payload));
        }
      }
      continue;
    }

    if (r.classification == CommandKind::code_edit && r.command.argv0() == "edit_file") {
      if (!r.patch || argv.size() != 2) {
        throw Error(ErrorCode::invariant_violation,
                    fmt::format("code edit at turn {} carries no patch", r.turn));
      }
      auto asset = std::string(kAssetsDir) + "/" + code_edit::patch_asset_name(r.turn);
      program.files.push_back({asset, *r.patch});
      add(Keyword::copy, asset + " " + code_edit::patch_path(r.turn));
      if (!script_copied) {
        auto script_asset = std::string(kAssetsDir) + "/" + std::string(code_edit::kScriptName);
        program.files.push_back({script_asset, std::string(code_edit::script())});
        add(Keyword::copy, script_asset + " " + code_edit::script_path());
        script_copied = true;
      }
      add(Keyword::run, with_cwd(r.cwd, "python " + code_edit::script_path() + " " +
                                            shell::quote(argv[1]) + " " +
                                            code_edit::patch_path(r.turn)));
      continue;
    }

    if (r.classification == CommandKind::code_edit && r.command.argv0() == "stage_repo") {
      if (argv.size() != 3) {
        throw Error(ErrorCode::invariant_violation, "stage_repo expects SOURCE DEST");
      }
      auto asset = std::string(kAssetsDir) + "/repo";
      program.directories.push_back({asset, argv[1]});
      add(Keyword::copy, asset + " " + argv[2]);
      continue;
    }

    if (options.copy_repo && is_checkout_line(r.command.parsed())) continue;
    if (options.copy_repo && argv.size() >= 2 && argv[0] == "git" && argv[1] == "clone" &&
        r.command.parsed().single_stage()) {
      std::vector<std::string> operands;
      for (std::size_t i = 2; i < argv.size(); ++i) {
        if (!argv[i].starts_with("-")) operands.push_back(argv[i]);
      }
      if (operands.size() == 2) {
        auto asset = std::string(kAssetsDir) + "/repo";
        program.directories.push_back({asset, *options.copy_repo});
        add(Keyword::copy, asset + " " + resolve_path(r.cwd, operands[1]));
        continue;
      }
    }

    std::string line = r.classification == CommandKind::install
                           ? pin_line(r, program.pin_ledger)
                           : r.command.raw();
    const auto& parsed = r.command.parsed();
    if (runs_apt_install(parsed) && !apt_updated && !runs_apt_update(parsed)) {
      line = "apt-get update && " + line;
    }
    if (runs_apt_install(parsed) || runs_apt_update(parsed)) apt_updated = true;
    add(Keyword::run, with_cwd(r.cwd, line));
  }
  return program;
}

std::string render(const std::vector<DockerfileStatement>& statements) {
  std::string out;
  for (const auto& s : statements) out += s.line() + "\n";
  return out;
}

std::string render(const DockerfileProgram& program) { return render(program.statements); }

std::vector<DockerfileStatement> parse_dockerfile(std::string_view text) {
  std::vector<DockerfileStatement> statements;
  std::size_t start = 0;
  int line_no = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (line.empty() || line.starts_with("#")) continue;
    auto space = line.find(' ');
    auto word = line.substr(0, space);
    std::string payload = space == std::string_view::npos ? "" : std::string(line.substr(space + 1));
    Keyword k;
    if (word == "FROM") {
      k = Keyword::from;
    } else if (word == "ENV") {
      k = Keyword::env;
    } else if (word == "COPY") {
      k = Keyword::copy;
    } else if (word == "RUN") {
      k = Keyword::run;
    } else {
      throw Error(ErrorCode::parse_error, fmt::format("line {}: unsupported instruction {}", line_no,
                                                      std::string(word)));
    }
    if (payload.empty()) throw Error(ErrorCode::parse_error, fmt::format("line {}: empty {}", line_no, std::string(word)));
    if (k == Keyword::from && !statements.empty()) {
      throw Error(ErrorCode::parse_error, fmt::format("line {}: FROM must come first and once", line_no));
    }
    if (k != Keyword::from && statements.empty()) {
      throw Error(ErrorCode::parse_error, fmt::format("line {}: missing FROM", line_no));
    }
    statements.push_back({k, std::move(payload), std::nullopt});
  }
  if (statements.empty()) throw Error(ErrorCode::parse_error, "empty Dockerfile");
  return statements;
}

void write_program(const DockerfileProgram& program, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  auto write = [](const fs::path& path, std::string_view content) {
    fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::file_missing, "cannot write " + path.string());
    out << content;
  };
  write(dir / "Dockerfile", render(program));
  for (const auto& f : program.files) write(dir / f.path, f.content);
  for (const auto& d : program.directories) {
    fs::remove_all(dir / d.path);
    fs::create_directories(dir / d.path);
    for (const auto& [rel, content] : local_repo_files(d.source)) write(dir / d.path / rel, content);
  }
}

}  // namespace envforge
