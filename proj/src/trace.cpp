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

#include "envforge/trace.hpp"

#include <fstream>
#include <regex>

#include <fmt/format.h>

#include "envforge/error.hpp"
#include "json.hpp"

namespace envforge {

namespace {

using ojson = nlohmann::ordered_json;

std::string dump(const ojson& j) {
  return j.dump(-1, ' ', false, ojson::error_handler_t::replace);
}

[[noreturn]] void violation(const std::string& what) {
  throw Error(ErrorCode::invariant_violation, what);
}

ojson header_json(const RepoRef& repo, const BaseImage& initial) {
  ojson j;
  j["schema_version"] = kTraceSchemaVersion;
  j["repo_full_name"] = repo.full_name;
  j["sha"] = repo.sha;
  j["initial_base_image"] = initial.name;
  return j;
}

ojson record_json(const CommandRecord& r) {
  ojson j;
  j["turn"] = r.turn;
  j["raw"] = r.command.raw();
  j["cwd"] = r.cwd;
  j["return_code"] = r.return_code;
  j["classification"] = to_string(r.classification);
  j["stdout_excerpt"] = r.stdout_excerpt;
  j["stderr_excerpt"] = r.stderr_excerpt;
  j["snapshot_before"] = r.snapshot_before ? ojson(r.snapshot_before->id) : ojson(nullptr);
  j["rolled_back"] = r.rolled_back;
  ojson env = ojson::array();
  for (const auto& [k, v] : r.env_delta) env.push_back({k, v});
  j["env_delta"] = std::move(env);
  ojson installed = ojson::array();
  for (const auto& p : r.installed) installed.push_back({p.tool, p.package, p.version});
  j["installed"] = std::move(installed);
  if (r.thought) j["thought"] = *r.thought;
  if (r.patch) j["patch"] = *r.patch;
  return j;
}

ojson footer_json(const BaseImage& final_image, Outcome outcome) {
  ojson j;
  j["final_base_image"] = final_image.name;
  j["outcome"] = to_string(outcome);
  return j;
}

class LineReader {
 public:
  LineReader(const ojson& j, std::size_t line_no) : j_(j), line_no_(line_no) {}

  [[noreturn]] void bad(const std::string& why) const {
    throw Error(ErrorCode::malformed_line, fmt::format("line {}: {}", line_no_, why));
  }

  const ojson& at(const char* key) const {
    auto it = j_.find(key);
    if (it == j_.end()) bad(fmt::format("missing key \"{}\"", key));
    return *it;
  }

  std::string str(const char* key) const {
    const auto& v = at(key);
    if (!v.is_string()) bad(fmt::format("\"{}\" must be a string", key));
    return v.get<std::string>();
  }

  int integer(const char* key) const {
    const auto& v = at(key);
    if (!v.is_number_integer()) bad(fmt::format("\"{}\" must be an integer", key));
    return v.get<int>();
  }

  bool boolean(const char* key) const {
    const auto& v = at(key);
    if (!v.is_boolean()) bad(fmt::format("\"{}\" must be a boolean", key));
    return v.get<bool>();
  }

  std::optional<std::string> optional_str(const char* key) const {
    auto it = j_.find(key);
    if (it == j_.end() || it->is_null()) return std::nullopt;
    if (!it->is_string()) bad(fmt::format("\"{}\" must be a string or null", key));
    return it->get<std::string>();
  }

  std::vector<std::vector<std::string>> tuples(const char* key, std::size_t arity) const {
    const auto& v = at(key);
    if (!v.is_array()) bad(fmt::format("\"{}\" must be an array", key));
    std::vector<std::vector<std::string>> out;
    for (const auto& item : v) {
      if (!item.is_array() || item.size() != arity) {
        bad(fmt::format("\"{}\" entries must be {}-element arrays", key, arity));
      }
      std::vector<std::string> row;
      for (const auto& field : item) {
        if (!field.is_string()) bad(fmt::format("\"{}\" entries must hold strings", key));
        row.push_back(field.get<std::string>());
      }
      out.push_back(std::move(row));
    }
    return out;
  }

 private:
  const ojson& j_;
  std::size_t line_no_;
};

CommandRecord parse_record(const ojson& j, std::size_t line_no) {
  LineReader in(j, line_no);
  std::optional<Command> command;
  try {
    command.emplace(in.str("raw"));
  } catch (const Error& e) {
    in.bad(e.detail());
  }
  CommandRecord r(std::move(*command));
  r.turn = in.integer("turn");
  r.cwd = in.str("cwd");
  r.return_code = in.integer("return_code");
  auto kind = command_kind_from_string(in.str("classification"));
  if (!kind) in.bad("unknown classification");
  r.classification = *kind;
  r.stdout_excerpt = in.str("stdout_excerpt");
  r.stderr_excerpt = in.str("stderr_excerpt");
  if (auto snap = in.optional_str("snapshot_before")) r.snapshot_before = SnapshotId{*snap};
  r.rolled_back = in.boolean("rolled_back");
  for (auto& row : in.tuples("env_delta", 2)) r.env_delta.emplace_back(row[0], row[1]);
  for (auto& row : in.tuples("installed", 3)) r.installed.push_back({row[0], row[1], row[2]});
  r.thought = in.optional_str("thought");
  r.patch = in.optional_str("patch");
  return r;
}

std::optional<Outcome> outcome_from_string(std::string_view text) {
  for (auto o : {Outcome::verified, Outcome::budget_exhausted, Outcome::aborted}) {
    if (to_string(o) == text) return o;
  }
  return std::nullopt;
}

}  // namespace

BaseImage::BaseImage(std::string image_name) : name(std::move(image_name)) {
  static const std::regex python_tag(R"(^(?:.*/)?python:(\d+\.\d+)(?:[.\-].*)?$)");
  std::smatch m;
  if (std::regex_match(name, m, python_tag)) python_version = m[1].str();
}

Command::Command(std::string raw) : raw_(std::move(raw)) {
  auto first = raw_.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) throw Error(ErrorCode::unparsable_line, "empty command");
  parsed_ = shell::parse(raw_);
  if (parsed_.items.empty()) throw Error(ErrorCode::unparsable_line, "no command in: " + raw_);
  argv0_ = std::string(parsed_.first_stage().program());
  redirects_output_ = parsed_.redirects_output();
}

std::string_view to_string(CommandKind kind) {
  switch (kind) {
    case CommandKind::safe: return "safe";
    case CommandKind::mutating: return "mutating";
    case CommandKind::base_image_change: return "base-image-change";
    case CommandKind::code_edit: return "code-edit";
    case CommandKind::export_env: return "export";
    case CommandKind::install: return "install";
  }
  return "mutating";
}

std::optional<CommandKind> command_kind_from_string(std::string_view text) {
  for (auto k : {CommandKind::safe, CommandKind::mutating, CommandKind::base_image_change,
                 CommandKind::code_edit, CommandKind::export_env, CommandKind::install}) {
    if (to_string(k) == text) return k;
  }
  return std::nullopt;
}

std::string_view to_string(Outcome outcome) {
  switch (outcome) {
    case Outcome::verified: return "verified";
    case Outcome::budget_exhausted: return "budget_exhausted";
    case Outcome::aborted: return "aborted";
  }
  return "aborted";
}

bool is_test_runner(std::string_view argv0) {
  return argv0 == "runtest" || argv0 == "poetryruntest";
}

std::optional<BaseImage> target_image(const Command& command) {
  const auto& argv = command.parsed().first_stage().argv;
  if (command.argv0() == "clear_configuration") return BaseImage(std::string(kDefaultBaseImage));
  if (command.argv0() == "change_python_version" && argv.size() == 2) {
    return BaseImage::python(argv[1]);
  }
  return std::nullopt;
}

std::optional<std::size_t> Trace::last_base_image_change() const {
  for (std::size_t i = records.size(); i-- > 0;) {
    if (records[i].classification == CommandKind::base_image_change) return i;
  }
  return std::nullopt;
}

bool Trace::superseded(std::size_t index) const {
  auto last = last_base_image_change();
  return last && index < *last;
}

void Trace::validate() const {
  if (initial_base_image.name.empty() || final_base_image.name.empty()) {
    violation("base image name is empty");
  }
  int previous_turn = 0;
  for (const auto& r : records) {
    if (r.turn < 1) violation(fmt::format("turn {} is not positive", r.turn));
    if (r.turn <= previous_turn) {
      violation(fmt::format("turn {} does not follow turn {}", r.turn, previous_turn));
    }
    previous_turn = r.turn;
    if (r.cwd.empty() || r.cwd.front() != '/') {
      violation(fmt::format("turn {}: cwd \"{}\" is not absolute", r.turn, r.cwd));
    }
    if (r.return_code < 0 || r.return_code > 255) {
      violation(fmt::format("turn {}: return code {} out of range", r.turn, r.return_code));
    }
    if (r.rolled_back && r.return_code == 0) {
      violation(fmt::format("turn {}: rolled back with return code 0", r.turn));
    }
    if (r.rolled_back && !r.snapshot_before) {
      violation(fmt::format("turn {}: rolled back without a snapshot", r.turn));
    }
    if (r.classification == CommandKind::safe && r.snapshot_before) {
      violation(fmt::format("turn {}: safe command carries a snapshot", r.turn));
    }
    if (r.env_delta.empty() == (r.classification == CommandKind::export_env)) {
      violation(fmt::format("turn {}: env_delta must be present exactly for exports", r.turn));
    }
  }
  if (auto change = last_base_image_change()) {
    auto image = target_image(records[*change].command);
    if (image && !(*image == final_base_image)) {
      violation(fmt::format("final base image {} does not match last change to {}",
                            final_base_image.name, image->name));
    }
  } else if (!(final_base_image == initial_base_image)) {
    violation("final base image differs without a base image change");
  }
  if (outcome == Outcome::verified) {
    const CommandRecord* last_test = nullptr;
    for (const auto& r : records) {
      if (is_test_runner(r.command.argv0())) last_test = &r;
    }
    if (last_test == nullptr) violation("verified trace without a test run");
    if (last_test->return_code != 0 || last_test->rolled_back) {
      violation("verified trace whose last test run did not succeed");
    }
  }
}

std::string serialize_trace(const Trace& trace) {
  trace.validate();
  std::string out = dump(header_json(trace.repo, trace.initial_base_image));
  out += '\n';
  for (const auto& r : trace.records) {
    out += dump(record_json(r));
    out += '\n';
  }
  out += dump(footer_json(trace.final_base_image, trace.outcome));
  out += '\n';
  return out;
}

Trace parse_trace(std::string_view bytes) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start < bytes.size()) {
    auto end = bytes.find('\n', start);
    if (end == std::string_view::npos) end = bytes.size();
    lines.push_back(bytes.substr(start, end - start));
    start = end + 1;
  }
  if (lines.empty()) throw Error(ErrorCode::malformed_line, "line 1: empty trace");

  std::vector<ojson> parsed;
  parsed.reserve(lines.size());
  for (std::size_t i = 0; i < lines.size(); ++i) {
    auto j = ojson::parse(lines[i], nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
      throw Error(ErrorCode::malformed_line, fmt::format("line {}: not a JSON object", i + 1));
    }
    parsed.push_back(std::move(j));
  }

  Trace trace;
  {
    LineReader in(parsed.front(), 1);
    auto version = in.str("schema_version");
    if (version != kTraceSchemaVersion) throw Error(ErrorCode::version_mismatch, version);
    trace.repo = {in.str("repo_full_name"), in.str("sha")};
    trace.initial_base_image = BaseImage(in.str("initial_base_image"));
  }
  if (parsed.size() < 2 || !parsed.back().contains("outcome")) {
    throw Error(ErrorCode::malformed_line,
                fmt::format("line {}: missing footer", parsed.size() + 1));
  }
  for (std::size_t i = 1; i + 1 < parsed.size(); ++i) {
    trace.records.push_back(parse_record(parsed[i], i + 1));
  }
  {
    LineReader in(parsed.back(), parsed.size());
    trace.final_base_image = BaseImage(in.str("final_base_image"));
    auto outcome = outcome_from_string(in.str("outcome"));
    if (!outcome) in.bad("unknown outcome");
    trace.outcome = *outcome;
  }
  trace.validate();
  return trace;
}

TraceWriter::TraceWriter(std::string path, const RepoRef& repo, const BaseImage& initial)
    : path_(std::move(path)) {
  std::ofstream(path_, std::ios::trunc);
  write_line(dump(header_json(repo, initial)));
}

void TraceWriter::append(const CommandRecord& record) { write_line(dump(record_json(record))); }

void TraceWriter::finish(const BaseImage& final_image, Outcome outcome) {
  write_line(dump(footer_json(final_image, outcome)));
}

void TraceWriter::write_line(const std::string& line) {
  std::ofstream out(path_, std::ios::app | std::ios::binary);
  out << line << '\n';
  if (!out) throw Error(ErrorCode::backend_io, "cannot write trace file " + path_);
}

}  // namespace envforge
