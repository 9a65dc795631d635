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

#include "envforge/shell.hpp"

#include <cctype>

#include "envforge/error.hpp"

namespace envforge::shell {

namespace {

bool is_name_start(char c) {
  return std::isalpha(static_cast<unsigned char>(c)) || c == '_';
}

bool is_name_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
}

bool is_inert(char c) {
  if (std::isalnum(static_cast<unsigned char>(c))) return true;
  switch (c) {
    case '_': case '@': case '%': case '+': case '=': case ':':
    case ',': case '.': case '/': case '-':
      return true;
    default:
      return false;
  }
}

class Parser {
 public:
  Parser(std::string_view line, const VariableLookup* lookup)
      : line_(line), lookup_(lookup) {}

  CommandList run() {
    while (pos_ < line_.size()) {
      char c = line_[pos_];
      if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
        finish_word();
        ++pos_;
      } else if (c == '#' && !word_started_) {
        break;
      } else if (c == '\'') {
        read_single_quoted();
      } else if (c == '"') {
        read_double_quoted();
      } else if (c == '\\') {
        if (pos_ + 1 >= line_.size()) fail("trailing backslash");
        append(line_[pos_ + 1], false);
        pos_ += 2;
      } else if (c == '$') {
        read_dollar(false);
      } else if (c == '`') {
        read_backtick();
      } else if (c == '|' || c == '&' || c == ';' || c == '>' || c == '<') {
        read_operator();
      } else {
        append(c, false);
        ++pos_;
      }
    }
    finish_word();
    if (pending_redirect_) fail("redirection without a target");
    bool trailing_operator = connector_ != Connector::first &&
                             connector_ != Connector::sequence;
    if (stage_empty()) {
      if (!pipeline_.stages.empty() || trailing_operator) fail("dangling operator");
    } else {
      end_stage();
    }
    end_pipeline();
    return std::move(result_);
  }

 private:
  [[noreturn]] void fail(const std::string& why) const {
    throw Error(ErrorCode::unparsable_line, why + " in: " + std::string(line_));
  }

  void append(char c, bool quoted) {
    if (!word_started_) {
      word_started_ = true;
      digits_only_ = true;
      assign_eligible_ = true;
    }
    if (quoted) {
      digits_only_ = false;
      if (!seen_equals_) assign_eligible_ = false;
    } else {
      if (!std::isdigit(static_cast<unsigned char>(c))) digits_only_ = false;
      if (c == '=') seen_equals_ = true;
    }
    word_ += c;
  }

  void append_text(std::string_view text, bool quoted) {
    if (text.empty()) {
      mark_started(quoted);
      return;
    }
    for (char c : text) append(c, quoted);
  }

  void mark_started(bool quoted) {
    if (!word_started_) {
      word_started_ = true;
      digits_only_ = !quoted;
      assign_eligible_ = !quoted;
    }
    if (quoted) {
      digits_only_ = false;
      if (!seen_equals_) assign_eligible_ = false;
    }
  }

  void read_single_quoted() {
    auto end = line_.find('\'', pos_ + 1);
    if (end == std::string_view::npos) fail("unbalanced single quote");
    append_text(line_.substr(pos_ + 1, end - pos_ - 1), true);
    pos_ = end + 1;
  }

  void read_double_quoted() {
    ++pos_;
    mark_started(true);
    while (true) {
      if (pos_ >= line_.size()) fail("unbalanced double quote");
      char c = line_[pos_];
      if (c == '"') {
        ++pos_;
        return;
      }
      if (c == '\\' && pos_ + 1 < line_.size()) {
        char next = line_[pos_ + 1];
        if (next == '"' || next == '\\' || next == '$' || next == '`') {
          append(next, true);
          pos_ += 2;
          continue;
        }
        append(c, true);
        ++pos_;
      } else if (c == '$') {
        read_dollar(true);
      } else if (c == '`') {
        read_backtick();
      } else {
        append(c, true);
        ++pos_;
      }
    }
  }

  void read_dollar(bool quoted) {
    if (pos_ + 1 < line_.size() && line_[pos_ + 1] == '(') {
      result_.has_substitution = true;
      int depth = 0;
      std::size_t i = pos_ + 1;
      for (; i < line_.size(); ++i) {
        if (line_[i] == '(') ++depth;
        if (line_[i] == ')' && --depth == 0) break;
      }
      if (i >= line_.size()) fail("unbalanced command substitution");
      append_text(line_.substr(pos_, i + 1 - pos_), quoted);
      pos_ = i + 1;
      return;
    }
    std::string_view name;
    std::size_t consumed = 0;
    if (pos_ + 1 < line_.size() && line_[pos_ + 1] == '{') {
      auto close = line_.find('}', pos_ + 2);
      if (close == std::string_view::npos) fail("unbalanced ${");
      name = line_.substr(pos_ + 2, close - pos_ - 2);
      consumed = close + 1 - pos_;
    } else {
      std::size_t i = pos_ + 1;
      if (i < line_.size() && is_name_start(line_[i])) {
        while (i < line_.size() && is_name_char(line_[i])) ++i;
      }
      name = line_.substr(pos_ + 1, i - pos_ - 1);
      consumed = i - pos_;
    }
    if (name.empty() || lookup_ == nullptr) {
      append_text(line_.substr(pos_, name.empty() ? 1 : consumed), quoted);
      pos_ += name.empty() ? 1 : consumed;
      return;
    }
    auto value = (*lookup_)(name);
    // an expansion always marks the word as started, even when empty
    append_text(value.value_or(""), true);
    pos_ += consumed;
  }

  void read_backtick() {
    result_.has_substitution = true;
    auto end = line_.find('`', pos_ + 1);
    if (end == std::string_view::npos) fail("unbalanced backtick");
    append_text(line_.substr(pos_, end + 1 - pos_), true);
    pos_ = end + 1;
  }

  bool peek(std::string_view op) const { return line_.substr(pos_, op.size()) == op; }

  void read_operator() {
    // "2>" style fd prefix: the digits typed directly before the operator
    if ((line_[pos_] == '>' || line_[pos_] == '<') && word_started_ && digits_only_ &&
        !pending_redirect_) {
      int fd = std::stoi(word_);
      clear_word();
      read_redirect(fd);
      return;
    }
    finish_word();
    if (peek("&&")) {
      end_pipeline_with(Connector::and_then);
      pos_ += 2;
    } else if (peek("||")) {
      end_pipeline_with(Connector::or_else);
      pos_ += 2;
    } else if (peek("&>")) {
      pos_ += 2;
      push_redirect({1, Redirect::Mode::truncate, {}});
      stage_.redirects.push_back({2, Redirect::Mode::duplicate, "1"});
    } else if (peek("|")) {
      if (pending_redirect_) fail("redirection without a target");
      if (stage_empty()) fail("empty pipeline stage");
      end_stage();
      pos_ += 1;
    } else if (peek(";") || peek("&")) {
      end_pipeline_with(Connector::sequence);
      pos_ += 1;
    } else {
      read_redirect(line_[pos_] == '<' ? 0 : 1);
    }
  }

  void read_redirect(int fd) {
    if (peek(">>")) {
      pos_ += 2;
      push_redirect({fd, Redirect::Mode::append, {}});
    } else if (peek(">&")) {
      pos_ += 2;
      push_redirect({fd, Redirect::Mode::duplicate, {}});
    } else if (peek(">")) {
      pos_ += 1;
      push_redirect({fd, Redirect::Mode::truncate, {}});
    } else if (peek("<<")) {
      pos_ += 2;
      push_redirect({fd, Redirect::Mode::heredoc, {}});
    } else {
      pos_ += 1;
      push_redirect({fd, Redirect::Mode::input, {}});
    }
  }

  void push_redirect(Redirect r) {
    if (pending_redirect_) fail("redirection without a target");
    stage_.redirects.push_back(std::move(r));
    pending_redirect_ = true;
  }

  void clear_word() {
    word_.clear();
    word_started_ = false;
    seen_equals_ = false;
  }

  void finish_word() {
    if (!word_started_) return;
    if (pending_redirect_) {
      stage_.redirects.back().target = word_;
      pending_redirect_ = false;
    } else if (stage_.argv.empty() && assign_eligible_ && is_assignment(word_)) {
      stage_.assignments.push_back(word_);
    } else {
      stage_.argv.push_back(word_);
    }
    clear_word();
  }

  static bool is_assignment(const std::string& word) {
    auto eq = word.find('=');
    return eq != std::string::npos && eq > 0 && is_identifier(std::string_view(word).substr(0, eq));
  }

  bool stage_empty() const {
    return stage_.argv.empty() && stage_.assignments.empty() && stage_.redirects.empty();
  }

  void end_stage() {
    pipeline_.stages.push_back(std::move(stage_));
    stage_ = {};
  }

  void end_pipeline_with(Connector next) {
    if (pending_redirect_) fail("redirection without a target");
    if (stage_empty()) fail("empty command before operator");
    end_stage();
    end_pipeline();
    connector_ = next;
  }

  void end_pipeline() {
    if (pipeline_.stages.empty()) return;
    result_.items.emplace_back(result_.items.empty() ? Connector::first : connector_,
                               std::move(pipeline_));
    pipeline_ = {};
  }

  std::string_view line_;
  const VariableLookup* lookup_;
  std::size_t pos_ = 0;

  std::string word_;
  bool word_started_ = false;
  bool digits_only_ = false;
  bool assign_eligible_ = false;
  bool seen_equals_ = false;
  bool pending_redirect_ = false;

  SimpleCommand stage_;
  Pipeline pipeline_;
  Connector connector_ = Connector::first;
  CommandList result_;
};

std::string render_redirect(const Redirect& r) {
  std::string out;
  bool default_fd = (r.mode == Redirect::Mode::input || r.mode == Redirect::Mode::heredoc)
                        ? r.fd == 0
                        : r.fd == 1;
  if (!default_fd) out += std::to_string(r.fd);
  switch (r.mode) {
    case Redirect::Mode::truncate: out += ">"; break;
    case Redirect::Mode::append: out += ">>"; break;
    case Redirect::Mode::input: out += "<"; break;
    case Redirect::Mode::duplicate: out += ">&"; return out + r.target;
    case Redirect::Mode::heredoc: out += "<<"; break;
  }
  out += ' ';
  out += quote(r.target);
  return out;
}

}  // namespace

bool is_identifier(std::string_view name) {
  if (name.empty() || !is_name_start(name.front())) return false;
  for (char c : name) {
    if (!is_name_char(c)) return false;
  }
  return true;
}

bool CommandList::redirects_output() const {
  bool found = false;
  for_each_stage([&](const SimpleCommand& stage) {
    for (const auto& r : stage.redirects) {
      if (r.writes_output()) found = true;
    }
  });
  return found;
}

std::size_t CommandList::stage_count() const {
  std::size_t n = 0;
  for (const auto& item : items) n += item.second.stages.size();
  return n;
}

CommandList parse(std::string_view line, const VariableLookup* lookup) {
  return Parser(line, lookup).run();
}

std::string quote(std::string_view word) {
  if (word.empty()) return "''";
  bool inert = true;
  for (char c : word) {
    if (!is_inert(c)) {
      inert = false;
      break;
    }
  }
  if (inert) return std::string(word);
  std::string out = "'";
  for (char c : word) {
    if (c == '\'') {
      out += "'\\''";
    } else {
      out += c;
    }
  }
  out += '\'';
  return out;
}

namespace {

using WordQuoter = std::string (*)(std::string_view);

std::string quote_keeping_variables(std::string_view word) {
  if (word.find('$') == std::string_view::npos) return quote(word);
  std::string out = "\"";
  for (char c : word) {
    if (c == '"' || c == '\\' || c == '`') out += '\\';
    out += c;
  }
  out += '"';
  return out;
}

std::string render_stage(const SimpleCommand& command, WordQuoter quoter) {
  std::string out;
  auto add = [&out](const std::string& piece) {
    if (!out.empty()) out += ' ';
    out += piece;
  };
  for (const auto& assignment : command.assignments) {
    auto eq = assignment.find('=');
    add(assignment.substr(0, eq + 1) + quoter(std::string_view(assignment).substr(eq + 1)));
  }
  for (const auto& arg : command.argv) add(quoter(arg));
  for (const auto& r : command.redirects) add(render_redirect(r));
  return out;
}

std::string render_list(const CommandList& list, WordQuoter quoter) {
  std::string out;
  for (const auto& [connector, pipeline] : list.items) {
    switch (connector) {
      case Connector::first: break;
      case Connector::and_then: out += " && "; break;
      case Connector::or_else: out += " || "; break;
      case Connector::sequence: out += "; "; break;
    }
    for (std::size_t i = 0; i < pipeline.stages.size(); ++i) {
      if (i > 0) out += " | ";
      out += render_stage(pipeline.stages[i], quoter);
    }
  }
  return out;
}

}  // namespace

std::string render(const SimpleCommand& command) { return render_stage(command, quote); }

std::string render(const CommandList& list) { return render_list(list, quote); }

std::string render_keeping_variables(const CommandList& list) {
  return render_list(list, quote_keeping_variables);
}

}  // namespace envforge::shell
