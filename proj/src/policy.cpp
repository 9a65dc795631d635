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

#include "envforge/policy.hpp"

#include <cstdlib>
#include <fstream>
#include <regex>
#include <sstream>

#include <fmt/format.h>
#include <httplib.h>

#include "envforge/error.hpp"
#include "json.hpp"

namespace envforge {

namespace {

using json = nlohmann::json;

std::string trim(std::string_view text) {
  auto first = text.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  auto last = text.find_last_not_of(" \t\r\n");
  return std::string(text.substr(first, last - first + 1));
}

std::string env_or(const char* name, std::string fallback) {
  const char* value = std::getenv(name);
  return value && *value ? value : fallback;
}

}  // namespace

ScriptedPolicy ScriptedPolicy::parse(std::string_view json_text) {
  auto j = json::parse(json_text, nullptr, false);
  if (j.is_discarded() || !j.is_array()) {
    throw Error(ErrorCode::parse_error, "scripted actions must be a JSON array");
  }
  std::vector<Action> actions;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const auto& item = j[i];
    try {
      if (item.is_string()) {
        actions.push_back(Action::parse(item.get<std::string>()));
      } else if (item.is_object() && item.contains("action")) {
        auto action = Action::parse(item.at("action").get<std::string>());
        if (item.contains("thought")) action.thought = item.at("thought").get<std::string>();
        actions.push_back(std::move(action));
      } else {
        throw Error(ErrorCode::parse_error, "expected a string or {\"action\": ...}");
      }
    } catch (const Error& e) {
      throw Error(ErrorCode::parse_error, fmt::format("action {}: {}", i + 1, e.detail()));
    }
  }
  return ScriptedPolicy(std::move(actions));
}

ScriptedPolicy ScriptedPolicy::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::file_missing, path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse(buffer.str());
}

std::optional<Action> ScriptedPolicy::next_action(const std::vector<Turn>&, const PolicyContext&) {
  if (next_ >= actions_.size()) return std::nullopt;
  return actions_[next_++];
}

LlmConfig LlmConfig::from_env() {
  LlmConfig config;
  config.url = env_or("ENVFORGE_LLM_URL", "https://api.openai.com/v1");
  config.model = env_or("ENVFORGE_LLM_MODEL", "gpt-4o-2024-05-13");
  config.api_key = env_or("ENVFORGE_LLM_KEY", "");
  return config;
}

ChatTransport http_chat_transport(const LlmConfig& config) {
  static const std::regex url_pattern(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(config.url, m, url_pattern)) {
    throw Error(ErrorCode::http_error, "bad endpoint URL " + config.url);
  }
  std::string origin = m[1];
  std::string path = m[2].matched ? m[2].str() : "";
  while (path.ends_with("/")) path.pop_back();
  path += "/chat/completions";
  return [origin, path, config](const std::vector<ChatMessage>& messages) -> std::string {
    json body = {{"model", config.model}, {"temperature", config.temperature}};
    body["messages"] = json::array();
    for (const auto& m : messages) {
      body["messages"].push_back({{"role", m.role}, {"content", m.content}});
    }
    httplib::Client client(origin);
    client.set_read_timeout(config.timeout);
    client.set_connection_timeout(std::chrono::seconds(30));
    httplib::Headers headers;
    if (!config.api_key.empty()) headers.emplace("Authorization", "Bearer " + config.api_key);
    auto response = client.Post(path, headers, body.dump(), "application/json");
    if (!response) {
      throw Error(ErrorCode::http_error, origin + path + ": " + httplib::to_string(response.error()));
    }
    if (response->status != 200) {
      throw Error(ErrorCode::http_error,
                  fmt::format("status {}: {}", response->status, response->body.substr(0, 500)));
    }
    auto reply = json::parse(response->body, nullptr, false);
    try {
      return reply.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const json::exception&) {
      throw Error(ErrorCode::http_error, "unexpected response: " + response->body.substr(0, 500));
    }
  };
}

ParsedReply parse_reply(std::string_view reply) {
  std::vector<std::pair<std::size_t, std::size_t>> blocks;  // body begin, body end
  std::size_t first_fence = std::string_view::npos;
  std::size_t pos = 0;
  while (true) {
    auto open = reply.find("```", pos);
    if (open == std::string_view::npos) break;
    auto line_end = reply.find('\n', open);
    if (line_end == std::string_view::npos) break;
    auto close = reply.find("```", line_end + 1);
    if (close == std::string_view::npos) {
      return {std::nullopt, "your reply has an unterminated ``` block"};
    }
    if (first_fence == std::string_view::npos) first_fence = open;
    blocks.emplace_back(line_end + 1, close);
    pos = close + 3;
  }
  if (blocks.empty()) {
    return {std::nullopt,
            "your reply contained no command. Put exactly one command in a ``` fenced block"};
  }
  if (blocks.size() > 1) {
    return {std::nullopt,
            "your reply contained several commands. Only include a SINGLE command in one ``` "
            "fenced block per reply"};
  }
  auto body = reply.substr(blocks[0].first, blocks[0].second - blocks[0].first);
  try {
    auto action = Action::parse(body);
    auto thought = trim(reply.substr(0, first_fence));
    if (!thought.empty()) action.thought = thought;
    return {std::move(action), {}};
  } catch (const Error& e) {
    return {std::nullopt, "your command could not be used: " + e.detail()};
  }
}

std::string system_prompt() {
  return R"(You set up a Python repository inside a Docker container so that its unit tests run with pytest.
Each reply holds a short reasoning paragraph followed by exactly one command in a ``` fenced block.
Every non-read-only command runs against a snapshot: if it exits non-zero, the container is restored to its state before the command.

Tools besides ordinary bash lines:
  waitinglist add -p NAME [-v CONSTRAINTS] -t pip|apt   queue a package (no constraint means latest)
  waitinglist addfile PATH                              queue every line of a requirements-style file
  waitinglist clear | waitinglist show
  conflictlist solve -v "CONSTRAINTS"                   settle the first conflict with new constraints
  conflictlist solve -u                                 settle the first conflict keeping the queued constraint
  conflictlist clear | conflictlist show
  download                                              install everything queued (conflict list must be empty)
  runtest                                               run the test suite; finishes the task once tests run
  poetryruntest                                         the same inside the poetry environment
  runpipreqs                                            write requirements_pipreqs.txt from the imports
  change_python_version X.Y                             restart from python:X.Y (all earlier work is dropped)
  clear_configuration                                   restart from python:3.10
  edit_file PATH                                        followed by <<<<<<< SEARCH / ======= / >>>>>>> REPLACE blocks

Rules: never modify or delete test files (names starting with test_ or ending with _test.py).
Interactive programs are unavailable; pass -y where needed.
Start by looking at the repository, e.g. ls and cat of setup.py, pyproject.toml or requirements.txt.
Tests passing is not required; the task is done when pytest can run them.)";
}

std::vector<ChatMessage> render_conversation(const std::vector<Turn>& history,
                                             const PolicyContext& context) {
  std::vector<ChatMessage> messages;
  messages.push_back({"system", system_prompt()});
  messages.push_back(
      {"user", fmt::format("Repository {} (commit {}) is checked out at {} in a {} container. "
                           "Configure the environment so that pytest runs its tests.",
                           context.repo.full_name, context.repo.sha.empty() ? "HEAD" : context.repo.sha,
                           context.repo_dir, context.base_image.name)});
  for (const auto& turn : history) {
    std::string reply;
    if (turn.action.thought) reply = *turn.action.thought + "\n";
    reply += "```\n" + turn.action.to_text() + "\n```";
    messages.push_back({"assistant", std::move(reply)});
    messages.push_back({"user", "Observation:\n" + turn.observation.text});
  }
  return messages;
}

std::optional<Action> LlmPolicy::next_action(const std::vector<Turn>& history,
                                             const PolicyContext& context) {
  auto messages = render_conversation(history, context);
  std::string last_feedback;
  for (int attempt = 0; attempt <= max_parse_retries_; ++attempt) {
    auto reply = transport_(messages);
    auto parsed = parse_reply(reply);
    if (parsed.action) return parsed.action;
    last_feedback = parsed.feedback;
    messages.push_back({"assistant", reply});
    messages.push_back({"user", "Format error: " + parsed.feedback});
  }
  throw Error(ErrorCode::parse_failure_exhausted, last_feedback);
}

}  // namespace envforge
