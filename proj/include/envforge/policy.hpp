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

#include <chrono>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "envforge/agent.hpp"

namespace envforge {

// Replays a fixed action list, then reports exhaustion.
class ScriptedPolicy final : public Policy {
 public:
  explicit ScriptedPolicy(std::vector<Action> actions) : actions_(std::move(actions)) {}

  // A JSON array of action texts or {"action": "...", "thought": "..."}.
  static ScriptedPolicy parse(std::string_view json_text);
  static ScriptedPolicy load(const std::filesystem::path& path);

  std::optional<Action> next_action(const std::vector<Turn>& history,
                                    const PolicyContext& context) override;

 private:
  std::vector<Action> actions_;
  std::size_t next_ = 0;
};

struct ChatMessage {
  std::string role;  // "system", "user" or "assistant"
  std::string content;
  friend bool operator==(const ChatMessage&, const ChatMessage&) = default;
};

struct LlmConfig {
  std::string url;  // OpenAI-compatible base, e.g. http://localhost:8000/v1
  std::string model;
  std::string api_key;
  double temperature = 0.2;
  int max_parse_retries = 3;
  std::chrono::seconds timeout{300};

  // ENVFORGE_LLM_URL, ENVFORGE_LLM_MODEL, ENVFORGE_LLM_KEY.
  static LlmConfig from_env();
};

// Sends a conversation and returns the assistant's reply text.
// Throws Error(http_error).
using ChatTransport = std::function<std::string(const std::vector<ChatMessage>&)>;

// POSTs to <url>/chat/completions.
ChatTransport http_chat_transport(const LlmConfig& config);

struct ParsedReply {
  std::optional<Action> action;
  std::string feedback;  // set when action is empty
};

// Extracts the single fenced block of a reply; prose before it becomes the
// thought.
ParsedReply parse_reply(std::string_view reply);

std::string system_prompt();

// Conversation for the next turn: system prompt, task, then one
// assistant/user pair per past turn.
std::vector<ChatMessage> render_conversation(const std::vector<Turn>& history,
                                             const PolicyContext& context);

class LlmPolicy final : public Policy {
 public:
  explicit LlmPolicy(ChatTransport transport, int max_parse_retries = 3)
      : transport_(std::move(transport)), max_parse_retries_(max_parse_retries) {}
  explicit LlmPolicy(const LlmConfig& config)
      : LlmPolicy(http_chat_transport(config), config.max_parse_retries) {}

  std::optional<Action> next_action(const std::vector<Turn>& history,
                                    const PolicyContext& context) override;

 private:
  ChatTransport transport_;
  int max_parse_retries_;
};

}  // namespace envforge
