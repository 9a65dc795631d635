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

#include <gtest/gtest.h>

#include <mutex>
#include <thread>

#include "envforge/error.hpp"
#include "envforge/policy.hpp"
#include "envforge/sim_sandbox.hpp"
#include "httplib.h"
#include "json.hpp"
#include "support/support.hpp"

namespace envforge {
namespace {

using json = nlohmann::json;

TEST(ScriptedPolicy, ParsesStringsAndObjects) {
  auto p = ScriptedPolicy::parse(R"(["ls", {"action": "runtest", "thought": "check"}])");
  PolicyContext ctx;
  auto a = p.next_action({}, ctx);
  ASSERT_TRUE(a.has_value());
  EXPECT_EQ(a->command, "ls");
  auto b = p.next_action({}, ctx);
  EXPECT_EQ(b->verb, Verb::runtest);
  EXPECT_EQ(b->thought, "check");
  EXPECT_FALSE(p.next_action({}, ctx).has_value());
  EXPECT_THROW(ScriptedPolicy::parse("{}"), Error);
  EXPECT_THROW(ScriptedPolicy::parse(R"(["ls\nrm x"])"), Error);
}

TEST(ParseReply, SingleBlockWithThought) {
  auto r = parse_reply("I need pytest first.\n```\npip install pytest\n```\n");
  ASSERT_TRUE(r.action.has_value()) << r.feedback;
  EXPECT_EQ(r.action->command, "pip install pytest");
  EXPECT_EQ(r.action->thought, "I need pytest first.");
}

TEST(ParseReply, TwoCommandsAskForOne) {
  auto r = parse_reply("```\nls\n```\nthen\n```\npwd\n```");
  EXPECT_FALSE(r.action.has_value());
  EXPECT_NE(r.feedback.find("SINGLE command"), std::string::npos);
  auto lines = parse_reply("```\nls\npwd\n```");
  EXPECT_FALSE(lines.action.has_value());
  EXPECT_NE(lines.feedback.find("SINGLE command"), std::string::npos);
  EXPECT_FALSE(parse_reply("no block at all").action.has_value());
}

TEST(ParseReply, EditBlockKeepsPatch) {
  auto r = parse_reply(
      "Fix the quotes.\n```\nedit_file /repo/src/app.py\n<<<<<<< SEARCH\na\n=======\nb\n>>>>>>> REPLACE\n```");
  ASSERT_TRUE(r.action.has_value()) << r.feedback;
  EXPECT_EQ(r.action->verb, Verb::edit_file);
  EXPECT_EQ(r.action->patch, "<<<<<<< SEARCH\na\n=======\nb\n>>>>>>> REPLACE\n");
}

TEST(Conversation, AlternatesTurns) {
  PolicyContext ctx{{"acme/app", "abc"}, "/repo", BaseImage("python:3.10"), 3};
  std::vector<Turn> history{{Action::parse("ls"), {"a\nreturn code: 0", 0, false}},
                            {Action::parse("runtest"), {"collect error", 2, false}}};
  auto messages = render_conversation(history, ctx);
  ASSERT_EQ(messages.size(), 6u);
  EXPECT_EQ(messages[0].role, "system");
  EXPECT_EQ(messages[0].content, system_prompt());
  EXPECT_EQ(messages[1].role, "user");
  EXPECT_NE(messages[1].content.find("acme/app"), std::string::npos);
  EXPECT_EQ(messages[2].role, "assistant");
  EXPECT_NE(messages[2].content.find("```\nls\n```"), std::string::npos);
  EXPECT_EQ(messages[3].role, "user");
  EXPECT_NE(messages[5].content.find("collect error"), std::string::npos);
}

TEST(LlmPolicy, RetriesMalformedRepliesThenGivesUp) {
  std::vector<std::vector<ChatMessage>> seen;
  std::vector<std::string> replies{"no block", "```\nls\n```\n```\npwd\n```", "```\nls -la\n```"};
  std::size_t next = 0;
  LlmPolicy policy([&](const std::vector<ChatMessage>& m) {
    seen.push_back(m);
    return replies[next++];
  });
  PolicyContext ctx{{"acme/app", "abc"}, "/repo", BaseImage("python:3.10"), 1};
  auto a = policy.next_action({}, ctx);
  ASSERT_TRUE(a.has_value());
  EXPECT_EQ(a->command, "ls -la");
  ASSERT_EQ(seen.size(), 3u);
  EXPECT_NE(seen[2].back().content.find("SINGLE command"), std::string::npos);

  LlmPolicy stubborn([](const std::vector<ChatMessage>&) { return std::string("nothing"); }, 3);
  try {
    stubborn.next_action({}, ctx);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::parse_failure_exhausted);
  }
}

TEST(LlmConfig, Defaults) {
  ::unsetenv("ENVFORGE_LLM_URL");
  ::unsetenv("ENVFORGE_LLM_MODEL");
  auto c = LlmConfig::from_env();
  EXPECT_EQ(c.model, "gpt-4o-2024-05-13");
  EXPECT_DOUBLE_EQ(c.temperature, 0.2);
  EXPECT_EQ(c.max_parse_retries, 3);
}

// Canned OpenAI-compatible endpoint on a loopback port.
class CannedServer {
 public:
  CannedServer(std::vector<std::string> replies, int status = 200) : replies_(std::move(replies)) {
    server_.Post("/v1/chat/completions", [this, status](const httplib::Request& req, httplib::Response& res) {
      std::lock_guard lock(mutex_);
      requests_.push_back(json::parse(req.body));
      auth_.push_back(req.get_header_value("Authorization"));
      if (status != 200) {
        res.status = status;
        res.set_content(R"({"error": {"message": "invalid api key"}})", "application/json");
        return;
      }
      auto content = next_ < replies_.size() ? replies_[next_++] : std::string("```\nls\n```");
      json body = {{"choices", {{{"message", {{"role", "assistant"}, {"content", content}}}}}}};
      res.set_content(body.dump(), "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~CannedServer() {
    server_.stop();
    thread_.join();
  }
  LlmConfig config() const {
    LlmConfig c;
    c.url = "http://127.0.0.1:" + std::to_string(port_) + "/v1";
    c.model = "canned-model";
    c.api_key = "sk-test";
    c.timeout = std::chrono::seconds(10);
    return c;
  }
  std::vector<json> requests() {
    std::lock_guard lock(mutex_);
    return requests_;
  }
  std::vector<std::string> auth() {
    std::lock_guard lock(mutex_);
    return auth_;
  }

 private:
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
  std::mutex mutex_;
  std::vector<std::string> replies_;
  std::size_t next_ = 0;
  std::vector<json> requests_;
  std::vector<std::string> auth_;
};

std::shared_ptr<sim::Scenario> scenario() {
  return std::make_shared<sim::Scenario>(sim::Scenario::parse(R"({
    "registry": {"pytest": {"version": "8.2.0"}},
    "repos": {"acme/app": {"test_a.py": "def test_a():\n    pass\n"}}
  })"));
}

TEST(HttpTransport, ReplaysCannedTranscript) {
  std::vector<std::string> transcript{"Install the runner.\n```\npip install pytest\n```",
                                      "Now run the tests.\n```\nruntest\n```"};
  CannedServer server(transcript);
  LlmPolicy policy(server.config());
  sim::SimFactory factory(scenario());
  auto result = run_build_session({{"acme/app", "abc"}, std::nullopt}, policy, factory);
  EXPECT_EQ(result.trace.outcome, Outcome::verified);
  ASSERT_EQ(result.history.size(), 2u);
  for (std::size_t i = 0; i < transcript.size(); ++i) {
    EXPECT_EQ(result.history[i].action, *parse_reply(transcript[i]).action);
  }
  auto requests = server.requests();
  ASSERT_EQ(requests.size(), 2u);
  EXPECT_EQ(requests[0]["model"], "canned-model");
  EXPECT_DOUBLE_EQ(requests[0]["temperature"].get<double>(), 0.2);
  EXPECT_EQ(requests[1]["messages"].size(), 4u);
  EXPECT_EQ(server.auth()[0], "Bearer sk-test");

  CannedServer again(transcript);
  LlmPolicy second(again.config());
  sim::SimFactory factory2(scenario());
  auto replay = run_build_session({{"acme/app", "abc"}, std::nullopt}, second, factory2);
  ASSERT_EQ(replay.history.size(), result.history.size());
  for (std::size_t i = 0; i < replay.history.size(); ++i) {
    EXPECT_EQ(replay.history[i].action, result.history[i].action);
  }
}

TEST(HttpTransport, UnauthorizedAbortsBuild) {
  CannedServer server({}, 401);
  auto transport = http_chat_transport(server.config());
  try {
    transport({{"user", "hi"}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::http_error);
    EXPECT_NE(std::string(e.what()).find("401"), std::string::npos);
  }
  LlmPolicy policy(server.config());
  sim::SimFactory factory(scenario());
  auto result = run_build_session({{"acme/app", "abc"}, std::nullopt}, policy, factory);
  EXPECT_EQ(result.trace.outcome, Outcome::aborted);
}

TEST(HttpTransport, UnreachableEndpoint) {
  LlmConfig c;
  c.url = "http://127.0.0.1:1/v1";
  c.timeout = std::chrono::seconds(2);
  EXPECT_THROW(http_chat_transport(c)({{"user", "hi"}}), Error);
  c.url = "not a url";
  EXPECT_THROW(http_chat_transport(c), Error);
}

}  // namespace
}  // namespace envforge
