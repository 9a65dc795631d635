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
#include <optional>
#include <string>
#include <vector>

namespace envforge {

struct ProcessResult {
  int exit_code = 0;  // 124 after a timeout, 127 when the program is missing
  std::string stdout_text;
  std::string stderr_text;
  bool timed_out = false;
  std::int64_t duration_ms = 0;
};

// Runs argv (PATH lookup on argv[0]) with optional stdin, capturing both
// streams. The child is killed once `timeout` elapses.
ProcessResult run_process(const std::vector<std::string>& argv,
                          std::optional<std::chrono::milliseconds> timeout = std::nullopt,
                          const std::string& stdin_text = {});

// True when `program` resolves on PATH.
bool program_on_path(const std::string& program);

}  // namespace envforge
