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

#include <stdexcept>
#include <string>
#include <string_view>

namespace envforge {

enum class ErrorCode {
  // trace file format
  malformed_line,
  invariant_violation,
  version_mismatch,
  // command parsing
  unparsable_line,
  unsupported_flag,
  // sandbox
  image_unavailable,
  backend_unavailable,
  timeout,
  backend_io,
  unknown_snapshot,
  // dependency lists
  bad_constraint,
  file_missing,
  parse_error,
  no_such_conflict,
  conflicts_pending,
  empty_waiting_list,
  // agent
  invalid_action,
  guard_violation,
  patch_apply_failed,
  repo_unavailable,
  http_error,
  parse_failure_exhausted,
  // synthesis
  unverified_trace,
  missing_pin,
};

std::string_view to_string(ErrorCode code);

// All library failures surface as this one exception type; `code()` is the
// machine-readable kind and `what()` carries "<kind>: <detail>".
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, std::string detail);

  ErrorCode code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

}  // namespace envforge
