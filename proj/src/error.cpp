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

#include "envforge/error.hpp"

namespace envforge {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::malformed_line: return "malformed-line";
    case ErrorCode::invariant_violation: return "invariant-violation";
    case ErrorCode::version_mismatch: return "version-mismatch";
    case ErrorCode::unparsable_line: return "unparsable-line";
    case ErrorCode::unsupported_flag: return "unsupported-flag";
    case ErrorCode::image_unavailable: return "image-unavailable";
    case ErrorCode::backend_unavailable: return "backend-unavailable";
    case ErrorCode::timeout: return "timeout";
    case ErrorCode::backend_io: return "backend-io";
    case ErrorCode::unknown_snapshot: return "unknown-snapshot";
    case ErrorCode::bad_constraint: return "bad-constraint";
    case ErrorCode::file_missing: return "file-missing";
    case ErrorCode::parse_error: return "parse-error";
    case ErrorCode::no_such_conflict: return "no-such-conflict";
    case ErrorCode::conflicts_pending: return "conflicts-pending";
    case ErrorCode::empty_waiting_list: return "empty-waiting-list";
    case ErrorCode::invalid_action: return "invalid-action";
    case ErrorCode::guard_violation: return "guard-violation";
    case ErrorCode::patch_apply_failed: return "patch-apply-failed";
    case ErrorCode::repo_unavailable: return "repo-unavailable";
    case ErrorCode::http_error: return "http-error";
    case ErrorCode::parse_failure_exhausted: return "parse-failure-exhausted";
    case ErrorCode::unverified_trace: return "unverified-trace";
    case ErrorCode::missing_pin: return "missing-pin";
  }
  return "unknown";
}

Error::Error(ErrorCode code, std::string detail)
    : std::runtime_error(std::string(to_string(code)) + ": " + detail),
      code_(code),
      detail_(std::move(detail)) {}

}  // namespace envforge
