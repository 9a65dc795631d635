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

#include <cstddef>
#include <string>
#include <string_view>

namespace envforge {

inline constexpr std::size_t kDefaultHeadLimit = 2000;
inline constexpr std::size_t kDefaultTailLimit = 2000;

// Replaces invalid UTF-8 sequences with U+FFFD.
std::string sanitize_utf8(std::string_view text);

std::size_t utf8_length(std::string_view text);

// Keeps the first `head_limit` and last `tail_limit` characters (code
// points) of long output and joins them with "\n…[N chars omitted]…\n".
// Text that already has exactly that shape is returned unchanged, which
// makes the function idempotent.
std::string truncate(std::string_view text, std::size_t head_limit = kDefaultHeadLimit,
                     std::size_t tail_limit = kDefaultTailLimit);

}  // namespace envforge
