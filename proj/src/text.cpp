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

#include "envforge/text.hpp"

#include <charconv>
#include <vector>

namespace envforge {

namespace {

constexpr std::string_view kMarkerOpen = "\n…[";
constexpr std::string_view kMarkerClose = " chars omitted]…\n";

// Length of the valid UTF-8 sequence starting at text[i], or 0.
std::size_t sequence_length(std::string_view text, std::size_t i) {
  auto byte = [&](std::size_t k) { return static_cast<unsigned char>(text[k]); };
  unsigned char lead = byte(i);
  std::size_t n = 0;
  if (lead < 0x80) return 1;
  if (lead >= 0xC2 && lead <= 0xDF) n = 2;
  else if (lead >= 0xE0 && lead <= 0xEF) n = 3;
  else if (lead >= 0xF0 && lead <= 0xF4) n = 4;
  else return 0;
  if (i + n > text.size()) return 0;
  for (std::size_t k = 1; k < n; ++k) {
    if ((byte(i + k) & 0xC0) != 0x80) return 0;
  }
  unsigned char second = byte(i + 1);
  if (lead == 0xE0 && second < 0xA0) return 0;  // overlong
  if (lead == 0xED && second > 0x9F) return 0;  // surrogates
  if (lead == 0xF0 && second < 0x90) return 0;
  if (lead == 0xF4 && second > 0x8F) return 0;
  return n;
}

// Byte offsets of every code point start, plus text.size() at the end.
std::vector<std::size_t> boundaries(std::string_view text) {
  std::vector<std::size_t> out;
  out.reserve(text.size() + 1);
  std::size_t i = 0;
  while (i < text.size()) {
    out.push_back(i);
    auto n = sequence_length(text, i);
    i += n == 0 ? 1 : n;
  }
  out.push_back(text.size());
  return out;
}

bool already_truncated(std::string_view text, const std::vector<std::size_t>& cps,
                       std::size_t head, std::size_t tail) {
  std::size_t count = cps.size() - 1;
  if (count <= head + tail) return false;
  auto rest = text.substr(cps[head]);
  if (!rest.starts_with(kMarkerOpen)) return false;
  rest.remove_prefix(kMarkerOpen.size());
  std::size_t omitted = 0;
  auto [ptr, ec] = std::from_chars(rest.data(), rest.data() + rest.size(), omitted);
  if (ec != std::errc{} || ptr == rest.data()) return false;
  rest.remove_prefix(static_cast<std::size_t>(ptr - rest.data()));
  if (!rest.starts_with(kMarkerClose)) return false;
  rest.remove_prefix(kMarkerClose.size());
  return utf8_length(rest) == tail;
}

}  // namespace

std::string sanitize_utf8(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    auto n = sequence_length(text, i);
    if (n == 0) {
      out += "\xEF\xBF\xBD";
      ++i;
    } else {
      out.append(text.substr(i, n));
      i += n;
    }
  }
  return out;
}

std::size_t utf8_length(std::string_view text) { return boundaries(text).size() - 1; }

std::string truncate(std::string_view text, std::size_t head_limit, std::size_t tail_limit) {
  auto cps = boundaries(text);
  std::size_t count = cps.size() - 1;
  if (count <= head_limit + tail_limit) return std::string(text);
  if (already_truncated(text, cps, head_limit, tail_limit)) return std::string(text);
  std::size_t omitted = count - head_limit - tail_limit;
  std::string out(text.substr(0, cps[head_limit]));
  out += kMarkerOpen;
  out += std::to_string(omitted);
  out += kMarkerClose;
  out += text.substr(cps[count - tail_limit]);
  return out;
}

}  // namespace envforge
