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

#include "envforge/code_edit.hpp"

namespace envforge::code_edit {

namespace {

constexpr std::string_view kSearch = "<<<<<<< SEARCH";
constexpr std::string_view kDivider = "=======";
constexpr std::string_view kReplace = ">>>>>>> REPLACE";

constexpr std::string_view kScript = R"PY(#!/usr/bin/env python3
"""Apply SEARCH/REPLACE blocks from a patch file to a target file.

usage: code_edit.py TARGET PATCH_FILE
exit status: 0 applied, 1 target or search text mismatch, 2 malformed patch
"""
import os
import sys

SEARCH, DIVIDER, REPLACE = "<<<<<<< SEARCH", "=======", ">>>>>>> REPLACE"


def parse(text):
    blocks, state, search, replace = [], "outside", [], []
    for line in text.split("\n"):
        if state == "outside":
            if line == SEARCH:
                state, search, replace = "search", [], []
            elif line.strip():
                return None
        elif state == "search":
            if line == DIVIDER:
                state = "replace"
            else:
                search.append(line + "\n")
        elif line == REPLACE:
            blocks.append(("".join(search), "".join(replace)))
            state = "outside"
        else:
            replace.append(line + "\n")
    if state != "outside" or not blocks:
        return None
    return blocks


def main(argv):
    if len(argv) != 3:
        print("usage: code_edit.py TARGET PATCH_FILE", file=sys.stderr)
        return 2
    target, patch_file = argv[1], argv[2]
    with open(patch_file, encoding="utf-8", newline="") as f:
        blocks = parse(f.read())
    if blocks is None:
        print("malformed patch", file=sys.stderr)
        return 2
    content = None
    if os.path.isfile(target):
        with open(target, encoding="utf-8", newline="") as f:
            content = f.read()
    for n, (search, replace) in enumerate(blocks, 1):
        if search == "":
            if content:
                print("block %d: empty search on a non-empty file" % n, file=sys.stderr)
                return 1
            content = replace
            continue
        if content is None:
            print("%s: no such file" % target, file=sys.stderr)
            return 1
        at = content.find(search)
        if at < 0:
            print("block %d: search text not found" % n, file=sys.stderr)
            return 1
        content = content[:at] + replace + content[at + len(search):]
    parent = os.path.dirname(target)
    if parent and not os.path.isdir(parent):
        print("%s: no such directory" % parent, file=sys.stderr)
        return 1
    with open(target, "w", encoding="utf-8", newline="") as f:
        f.write(content)
    print("applied %d block(s) to %s" % (len(blocks), target))
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv))
)PY";

}  // namespace

std::optional<std::vector<Block>> parse_patch(std::string_view patch) {
  enum class State { outside, search, replace } state = State::outside;
  std::vector<Block> blocks;
  Block current;
  std::size_t start = 0;
  while (start <= patch.size()) {
    auto end = patch.find('\n', start);
    if (end == std::string_view::npos) end = patch.size();
    auto line = patch.substr(start, end - start);
    start = end + 1;
    switch (state) {
      case State::outside:
        if (line == kSearch) {
          state = State::search;
          current = {};
        } else if (line.find_first_not_of(" \t\r\f\v") != std::string_view::npos) {
          return std::nullopt;
        }
        break;
      case State::search:
        if (line == kDivider) {
          state = State::replace;
        } else {
          current.search.append(line).push_back('\n');
        }
        break;
      case State::replace:
        if (line == kReplace) {
          blocks.push_back(std::move(current));
          state = State::outside;
        } else {
          current.replace.append(line).push_back('\n');
        }
        break;
    }
  }
  if (state != State::outside || blocks.empty()) return std::nullopt;
  return blocks;
}

Result apply(const std::optional<std::string>& current, std::string_view patch) {
  auto blocks = parse_patch(patch);
  if (!blocks) return {2, {}, "malformed patch"};
  std::optional<std::string> content = current;
  for (std::size_t n = 0; n < blocks->size(); ++n) {
    const auto& [search, replace] = (*blocks)[n];
    auto label = "block " + std::to_string(n + 1);
    if (search.empty()) {
      if (content && !content->empty()) return {1, {}, label + ": empty search on a non-empty file"};
      content = replace;
      continue;
    }
    if (!content) return {1, {}, "no such file"};
    auto at = content->find(search);
    if (at == std::string::npos) return {1, {}, label + ": search text not found"};
    content->replace(at, search.size(), replace);
  }
  return {0, std::move(*content), "applied " + std::to_string(blocks->size()) + " block(s)"};
}

std::string_view script() { return kScript; }

std::string script_path() { return std::string(kAssetDir) + "/" + std::string(kScriptName); }

std::string patch_path(int turn) {
  return std::string(kAssetDir) + "/" + patch_asset_name(turn);
}

std::string patch_asset_name(int turn) { return "patch_" + std::to_string(turn) + ".diff"; }

}  // namespace envforge::code_edit
