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

#include <optional>
#include <string>
#include <string_view>
#include <vector>

// Code edits travel as SEARCH/REPLACE blocks:
//
//   <<<<<<< SEARCH
//   print(f"{data["key"]}")
//   =======
//   print(f"{data['key']}")
//   >>>>>>> REPLACE
//
// Each block replaces the first occurrence of its search text. An empty
// search creates the file (or fills an empty one). The same rules are
// implemented by the Python applier shipped into images as code_edit.py.
namespace envforge::code_edit {

inline constexpr std::string_view kAssetDir = "/envforge";
inline constexpr std::string_view kScriptName = "code_edit.py";

struct Block {
  std::string search;
  std::string replace;
};

// nullopt when the text holds no block or an unterminated one.
std::optional<std::vector<Block>> parse_patch(std::string_view patch);

struct Result {
  int return_code = 0;  // 0 applied, 1 target/search mismatch, 2 malformed patch
  std::string content;
  std::string message;
};

Result apply(const std::optional<std::string>& current, std::string_view patch);

// Source of code_edit.py: python code_edit.py TARGET PATCH_FILE
std::string_view script();

std::string script_path();
std::string patch_path(int turn);
std::string patch_asset_name(int turn);

}  // namespace envforge::code_edit
