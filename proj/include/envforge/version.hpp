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

#include <array>
#include <compare>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace envforge {

// A dotted numeric release with 1 to 4 components. Comparison pads missing
// components with zeros, so 1.0 == 1.0.0.
class Version {
 public:
  static constexpr std::size_t kMaxComponents = 4;

  Version() = default;
  explicit Version(std::vector<std::uint32_t> components);

  // Throws Error(bad_constraint) unless the text is 1-4 dot-separated integers.
  static Version parse(std::string_view text);
  static std::optional<Version> try_parse(std::string_view text);

  const std::vector<std::uint32_t>& components() const noexcept { return components_; }
  std::array<std::uint32_t, kMaxComponents> padded() const;
  std::string to_string() const;

  friend std::strong_ordering operator<=>(const Version& a, const Version& b) {
    return a.padded() <=> b.padded();
  }
  friend bool operator==(const Version& a, const Version& b) { return a.padded() == b.padded(); }

 private:
  std::vector<std::uint32_t> components_{0};
};

enum class VersionOp { eq, ne, ge, le, gt, lt, compatible };

std::string_view to_string(VersionOp op);

struct VersionClause {
  VersionOp op = VersionOp::eq;
  Version version;
  friend bool operator==(const VersionClause&, const VersionClause&) = default;
};

// A conjunction of clauses; no clauses means "latest".
class VersionConstraint {
 public:
  VersionConstraint() = default;
  explicit VersionConstraint(std::vector<VersionClause> clauses);

  // Accepts "", ">=1.0,<2.0", "==1.19.5", "~=2.1" (whitespace ignored).
  // Throws Error(bad_constraint).
  static VersionConstraint parse(std::string_view text);

  const std::vector<VersionClause>& clauses() const noexcept { return clauses_; }
  bool is_latest() const noexcept { return clauses_.empty(); }

  // "~=" expanded to its ">=" / "<" pair.
  std::vector<VersionClause> desugared() const;

  // Canonical text, e.g. ">=1.0,<2.0"; "" for latest.
  std::string to_string() const;

  friend bool operator==(const VersionConstraint&, const VersionConstraint&) = default;

 private:
  std::vector<VersionClause> clauses_;
};

bool constraint_satisfies(const Version& version, const VersionConstraint& constraint);

// The finite universe conflict detection decides over: every
// major.minor.patch with each component in [0, max].
struct VersionGrid {
  std::uint32_t max_major = 20;
  std::uint32_t max_minor = 10;
  std::uint32_t max_patch = 10;

  // Smallest grid point >= v (or > v when strict).
  std::optional<Version> ceil(const Version& v, bool strict) const;
  std::optional<Version> next(const Version& grid_point) const;
  std::size_t size() const {
    return std::size_t{max_major + 1} * (max_minor + 1) * (max_patch + 1);
  }
};

// True when no grid version satisfies both constraints. Decided analytically
// from the combined bounds rather than by scanning the grid.
bool constraint_conflicts(const VersionConstraint& a, const VersionConstraint& b,
                          const VersionGrid& grid = {});

// PEP 503 normalization: lowercase, runs of "-", "_", "." become "-".
std::string normalize_package_name(std::string_view name);

}  // namespace envforge
