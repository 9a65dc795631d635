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

#include "envforge/version.hpp"

#include <cctype>
#include <charconv>

#include "envforge/error.hpp"

namespace envforge {

namespace {

struct Bound {
  Version version;
  bool strict = false;
};

}  // namespace

Version::Version(std::vector<std::uint32_t> components) : components_(std::move(components)) {
  if (components_.empty() || components_.size() > kMaxComponents) {
    throw Error(ErrorCode::bad_constraint, "version needs 1-4 components");
  }
}

std::optional<Version> Version::try_parse(std::string_view text) {
  std::vector<std::uint32_t> parts;
  std::size_t start = 0;
  while (true) {
    auto dot = text.find('.', start);
    auto piece = text.substr(start, dot == std::string_view::npos ? text.npos : dot - start);
    if (piece.empty() || parts.size() == kMaxComponents) return std::nullopt;
    std::uint32_t value = 0;
    auto [ptr, ec] = std::from_chars(piece.data(), piece.data() + piece.size(), value);
    if (ec != std::errc{} || ptr != piece.data() + piece.size()) return std::nullopt;
    parts.push_back(value);
    if (dot == std::string_view::npos) break;
    start = dot + 1;
  }
  return Version(std::move(parts));
}

Version Version::parse(std::string_view text) {
  auto v = try_parse(text);
  if (!v) throw Error(ErrorCode::bad_constraint, "invalid version \"" + std::string(text) + "\"");
  return *v;
}

std::array<std::uint32_t, Version::kMaxComponents> Version::padded() const {
  std::array<std::uint32_t, kMaxComponents> out{};
  for (std::size_t i = 0; i < components_.size(); ++i) out[i] = components_[i];
  return out;
}

std::string Version::to_string() const {
  std::string out;
  for (std::size_t i = 0; i < components_.size(); ++i) {
    if (i > 0) out += '.';
    out += std::to_string(components_[i]);
  }
  return out;
}

std::string_view to_string(VersionOp op) {
  switch (op) {
    case VersionOp::eq: return "==";
    case VersionOp::ne: return "!=";
    case VersionOp::ge: return ">=";
    case VersionOp::le: return "<=";
    case VersionOp::gt: return ">";
    case VersionOp::lt: return "<";
    case VersionOp::compatible: return "~=";
  }
  return "==";
}

VersionConstraint::VersionConstraint(std::vector<VersionClause> clauses)
    : clauses_(std::move(clauses)) {
  for (const auto& c : clauses_) {
    if (c.op == VersionOp::compatible && c.version.components().size() < 2) {
      throw Error(ErrorCode::bad_constraint, "~= needs at least two components");
    }
  }
}

VersionConstraint VersionConstraint::parse(std::string_view text) {
  std::string compact;
  for (char c : text) {
    if (!std::isspace(static_cast<unsigned char>(c))) compact += c;
  }
  std::vector<VersionClause> clauses;
  if (compact.empty()) return {};
  std::string_view rest = compact;
  while (true) {
    auto comma = rest.find(',');
    auto piece = rest.substr(0, comma);
    static constexpr std::pair<std::string_view, VersionOp> ops[] = {
        {"==", VersionOp::eq}, {"!=", VersionOp::ne}, {">=", VersionOp::ge},
        {"<=", VersionOp::le}, {"~=", VersionOp::compatible}, {">", VersionOp::gt},
        {"<", VersionOp::lt}};
    bool matched = false;
    for (const auto& [symbol, op] : ops) {
      if (piece.starts_with(symbol)) {
        auto v = Version::try_parse(piece.substr(symbol.size()));
        if (!v) break;
        clauses.push_back({op, *v});
        matched = true;
        break;
      }
    }
    if (!matched) {
      throw Error(ErrorCode::bad_constraint, "cannot parse \"" + std::string(text) + "\"");
    }
    if (comma == std::string_view::npos) break;
    rest = rest.substr(comma + 1);
  }
  return VersionConstraint(std::move(clauses));
}

std::vector<VersionClause> VersionConstraint::desugared() const {
  std::vector<VersionClause> out;
  for (const auto& c : clauses_) {
    if (c.op != VersionOp::compatible) {
      out.push_back(c);
      continue;
    }
    // ~=X.Y.Z means >=X.Y.Z and <X.(Y+1): drop the last component, bump the new last
    auto upper = c.version.components();
    upper.pop_back();
    ++upper.back();
    out.push_back({VersionOp::ge, c.version});
    out.push_back({VersionOp::lt, Version(std::move(upper))});
  }
  return out;
}

std::string VersionConstraint::to_string() const {
  std::string out;
  for (const auto& c : clauses_) {
    if (!out.empty()) out += ',';
    out += envforge::to_string(c.op);
    out += c.version.to_string();
  }
  return out;
}

bool constraint_satisfies(const Version& version, const VersionConstraint& constraint) {
  for (const auto& c : constraint.desugared()) {
    bool ok = false;
    switch (c.op) {
      case VersionOp::eq: ok = version == c.version; break;
      case VersionOp::ne: ok = version != c.version; break;
      case VersionOp::ge: ok = version >= c.version; break;
      case VersionOp::le: ok = version <= c.version; break;
      case VersionOp::gt: ok = version > c.version; break;
      case VersionOp::lt: ok = version < c.version; break;
      case VersionOp::compatible: break;  // desugared away
    }
    if (!ok) return false;
  }
  return true;
}

std::optional<Version> VersionGrid::ceil(const Version& v, bool strict) const {
  auto p = v.padded();
  // grid points have a zero fourth component
  if (p[3] > 0) strict = true;
  std::uint32_t a = p[0], b = p[1], c = p[2];
  if (a > max_major) return std::nullopt;
  bool moved = false;
  if (b > max_minor) {
    ++a, b = 0, c = 0, moved = true;
  } else if (c > max_patch) {
    ++b, c = 0, moved = true;
    if (b > max_minor) ++a, b = 0;
  }
  if (a > max_major) return std::nullopt;
  Version point({a, b, c});
  if (strict && !moved) return next(point);
  return point;
}

std::optional<Version> VersionGrid::next(const Version& grid_point) const {
  auto p = grid_point.padded();
  std::uint32_t a = p[0], b = p[1], c = p[2] + 1;
  if (c > max_patch) c = 0, ++b;
  if (b > max_minor) b = 0, ++a;
  if (a > max_major) return std::nullopt;
  return Version({a, b, c});
}

bool constraint_conflicts(const VersionConstraint& a, const VersionConstraint& b,
                          const VersionGrid& grid) {
  std::vector<VersionClause> clauses = a.desugared();
  for (const auto& c : b.desugared()) clauses.push_back(c);

  std::optional<Bound> lower;
  std::optional<Bound> upper;
  std::size_t exclusions = 0;
  auto raise = [&lower](const Version& v, bool strict) {
    if (!lower || v > lower->version || (v == lower->version && strict)) lower = Bound{v, strict};
  };
  auto drop = [&upper](const Version& v, bool strict) {
    if (!upper || v < upper->version || (v == upper->version && strict)) upper = Bound{v, strict};
  };
  for (const auto& c : clauses) {
    switch (c.op) {
      case VersionOp::eq: raise(c.version, false); drop(c.version, false); break;
      case VersionOp::ge: raise(c.version, false); break;
      case VersionOp::gt: raise(c.version, true); break;
      case VersionOp::le: drop(c.version, false); break;
      case VersionOp::lt: drop(c.version, true); break;
      case VersionOp::ne: ++exclusions; break;
      case VersionOp::compatible: break;
    }
  }

  std::optional<Version> candidate =
      lower ? grid.ceil(lower->version, lower->strict) : std::optional(Version({0, 0, 0}));
  auto within_upper = [&upper](const Version& v) {
    return !upper || (upper->strict ? v < upper->version : v <= upper->version);
  };
  // every grid point in [lower, upper] passes the range clauses; only the
  // finitely many "!=" points can still reject, so this loop is short
  for (std::size_t step = 0; step <= exclusions && candidate; ++step) {
    if (!within_upper(*candidate)) return true;
    bool excluded = false;
    for (const auto& c : clauses) {
      if (c.op == VersionOp::ne && *candidate == c.version) excluded = true;
    }
    if (!excluded) return false;
    candidate = grid.next(*candidate);
  }
  return true;
}

std::string normalize_package_name(std::string_view name) {
  std::string out;
  bool in_separator = false;
  for (char c : name) {
    if (c == '-' || c == '_' || c == '.') {
      if (!in_separator) out += '-';
      in_separator = true;
    } else {
      out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
      in_separator = false;
    }
  }
  return out;
}

}  // namespace envforge
