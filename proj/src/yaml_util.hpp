#pragma once

#include <initializer_list>
#include <string>
#include <string_view>

#include <yaml-cpp/yaml.h>

#include "agentplan/errors.hpp"

namespace agentplan::detail {

inline int line_of(const YAML::Node& node) { return node.Mark().line >= 0 ? node.Mark().line + 1 : 0; }

template <typename T>
T scalar_as(const YAML::Node& node, const std::string& field) {
  if (!node.IsScalar()) throw ParseError("field '" + field + "' must be a scalar", line_of(node), field);
  try {
    return node.as<T>();
  } catch (const YAML::Exception&) {
    throw ParseError("field '" + field + "' has invalid value '" + node.Scalar() + "'", line_of(node), field);
  }
}

// Rejects keys outside `allowed`.
inline void require_keys(const YAML::Node& map, std::initializer_list<std::string_view> allowed,
                         const std::string& where) {
  for (const auto& kv : map) {
    auto key = kv.first.as<std::string>();
    bool ok = false;
    for (auto a : allowed) ok = ok || key == a;
    if (!ok) throw ParseError("unknown key '" + key + "' in " + where, line_of(kv.first), key);
  }
}

}  // namespace agentplan::detail
