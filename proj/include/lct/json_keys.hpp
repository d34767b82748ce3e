#pragma once

#include <algorithm>
#include <initializer_list>
#include <string>
#include <string_view>

#include <json.hpp>

#include "lct/error.hpp"

namespace lct {

/// Throws `kind` when `j` is not an object or has a key outside `known`.
inline void require_known_keys(const nlohmann::json& j, std::initializer_list<std::string_view> known,
                               std::string_view where, ErrorKind kind = ErrorKind::InvalidConfig) {
  if (!j.is_object()) throw Error(kind, std::string(where) + ": expected an object");
  for (const auto& [key, _] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw Error(kind, std::string(where) + ": unknown key '" + key + "'");
    }
  }
}

}  // namespace lct
