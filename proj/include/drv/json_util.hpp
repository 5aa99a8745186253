// Copyright 2026  The drvec Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Strict reading of JSON config objects: every key must be known, values
// must have the expected type, and errors name the full key path.

#include <initializer_list>
#include <string>

#include <json.hpp>  // nlohmann, vendored

#include "drv/errors.hpp"

namespace drv {

class JsonObjectReader {
 public:
  JsonObjectReader(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(Where() + "expected an object");
  }

  /// Rejects keys outside `known`.
  void AllowOnly(std::initializer_list<const char*> known) const {
    for (const auto& [key, value] : j_.items()) {
      bool ok = false;
      for (const char* k : known) ok |= key == k;
      if (!ok) throw ConfigError("unknown config key '" + Key(key) + "'");
    }
  }

  bool Has(const char* key) const { return j_.contains(key); }
  const nlohmann::json& At(const char* key) const { return j_.at(key); }
  std::string Key(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  /// Overwrites `out` when `key` is present.
  template <typename T>
  void Get(const char* key, T& out) const {
    if (!j_.contains(key)) return;
    const nlohmann::json& v = j_.at(key);
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw ConfigError("");
      } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer() || (std::is_unsigned_v<T> && v.get<long long>() < 0))
          throw ConfigError("");
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) throw ConfigError("");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw ConfigError("");
      }
      out = v.get<T>();
    } catch (const std::exception&) {
      throw ConfigError("config key '" + Key(key) + "' has invalid value " + v.dump());
    }
  }

 private:
  std::string Where() const { return path_.empty() ? "config: " : "config key '" + path_ + "': "; }

  const nlohmann::json& j_;
  std::string path_;
};

}  // namespace drv
