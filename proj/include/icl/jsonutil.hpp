#pragma once

#include <string>

#include <json.hpp>

#include "icl/errors.hpp"

// Typed field access that reports failures as FormatError("path.key: ...").
namespace icl::jsonutil {

inline const nlohmann::json& require_field(const nlohmann::json& j, const std::string& path, const std::string& key) {
  if (!j.is_object()) throw FormatError(path + ": expected object");
  if (!j.contains(key)) throw FormatError(path + "." + key + ": required field missing");
  return j.at(key);
}

inline long long get_int(const nlohmann::json& j, const std::string& path, const std::string& key) {
  const auto& v = require_field(j, path, key);
  if (!v.is_number_integer()) throw FormatError(path + "." + key + ": expected integer");
  return v.get<long long>();
}

inline std::size_t get_size(const nlohmann::json& j, const std::string& path, const std::string& key) {
  const long long v = get_int(j, path, key);
  if (v < 0) throw FormatError(path + "." + key + ": must be non-negative");
  return static_cast<std::size_t>(v);
}

inline double get_number(const nlohmann::json& j, const std::string& path, const std::string& key) {
  const auto& v = require_field(j, path, key);
  if (!v.is_number()) throw FormatError(path + "." + key + ": expected number");
  return v.get<double>();
}

inline std::string get_string(const nlohmann::json& j, const std::string& path, const std::string& key) {
  const auto& v = require_field(j, path, key);
  if (!v.is_string()) throw FormatError(path + "." + key + ": expected string");
  return v.get<std::string>();
}

inline bool get_bool(const nlohmann::json& j, const std::string& path, const std::string& key) {
  const auto& v = require_field(j, path, key);
  if (!v.is_boolean()) throw FormatError(path + "." + key + ": expected boolean");
  return v.get<bool>();
}

template <class T, class F>
T optional(const nlohmann::json& j, const std::string& key, T fallback, F&& getter) {
  return j.is_object() && j.contains(key) ? getter() : fallback;
}

}  // namespace icl::jsonutil
