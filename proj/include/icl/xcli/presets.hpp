#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace icl::xcli {

struct Preset {
  std::string name;
  std::string summary;
  nlohmann::json config;
};

// Built-in desk-scale experiments, in listing order.
const std::vector<Preset>& presets();
std::optional<Preset> find_preset(const std::string& name);

}  // namespace icl::xcli
