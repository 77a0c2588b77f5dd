#pragma once

#include "json.hpp"

#include "avatar/synth.hpp"

namespace avatar::detail {

nlohmann::json camera_to_json(const synth::Camera& c);
synth::Camera camera_from_json(const nlohmann::json& j);

}  // namespace avatar::detail
