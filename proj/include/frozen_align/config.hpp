#pragma once

// JSON views of the engine configs. Readers accept partial objects: absent
// keys keep their defaults, unknown keys are rejected.

#include <string>

#include <json.hpp>

#include "frozen_align/optimizer.hpp"
#include "frozen_align/projection_net.hpp"
#include "frozen_align/trainer.hpp"

namespace frozen_align {

nlohmann::json to_json(const ProjectionConfig& c);
nlohmann::json to_json(const AdamConfig& c);
nlohmann::json to_json(const TrainConfig& c);

void update_from_json(ProjectionConfig& c, const nlohmann::json& j);
void update_from_json(AdamConfig& c, const nlohmann::json& j);
void update_from_json(TrainConfig& c, const nlohmann::json& j);

/// FNV-1a of the canonical (key-sorted, compact) dump, as 16 hex digits.
std::string config_digest(const nlohmann::json& j);

}  // namespace frozen_align
