#pragma once

// nlohmann/json bindings for the structured-text config and manifest formats.

#include <json.hpp>

#include "dmix/corpus.hpp"

namespace dmix {

void to_json(nlohmann::json& j, const TaskGroup& g);
void from_json(const nlohmann::json& j, TaskGroup& g);
void to_json(nlohmann::json& j, const CorpusSpec& spec);
void from_json(const nlohmann::json& j, CorpusSpec& spec);
void to_json(nlohmann::json& j, const ManifestRecord& r);
void from_json(const nlohmann::json& j, ManifestRecord& r);

}  // namespace dmix
