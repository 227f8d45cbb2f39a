#pragma once

#include <filesystem>

#include <json.hpp>

#include "tml/learners.hpp"

namespace tml {

inline constexpr int kModelArchiveVersion = 1;

nlohmann::json spec_to_json(const LearnerSpec& spec);
LearnerSpec spec_from_json(const nlohmann::json& j);

/// Self-describing archive: format tag, version, spec, feature count,
/// provenance, standardization and fitted state. Doubles are written in
/// shortest round-trip form, so a reloaded model predicts bit-identically.
nlohmann::json model_to_json(const FittedModel& model);
FittedModel model_from_json(const nlohmann::json& j);

void save_model(const FittedModel& model, const std::filesystem::path& path);
FittedModel load_model(const std::filesystem::path& path);

} // namespace tml
