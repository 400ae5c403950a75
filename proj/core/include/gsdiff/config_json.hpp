#pragma once

#include "gsdiff/trainer.hpp"

#include <string>

namespace gsdiff {

/// Parses a JSON config mirroring TrainConfig field names. Unknown keys are
/// errors (typo guard).
TrainConfig parse_train_config(const std::string& json_text);
TrainConfig load_train_config(const std::string& path);
std::string train_config_to_json(const TrainConfig& cfg);

} // namespace gsdiff
