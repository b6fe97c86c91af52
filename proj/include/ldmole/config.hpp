#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "ldmole/train.hpp"

namespace ldmole {

// Configuration errors carry one message per offending field path.
struct ConfigError : std::runtime_error {
    std::vector<std::string> issues;
    explicit ConfigError(std::vector<std::string> problems);
};

// Parses the `key = value` / `[section]` config grammar. Unknown keys are
// rejected; router.kind is required; everything else has defaults.
TrainConfig parse_config_text(const std::string &text);
TrainConfig load_config(const std::string &path);

// Reference config rendering (parseable by load_config).
std::string config_template();

}  // namespace ldmole
