#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "prba/training.hpp"

namespace prba {

struct ExperimentConfig {
    std::string preset = "desk";
    ChannelConfig channel;
    ProtocolConfig protocol;
    ModelConfig model;
    TrainConfig train;
    std::string output_dir = "out";
    std::uint64_t seed = 1;

    void validate() const;
};

ExperimentConfig preset_config(const std::string& name);

// Plain-text `key = value` lines with dotted section keys; `#` starts a
// comment. A `preset` line selects the defaults the other keys override.
ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig parse_config(const std::filesystem::path& path);

// Applies one key/value (same keys as the file format).
void set_config_value(ExperimentConfig& config, const std::string& key, const std::string& value);

Json to_json(const ExperimentConfig& config);
ExperimentConfig experiment_config_from_json(const Json& j);

// FNV-1a over the canonical JSON dump, as 16 hex digits.
std::string config_hash(const ExperimentConfig& config);
std::string fnv1a_hex(const std::string& text);

}  // namespace prba
