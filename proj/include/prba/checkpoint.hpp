#pragma once

#include <filesystem>
#include <optional>

#include "prba/config.hpp"

namespace prba {

inline constexpr int kCheckpointSchemaVersion = 1;

struct CheckpointMeta {
    long steps = 0;
    double best_loss = 0.0;
    int best_epoch = -1;
    int epochs_run = 0;
};

struct Checkpoint {
    ExperimentConfig config;
    PolicyPair policies;
    std::optional<AdamState> adam_tx;
    std::optional<AdamState> adam_rx;
    CheckpointMeta meta;
};

Json parameters_to_json(const ParameterSet& params);
// Overwrites every tensor of `params` from `j`; names, shapes and lengths
// must match exactly.
void load_parameters(ParameterSet& params, const Json& j);

Json checkpoint_to_json(const Checkpoint& checkpoint);
Checkpoint checkpoint_from_json(const Json& j, std::optional<PolicyKind> expected = std::nullopt);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path,
                           std::optional<PolicyKind> expected = std::nullopt);

Json read_json_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace prba
