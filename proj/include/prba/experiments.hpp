#pragma once

#include <filesystem>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "prba/checkpoint.hpp"
#include "prba/interpret.hpp"

namespace prba {

struct RunContext {
    ExperimentConfig config;
    std::filesystem::path out = "out";
    int threads = 1;
    long episodes = 0;  // 0 = config.train.eval_episodes
    std::vector<std::string> methods;
    // method (or tag) -> checkpoint path
    std::map<std::string, std::filesystem::path> checkpoints;
    bool independent_noise = false;
    std::ostream* log = nullptr;

    long eval_episodes() const { return episodes > 0 ? episodes : config.train.eval_episodes; }
    std::uint64_t eval_seed() const;
};

// "# config_hash=<hash> seed=<seed>"
std::string csv_comment(const ExperimentConfig& config);

void run_gen_channels(const RunContext& ctx, long count);
TrainResult run_train(const RunContext& ctx);
void run_eval(const RunContext& ctx);
void run_sweep_paths(const RunContext& ctx, const std::vector<int>& paths);
void run_interpret(const RunContext& ctx, const std::vector<int>& head_counts);
void run_oracle(const RunContext& ctx, long count, int grid_points);

// Loads a policy pair for `method`: perfect-csi is built directly, every
// other method needs ctx.checkpoints[method].
PolicyPair load_method(const RunContext& ctx, const std::string& method);

}  // namespace prba
