#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "prba/protocol.hpp"

namespace prba {

struct TrainConfig {
    double lr0 = 1e-3;
    double gamma = 0.9995;
    int batch_size = 64;
    int batches_per_epoch = 50;
    int patience_epochs = 10;
    int max_epochs = 60;
    long max_steps = 0;  // 0 = no limit
    int eval_episodes = 2000;
    std::uint64_t seed = 1;
    int threads = 1;
    bool per_stage_mean = false;

    void validate() const;
};

Json to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const Json& j);

struct AdamState {
    std::vector<ad::Matrix> m;
    std::vector<ad::Matrix> v;
    long t = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    static AdamState for_parameters(const ParameterSet& params);
};

Json to_json(const AdamState& state);
AdamState adam_state_from_json(const Json& j);

// Updates trainable entries in place. Non-finite gradients raise
// NumericFault before anything is modified.
void adam_step(ParameterSet& params, const std::vector<ad::Matrix>& grads, AdamState& state,
               double lr);

// lr0 * gamma^t.
double lr_schedule(long t, double lr0, double gamma);

// -(1/|batch|) sum_e sum_l gain_l, optionally divided by L.
double episode_loss(const std::vector<EpisodeRecord>& records, bool per_stage_mean = false);

struct GradientResult {
    double loss = 0.0;
    std::vector<ad::Matrix> tx;
    std::vector<ad::Matrix> rx;
    ad::Matrix gains;
    std::size_t guarded_normalizations = 0;
};

// Loss and gradients of one batch. With threads > 1 the batch is split into
// contiguous chunks on separate tapes and reduced in chunk order.
GradientResult compute_gradients(const Policy& tx, const Policy& rx, const EpisodeBatch& batch,
                                 const ProtocolConfig& protocol, bool per_stage_mean,
                                 int threads = 1);

struct LossRecord {
    long step = 0;
    int epoch = 0;
    double loss = 0.0;
    double lr = 0.0;
};

struct TrainOptions {
    // Train on these channels (cycled to the batch size) instead of fresh draws.
    std::shared_ptr<const std::vector<CMatrix>> fixed_channels;
    std::function<void(const LossRecord&)> on_step;
    std::function<void(int epoch, double loss, bool improved)> on_epoch;
};

struct TrainResult {
    std::vector<LossRecord> history;
    std::vector<double> epoch_losses;
    double best_loss = 0.0;
    int best_epoch = -1;
    int epochs_run = 0;
    long steps = 0;
    long skipped_steps = 0;
    bool early_stopped = false;
    AdamState adam_tx;
    AdamState adam_rx;
};

// Trains both sides jointly; on return the pair holds the parameters of the
// epoch with the lowest mean training loss.
TrainResult train(PolicyPair& pair, const ChannelConfig& channel, const ProtocolConfig& protocol,
                  const TrainConfig& config, const TrainOptions& options = {});

struct EvalResult {
    std::vector<double> mean_linear;
    std::vector<double> stderr_linear;
    std::vector<double> mean_db;
    std::vector<double> stderr_db;
    ad::Matrix gains;  // episodes x L
};

EvalResult summarize_gains(const ad::Matrix& gains);

// Episode e uses experiment_channel(channel, seed, e) and noise stream e.
EvalResult evaluate_average_gain(const Policy& tx, const Policy& rx, const ChannelConfig& channel,
                                 const ProtocolConfig& protocol, long episodes, std::uint64_t seed,
                                 int threads = 1, int chunk = 250);

// Runs fn(i) for i in [0, count) over `threads` workers (0 = hardware).
void parallel_for(int count, int threads, const std::function<void(int)>& fn);

}  // namespace prba
