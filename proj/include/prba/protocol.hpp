#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "prba/channel.hpp"
#include "prba/policy.hpp"
#include "prba/polarization.hpp"

namespace prba {

struct ProtocolConfig {
    int n_stages = 6;
    double rho_tx = 1.0;
    double rho_rx = 1.0;
    double sigma2_tx = 1.0;
    double sigma2_rx = 1.0;
    bool pilot_noise = true;
    // Skip the Rx -> Tx pilot of the last stage (nothing consumes it).
    bool skip_final_uplink = false;

    static ProtocolConfig from_snr_db(double snr_db, int n_stages);
    double snr_db() const { return -10.0 * std::log10(sigma2_rx); }
    void validate() const;
};

Json to_json(const ProtocolConfig& config);
ProtocolConfig protocol_config_from_json(const Json& j);

struct StageParams {
    PolarizationAngles angles;
    CVector beamformer;
    Role role = Role::downlink;
};

// y = w_rec^H P_rec^T H P_send w_send sqrt(power) + noise, with H = H_dp for
// Tx -> Rx and H_dp^H for Rx -> Tx (`uplink`).
cplx observe_pilot(const CMatrix& h_dp, const StageParams& sender, const StageParams& receiver,
                   double power, cplx noise, bool uplink);

struct StageRecord {
    StageParams tx_pilot_transmit;
    StageParams rx_pilot_receive;
    StageParams rx_pilot_transmit;
    StageParams tx_pilot_receive;
    StageParams tx_downlink;
    StageParams rx_downlink;
};

struct EpisodeRecord {
    std::vector<cplx> y_tx;
    std::vector<cplx> y_rx;
    std::vector<StageRecord> stages;
    std::vector<double> gains;
    std::uint64_t channel_seed = 0;
};

Json to_json(const EpisodeRecord& record);
// Rows: episode_id,stage,gain_linear,gain_db
std::string gains_csv_rows(const EpisodeRecord& record, std::uint64_t episode_id);

// Channels and noise for a batch of episodes. Noise entries are already
// scaled by the configured standard deviations.
struct EpisodeBatch {
    std::shared_ptr<const std::vector<CMatrix>> channels;
    std::vector<std::uint64_t> channel_seeds;
    CMatrix noise_rx;  // B x L
    CMatrix noise_tx;  // B x L
    ad::Index size() const { return noise_rx.rows(); }
};

// Noise for episode e is drawn from derive_seed(seed, Stream::noise, e); per
// stage the Rx sample precedes the Tx sample.
void draw_noise(const ProtocolConfig& config, std::uint64_t seed, std::uint64_t episode,
                CMatrix& noise_rx, CMatrix& noise_tx, ad::Index row);

// Episodes first .. first + count - 1 of an experiment: channel e is
// experiment_channel(channel_cfg, seed, e).
EpisodeBatch make_batch(const ChannelConfig& channel_cfg, const ProtocolConfig& config,
                        std::uint64_t seed, std::uint64_t first, ad::Index count);

// Fixed channels with noise indexed by position in the list.
EpisodeBatch batch_from_channels(std::vector<CMatrix> channels, const ProtocolConfig& config,
                                 std::uint64_t noise_seed, std::uint64_t first_noise_index = 0);

EpisodeBatch slice_batch(const EpisodeBatch& batch, ad::Index begin, ad::Index count);

struct RunOptions {
    // Loss = -(sum of gains) / loss_denominator (0 = batch size); divided by
    // L as well when per_stage_mean is set.
    double loss_denominator = 0.0;
    bool per_stage_mean = false;
    bool trace_attention = false;
    bool keep_stage_params = false;
};

struct BatchResult {
    ad::Tensor loss;
    ad::Matrix gains;  // B x L
    CMatrix y_rx;      // B x L
    CMatrix y_tx;      // B x L (last column zero when skipped)
    std::vector<std::vector<StageRecord>> stages;  // [episode][stage], when kept
    std::vector<std::vector<ad::Matrix>> tx_attention;  // final Tx forward
    std::vector<std::vector<ad::Matrix>> rx_attention;
};

// Runs the batched protocol on `tape`. Every emitted parameter set is
// checked against the angle range and unit-norm contracts.
BatchResult run_batch(ad::Tape& tape, Bindings& tx_bind, Bindings& rx_bind, const Policy& tx,
                      const Policy& rx, const EpisodeBatch& batch, const ProtocolConfig& config,
                      const RunOptions& options = {});

BatchResult run_batch(const Policy& tx, const Policy& rx, const EpisodeBatch& batch,
                      const ProtocolConfig& config, const RunOptions& options = {});

EpisodeRecord run_episode(const CMatrix& h_dp, const Policy& tx, const Policy& rx,
                          const ProtocolConfig& config, std::uint64_t noise_seed,
                          std::uint64_t episode = 0);

std::vector<EpisodeRecord> records_from(const BatchResult& result, const EpisodeBatch& batch,
                                        const ProtocolConfig& config);

}  // namespace prba
