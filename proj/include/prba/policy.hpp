#pragma once

#include <memory>
#include <string>
#include <vector>

#include "prba/autodiff.hpp"
#include "prba/parameters.hpp"
#include "prba/polarization.hpp"
#include "prba/serialization.hpp"

namespace prba {

enum class Side { tx, rx };
enum class Role { pilot_transmit, pilot_receive, downlink };
enum class PolicyKind { transformer, gru, nonadaptive, perfect_csi };
enum class AttentionScale { sqrt_d_emb, sqrt_d_head };

const char* side_name(Side side);
const char* role_name(Role role);
const char* policy_kind_name(PolicyKind kind);
PolicyKind policy_kind_from_name(const std::string& name);

inline constexpr Role kRoles[] = {Role::pilot_transmit, Role::pilot_receive, Role::downlink};

struct ModelConfig {
    PolicyKind kind = PolicyKind::transformer;
    int d_emb = 64;
    int n_heads = 4;
    int n_layers = 2;
    int ffn_hidden = 128;
    int mlp_hidden = 128;
    int gru_hidden = 256;
    int gru_input = 64;
    int max_stages = 6;
    AttentionScale attention_scale = AttentionScale::sqrt_d_emb;
    bool causal_mask = true;
    // Beamformer from the sum of the two output blocks instead of the
    // real/imaginary pairing; yields a real-valued beamformer.
    bool literal_sum_beamformer = false;

    int d_head() const { return d_emb / n_heads; }
    void validate() const;
};

Json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const Json& j);

// Batched parameters for one stage: angles B x N in [0, pi/2] and unit-norm
// beamformers B x 2N in paired layout.
struct StageTensors {
    ad::Tensor angles;
    ad::Tensor beamformer;
};

// One side's state across an episode batch.
class PolicySession {
public:
    virtual ~PolicySession() = default;
    // y: B x 2 (real, imaginary).
    virtual void observe(const ad::Tensor& y) = 0;
    virtual StageTensors act(Role role) = 0;
    virtual std::size_t observed() const = 0;
    // Attention probabilities of the most recent forward pass,
    // [layer][b * heads + h]; empty for non-attention policies.
    virtual const std::vector<std::vector<ad::Matrix>>& attention() const;
};

struct SessionContext {
    ad::Tape* tape = nullptr;
    Bindings* bindings = nullptr;
    ad::Index batch = 1;
    std::shared_ptr<const std::vector<CMatrix>> channels;
    bool trace_attention = false;
};

class Policy {
public:
    Policy(Side side, int n_antennas, ModelConfig config);
    virtual ~Policy() = default;

    Side side() const { return side_; }
    int n_antennas() const { return n_antennas_; }
    const ModelConfig& config() const { return config_; }
    PolicyKind kind() const { return config_.kind; }
    ParameterSet& parameters() { return params_; }
    const ParameterSet& parameters() const { return params_; }

    virtual std::unique_ptr<PolicySession> start(const SessionContext& ctx) const = 0;
    virtual std::unique_ptr<Policy> clone() const = 0;

protected:
    Side side_;
    int n_antennas_;
    ModelConfig config_;
    ParameterSet params_;
};

struct PolicyPair {
    std::unique_ptr<Policy> tx;
    std::unique_ptr<Policy> rx;
};

std::unique_ptr<Policy> make_policy(const ModelConfig& config, Side side, int n_antennas,
                                    std::uint64_t seed);
PolicyPair make_policy_pair(const ModelConfig& config, int n_tx, int n_rx, std::uint64_t seed);
PolicyPair clone_pair(const PolicyPair& pair);

// Output post-processing shared by every learned policy: o is B x 3N;
// angles = sigmoid(o[:N]) * pi/2, beamformer = normalize(o[N:3N]).
StageTensors output_heads(ad::Tape& tape, const ad::Tensor& o, int n_antennas,
                          bool literal_sum = false);

// Stage-0 learned constants: init.<role>.angle_logits (1 x N) and
// init.<role>.beamformer (1 x 2N), broadcast over the batch.
void add_stage0_parameters(ParameterSet& params, int n_antennas, Rng& rng);
StageTensors stage0_outputs(ad::Tape& tape, Bindings& b, Role role, ad::Index batch,
                            int n_antennas, bool literal_sum);

// d_in -> hidden -> hidden -> 3N with ReLU + layer norm after each hidden
// layer; names head.<role>.{l0,ln0,l1,ln1,l2}.
void add_output_mlp(ParameterSet& params, const std::string& prefix, int d_in, int hidden,
                    int n_antennas, Rng& rng);
ad::Tensor output_mlp(ad::Tape& tape, Bindings& b, const std::string& prefix,
                      const ad::Tensor& x);

// Draws angles U[0, pi/2] and a CN(0, I) beamformer normalized to unit norm.
std::pair<PolarizationAngles, CVector> random_stage_params(int n_antennas, Rng& rng);

}  // namespace prba
