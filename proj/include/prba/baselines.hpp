#pragma once

#include <vector>

#include "prba/policy.hpp"

namespace prba {

struct GruWeights {
    ad::Matrix update_w, update_b;       // (H + X) x H, 1 x H
    ad::Matrix reset_w, reset_b;
    ad::Matrix candidate_w, candidate_b;
};

// One GRU step on plain values: h is 1 x H, x is 1 x X, concatenation order
// [h; x] with the reset gate applied to h inside the candidate.
ad::Matrix gru_step(const ad::Matrix& h, const ad::Matrix& x, const GruWeights& w);

class GruPolicy : public Policy {
public:
    GruPolicy(Side side, int n_antennas, const ModelConfig& config, Rng& rng);

    std::unique_ptr<PolicySession> start(const SessionContext& ctx) const override;
    std::unique_ptr<Policy> clone() const override;

    GruWeights weights() const;
    // Taped GRU step on a batch; x_proj is the projected pilot (B x X).
    ad::Tensor step(ad::Tape& tape, Bindings& b, const ad::Tensor& h, const ad::Tensor& x_proj) const;
    ad::Tensor project(ad::Tape& tape, Bindings& b, const ad::Tensor& y) const;

private:
    GruPolicy(const GruPolicy&) = default;
};

// Pilot-stage parameters are frozen random constants; the downlink comes
// from an MLP over the concatenated [Re, Im] pilots (2L inputs).
class NonAdaptivePolicy : public Policy {
public:
    NonAdaptivePolicy(Side side, int n_antennas, const ModelConfig& config, Rng& rng);

    std::unique_ptr<PolicySession> start(const SessionContext& ctx) const override;
    std::unique_ptr<Policy> clone() const override;

    int n_stages() const { return config_.max_stages; }
    // Downlink for one complete observation list of exactly L pilots.
    std::pair<PolarizationAngles, CVector> downlink(const std::vector<cplx>& observations) const;

private:
    NonAdaptivePolicy(const NonAdaptivePolicy&) = default;
};

// Uses the IPO + SVD solution of each episode's channel for every mapping.
class PerfectCsiPolicy : public Policy {
public:
    PerfectCsiPolicy(Side side, int n_antennas, const ModelConfig& config);

    std::unique_ptr<PolicySession> start(const SessionContext& ctx) const override;
    std::unique_ptr<Policy> clone() const override;
};

}  // namespace prba
