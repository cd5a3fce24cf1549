#pragma once

#include <vector>

#include "prba/policy.hpp"

namespace prba {

// Per layer, per head: l x l row-stochastic scores for one episode.
struct AttentionTrace {
    std::vector<std::vector<ad::Matrix>> scores;  // [layer][head]
};

// Concat(Re{y} W + b, Im{y} W + b) for a single pilot; W and b are 1 x d/2.
ad::Matrix embed_pilot(cplx y, const ad::Matrix& weight, const ad::Matrix& bias);

// Row of length d_emb: PE[2i] = sin(pos / 10000^(2i/d)), PE[2i+1] = cos(...).
ad::Matrix positional_encoding(int pos, int d_emb);

class TransformerPolicy : public Policy {
public:
    TransformerPolicy(Side side, int n_antennas, const ModelConfig& config, Rng& rng);

    std::unique_ptr<PolicySession> start(const SessionContext& ctx) const override;
    std::unique_ptr<Policy> clone() const override;

    double attention_scale() const;

    // Final-position state for each episode given l >= 1 observations
    // stacked as (B l) x 2 with row b * l + t. Scores are appended per layer
    // when `scores` is non-null.
    ad::Tensor forward(ad::Tape& tape, Bindings& b, const ad::Tensor& observations,
                       ad::Index batch, ad::Index length,
                       std::vector<std::vector<ad::Matrix>>* scores = nullptr) const;
    // Same, returning every position: (B l) x d_emb.
    ad::Tensor encode(ad::Tape& tape, Bindings& b, const ad::Tensor& observations,
                      ad::Index batch, ad::Index length,
                      std::vector<std::vector<ad::Matrix>>* scores = nullptr) const;

    // Per-layer keys and values of the positions encoded so far, each B x d.
    struct KvCache {
        std::vector<std::vector<ad::Tensor>> keys, values;  // [layer][position]
        ad::Index length = 0;
    };

    // Causal incremental encoding: appends observation y (B x 2) at the next
    // position and returns its final state, B x d_emb. Equals the last
    // position of `encode` over the whole history. `score_rows` receives, per
    // layer, B * heads rows of length cache.length.
    ad::Tensor encode_step(ad::Tape& tape, Bindings& b, const ad::Tensor& y, ad::Index batch,
                           KvCache& cache,
                           std::vector<std::vector<ad::Matrix>>* score_rows = nullptr) const;

private:
    TransformerPolicy(const TransformerPolicy&) = default;
    ad::AttentionSpec spec(ad::Index batch, ad::Index length, ad::Index kv_length) const;
};

// Keeps only the heads in `subset` for the given layer by truncating the
// rows of W^o that belong to the other heads. The full set returns the
// parameters unchanged.
void isolate_heads(ParameterSet& params, int layer, const std::vector<int>& subset,
                   int n_heads, int d_head);

// Scores for one episode out of a batched trace.
AttentionTrace slice_trace(const std::vector<std::vector<ad::Matrix>>& batched, ad::Index episode,
                           int n_heads);

}  // namespace prba
