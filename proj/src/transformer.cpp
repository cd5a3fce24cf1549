#include "prba/transformer.hpp"

#include <cmath>
#include <set>
#include <string>

namespace prba {

namespace {

std::string layer_key(int i, const char* rest) { return "layer" + std::to_string(i) + "." + rest; }

class TransformerSession : public PolicySession {
public:
    TransformerSession(const TransformerPolicy& policy, const SessionContext& ctx)
        : policy_(policy), ctx_(ctx) {}

    void observe(const ad::Tensor& y) override {
        if (static_cast<int>(history_.size()) >= policy_.config().max_stages + 1)
            throw InvalidArgument("transformer: more observations than max_stages");
        history_.push_back(y);
    }

    StageTensors act(Role role) override {
        ad::Tape& tape = *ctx_.tape;
        const bool literal = policy_.config().literal_sum_beamformer;
        if (history_.empty())
            return stage0_outputs(tape, *ctx_.bindings, role, ctx_.batch, policy_.n_antennas(),
                                  literal);
        if (cached_len_ != history_.size()) {
            if (policy_.config().causal_mask)
                extend();
            else
                recompute();
            cached_len_ = history_.size();
        }
        auto o = output_mlp(tape, *ctx_.bindings, std::string("head.") + role_name(role), state_);
        return output_heads(tape, o, policy_.n_antennas(), literal);
    }

    std::size_t observed() const override { return history_.size(); }
    const std::vector<std::vector<ad::Matrix>>& attention() const override { return scores_; }

private:
    void recompute() {
        auto obs = ctx_.tape->stack_sequence(history_);
        scores_.clear();
        state_ = policy_.forward(*ctx_.tape, *ctx_.bindings, obs, ctx_.batch,
                                 static_cast<ad::Index>(history_.size()),
                                 ctx_.trace_attention ? &scores_ : nullptr);
    }

    void extend() {
        const bool trace = ctx_.trace_attention;
        while (cache_.length < static_cast<ad::Index>(history_.size())) {
            std::vector<std::vector<ad::Matrix>> rows;
            state_ = policy_.encode_step(*ctx_.tape, *ctx_.bindings,
                                         history_[static_cast<std::size_t>(cache_.length)],
                                         ctx_.batch, cache_, trace ? &rows : nullptr);
            if (trace) rows_.push_back(std::move(rows));
        }
        if (!trace) return;
        // Causal rows of every step laid out as l x l matrices.
        const ad::Index len = cache_.length;
        scores_.assign(rows_.front().size(), {});
        for (std::size_t layer = 0; layer < scores_.size(); ++layer) {
            const std::size_t count = rows_.front()[layer].size();
            scores_[layer].assign(count, ad::Matrix::Zero(len, len));
            for (ad::Index t = 0; t < len; ++t)
                for (std::size_t bh = 0; bh < count; ++bh)
                    scores_[layer][bh].row(t).head(t + 1) =
                        rows_[static_cast<std::size_t>(t)][layer][bh];
        }
    }

    const TransformerPolicy& policy_;
    SessionContext ctx_;
    std::vector<ad::Tensor> history_;
    std::size_t cached_len_ = 0;
    ad::Tensor state_;
    TransformerPolicy::KvCache cache_;
    std::vector<std::vector<std::vector<ad::Matrix>>> rows_;  // [step][layer][b * heads + h]
    std::vector<std::vector<ad::Matrix>> scores_;
};

}  // namespace

ad::Matrix embed_pilot(cplx y, const ad::Matrix& weight, const ad::Matrix& bias) {
    const ad::Index half = weight.cols();
    ad::Matrix out(1, 2 * half);
    out.leftCols(half) = y.real() * weight + bias;
    out.rightCols(half) = y.imag() * weight + bias;
    return out;
}

ad::Matrix positional_encoding(int pos, int d_emb) {
    if (pos < 0) throw InvalidArgument("positional encoding needs pos >= 0");
    ad::Matrix pe(1, d_emb);
    for (int j = 0; j < d_emb; ++j) {
        const int i2 = j - (j % 2);
        const double angle = pos / std::pow(10000.0, static_cast<double>(i2) / d_emb);
        pe(0, j) = (j % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
    return pe;
}

TransformerPolicy::TransformerPolicy(Side side, int n_antennas, const ModelConfig& config, Rng& rng)
    : Policy(side, n_antennas, config) {
    const int d = config_.d_emb;
    const int inner = config_.n_heads * config_.d_head();
    params_.add("embed.weight", init_uniform(rng, 1, d / 2, 1));
    params_.add("embed.bias", init_uniform(rng, 1, d / 2, 1));
    for (int i = 0; i < config_.n_layers; ++i) {
        params_.add(layer_key(i, "attn.wq"), init_uniform(rng, d, inner, d));
        params_.add(layer_key(i, "attn.wk"), init_uniform(rng, d, inner, d));
        params_.add(layer_key(i, "attn.wv"), init_uniform(rng, d, inner, d));
        params_.add(layer_key(i, "attn.wo"), init_uniform(rng, inner, d, inner));
        params_.add(layer_key(i, "ln1.gamma"), ad::Matrix::Ones(1, d));
        params_.add(layer_key(i, "ln1.beta"), ad::Matrix::Zero(1, d));
        params_.add(layer_key(i, "ffn.w1"), init_uniform(rng, d, config_.ffn_hidden, d));
        params_.add(layer_key(i, "ffn.b1"), init_uniform(rng, 1, config_.ffn_hidden, d));
        params_.add(layer_key(i, "ffn.w2"),
                    init_uniform(rng, config_.ffn_hidden, d, config_.ffn_hidden));
        params_.add(layer_key(i, "ffn.b2"), init_uniform(rng, 1, d, config_.ffn_hidden));
        params_.add(layer_key(i, "ln2.gamma"), ad::Matrix::Ones(1, d));
        params_.add(layer_key(i, "ln2.beta"), ad::Matrix::Zero(1, d));
    }
    for (Role role : kRoles)
        add_output_mlp(params_, std::string("head.") + role_name(role), d, config_.mlp_hidden,
                       n_antennas, rng);
    add_stage0_parameters(params_, n_antennas, rng);
}

std::unique_ptr<PolicySession> TransformerPolicy::start(const SessionContext& ctx) const {
    return std::make_unique<TransformerSession>(*this, ctx);
}

std::unique_ptr<Policy> TransformerPolicy::clone() const {
    return std::unique_ptr<Policy>(new TransformerPolicy(*this));
}

double TransformerPolicy::attention_scale() const {
    return config_.attention_scale == AttentionScale::sqrt_d_emb
               ? std::sqrt(static_cast<double>(config_.d_emb))
               : std::sqrt(static_cast<double>(config_.d_head()));
}

ad::Tensor TransformerPolicy::encode(ad::Tape& tape, Bindings& b, const ad::Tensor& observations,
                                     ad::Index batch, ad::Index length,
                                     std::vector<std::vector<ad::Matrix>>* scores) const {
    const int d = config_.d_emb;
    if (observations.rows() != batch * length || observations.cols() != 2)
        throw InvalidArgument("transformer: observations must be (B l) x 2");

    const auto& w = b["embed.weight"];
    const auto& bias = b["embed.bias"];
    const ad::Tensor halves[] = {tape.affine(tape.take_cols(observations, {0}), w, bias),
                                 tape.affine(tape.take_cols(observations, {1}), w, bias)};
    ad::Matrix pe(batch * length, d);
    for (ad::Index t = 0; t < length; ++t) {
        const ad::Matrix row = positional_encoding(static_cast<int>(t), d);
        for (ad::Index e = 0; e < batch; ++e) pe.row(e * length + t) = row;
    }
    auto x = tape.add(tape.concat_cols(halves), ad::Tensor::constant(std::move(pe)));

    const ad::AttentionSpec attn_spec = spec(batch, length, length);

    for (int i = 0; i < config_.n_layers; ++i) {
        auto q = tape.matmul(x, b[layer_key(i, "attn.wq")]);
        auto k = tape.matmul(x, b[layer_key(i, "attn.wk")]);
        auto v = tape.matmul(x, b[layer_key(i, "attn.wv")]);
        std::vector<ad::Matrix> layer_scores;
        auto heads = tape.attention(q, k, v, attn_spec, scores ? &layer_scores : nullptr);
        if (scores) scores->push_back(std::move(layer_scores));
        auto attn = tape.matmul(heads, b[layer_key(i, "attn.wo")]);
        x = tape.layer_norm(tape.add(x, attn), b[layer_key(i, "ln1.gamma")],
                            b[layer_key(i, "ln1.beta")]);
        auto f = tape.relu(tape.affine(x, b[layer_key(i, "ffn.w1")], b[layer_key(i, "ffn.b1")]));
        f = tape.affine(f, b[layer_key(i, "ffn.w2")], b[layer_key(i, "ffn.b2")]);
        x = tape.layer_norm(tape.add(x, f), b[layer_key(i, "ln2.gamma")],
                            b[layer_key(i, "ln2.beta")]);
    }
    return x;
}

ad::AttentionSpec TransformerPolicy::spec(ad::Index batch, ad::Index length,
                                         ad::Index kv_length) const {
    ad::AttentionSpec spec;
    spec.batch = batch;
    spec.length = length;
    spec.kv_length = kv_length;
    spec.heads = config_.n_heads;
    spec.head_dim = config_.d_head();
    spec.scale = attention_scale();
    spec.causal = config_.causal_mask;
    return spec;
}

ad::Tensor TransformerPolicy::encode_step(ad::Tape& tape, Bindings& b, const ad::Tensor& y,
                                          ad::Index batch, KvCache& cache,
                                          std::vector<std::vector<ad::Matrix>>* score_rows) const {
    if (!config_.causal_mask) throw InvalidArgument("transformer: encode_step needs the causal mask");
    if (y.rows() != batch || y.cols() != 2)
        throw InvalidArgument("transformer: observation must be B x 2");
    const int d = config_.d_emb;
    const auto& w = b["embed.weight"];
    const auto& bias = b["embed.bias"];
    const ad::Tensor halves[] = {tape.affine(tape.take_cols(y, {0}), w, bias),
                                 tape.affine(tape.take_cols(y, {1}), w, bias)};
    const ad::Matrix pe = positional_encoding(static_cast<int>(cache.length), d);
    auto x = tape.add(tape.concat_cols(halves), ad::Tensor::constant(pe));

    cache.keys.resize(static_cast<std::size_t>(config_.n_layers));
    cache.values.resize(static_cast<std::size_t>(config_.n_layers));
    const ad::Index kv_length = cache.length + 1;
    const ad::AttentionSpec attn_spec = spec(batch, 1, kv_length);
    for (int i = 0; i < config_.n_layers; ++i) {
        auto& keys = cache.keys[static_cast<std::size_t>(i)];
        auto& values = cache.values[static_cast<std::size_t>(i)];
        auto q = tape.matmul(x, b[layer_key(i, "attn.wq")]);
        keys.push_back(tape.matmul(x, b[layer_key(i, "attn.wk")]));
        values.push_back(tape.matmul(x, b[layer_key(i, "attn.wv")]));
        auto k = keys.size() == 1 ? keys.front() : tape.stack_sequence(keys);
        auto v = values.size() == 1 ? values.front() : tape.stack_sequence(values);
        std::vector<ad::Matrix> rows;
        auto heads = tape.attention(q, k, v, attn_spec, score_rows ? &rows : nullptr);
        if (score_rows) score_rows->push_back(std::move(rows));
        auto attn = tape.matmul(heads, b[layer_key(i, "attn.wo")]);
        x = tape.layer_norm(tape.add(x, attn), b[layer_key(i, "ln1.gamma")],
                            b[layer_key(i, "ln1.beta")]);
        auto f = tape.relu(tape.affine(x, b[layer_key(i, "ffn.w1")], b[layer_key(i, "ffn.b1")]));
        f = tape.affine(f, b[layer_key(i, "ffn.w2")], b[layer_key(i, "ffn.b2")]);
        x = tape.layer_norm(tape.add(x, f), b[layer_key(i, "ln2.gamma")],
                            b[layer_key(i, "ln2.beta")]);
    }
    cache.length = kv_length;
    return x;
}

ad::Tensor TransformerPolicy::forward(ad::Tape& tape, Bindings& b, const ad::Tensor& observations,
                                      ad::Index batch, ad::Index length,
                                      std::vector<std::vector<ad::Matrix>>* scores) const {
    auto x = encode(tape, b, observations, batch, length, scores);
    std::vector<ad::Index> last(static_cast<std::size_t>(batch));
    for (ad::Index e = 0; e < batch; ++e) last[static_cast<std::size_t>(e)] = e * length + length - 1;
    return tape.take_rows(x, std::move(last));
}

void isolate_heads(ParameterSet& params, int layer, const std::vector<int>& subset, int n_heads,
                   int d_head) {
    if (subset.empty()) throw InvalidArgument("isolate_heads: empty head subset");
    std::set<int> keep;
    for (int h : subset) {
        if (h < 0 || h >= n_heads)
            throw InvalidArgument("isolate_heads: head index " + std::to_string(h) +
                                  " out of range");
        keep.insert(h);
    }
    if (static_cast<int>(keep.size()) == n_heads) return;
    ad::Matrix& wo = params.get_mutable(layer_key(layer, "attn.wo"));
    for (int h = 0; h < n_heads; ++h)
        if (!keep.count(h)) wo.middleRows(static_cast<ad::Index>(h) * d_head, d_head).setZero();
}

AttentionTrace slice_trace(const std::vector<std::vector<ad::Matrix>>& batched, ad::Index episode,
                           int n_heads) {
    AttentionTrace trace;
    for (const auto& layer : batched) {
        std::vector<ad::Matrix> heads;
        for (int h = 0; h < n_heads; ++h)
            heads.push_back(layer.at(static_cast<std::size_t>(episode * n_heads + h)));
        trace.scores.push_back(std::move(heads));
    }
    return trace;
}

}  // namespace prba
