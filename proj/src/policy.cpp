#include "prba/policy.hpp"

#include <cmath>

#include "prba/baselines.hpp"
#include "prba/transformer.hpp"

namespace prba {

const char* side_name(Side side) { return side == Side::tx ? "tx" : "rx"; }

const char* role_name(Role role) {
    switch (role) {
        case Role::pilot_transmit: return "pilot_transmit";
        case Role::pilot_receive: return "pilot_receive";
        case Role::downlink: return "downlink";
    }
    return "unknown";
}

const char* policy_kind_name(PolicyKind kind) {
    switch (kind) {
        case PolicyKind::transformer: return "transformer";
        case PolicyKind::gru: return "gru";
        case PolicyKind::nonadaptive: return "nonadaptive";
        case PolicyKind::perfect_csi: return "perfect-csi";
    }
    return "unknown";
}

PolicyKind policy_kind_from_name(const std::string& name) {
    if (name == "transformer") return PolicyKind::transformer;
    if (name == "gru") return PolicyKind::gru;
    if (name == "nonadaptive" || name == "non-adaptive") return PolicyKind::nonadaptive;
    if (name == "perfect-csi" || name == "perfect_csi") return PolicyKind::perfect_csi;
    throw InvalidArgument("unknown policy kind '" + name + "'");
}

void ModelConfig::validate() const {
    auto positive = [](int v, const char* name) {
        if (v < 1) throw ValidationError(std::string("model.") + name + " must be >= 1");
    };
    positive(d_emb, "d_emb");
    positive(n_heads, "n_heads");
    positive(n_layers, "n_layers");
    positive(ffn_hidden, "ffn_hidden");
    positive(mlp_hidden, "mlp_hidden");
    positive(gru_hidden, "gru_hidden");
    positive(gru_input, "gru_input");
    positive(max_stages, "max_stages");
    if (d_emb % 2 != 0) throw ValidationError("model.d_emb must be even");
    if (d_emb % n_heads != 0)
        throw ValidationError("model.d_emb must be divisible by model.n_heads");
}

Json to_json(const ModelConfig& c) {
    return Json{{"kind", policy_kind_name(c.kind)},
                {"d_emb", c.d_emb},
                {"n_heads", c.n_heads},
                {"n_layers", c.n_layers},
                {"ffn_hidden", c.ffn_hidden},
                {"mlp_hidden", c.mlp_hidden},
                {"gru_hidden", c.gru_hidden},
                {"gru_input", c.gru_input},
                {"max_stages", c.max_stages},
                {"attention_scale",
                 c.attention_scale == AttentionScale::sqrt_d_emb ? "sqrt_d_emb" : "sqrt_d_head"},
                {"causal_mask", c.causal_mask},
                {"literal_sum_beamformer", c.literal_sum_beamformer}};
}

ModelConfig model_config_from_json(const Json& j) {
    ModelConfig c;
    c.kind = policy_kind_from_name(j.at("kind").get<std::string>());
    c.d_emb = j.at("d_emb").get<int>();
    c.n_heads = j.at("n_heads").get<int>();
    c.n_layers = j.at("n_layers").get<int>();
    c.ffn_hidden = j.at("ffn_hidden").get<int>();
    c.mlp_hidden = j.at("mlp_hidden").get<int>();
    c.gru_hidden = j.at("gru_hidden").get<int>();
    c.gru_input = j.at("gru_input").get<int>();
    c.max_stages = j.at("max_stages").get<int>();
    c.attention_scale = j.at("attention_scale").get<std::string>() == "sqrt_d_head"
                            ? AttentionScale::sqrt_d_head
                            : AttentionScale::sqrt_d_emb;
    c.causal_mask = j.at("causal_mask").get<bool>();
    c.literal_sum_beamformer = j.at("literal_sum_beamformer").get<bool>();
    return c;
}

const std::vector<std::vector<ad::Matrix>>& PolicySession::attention() const {
    static const std::vector<std::vector<ad::Matrix>> none;
    return none;
}

Policy::Policy(Side side, int n_antennas, ModelConfig config)
    : side_(side), n_antennas_(n_antennas), config_(std::move(config)) {
    if (n_antennas < 1) throw InvalidArgument("policy needs at least one antenna");
    config_.validate();
}

std::unique_ptr<Policy> make_policy(const ModelConfig& config, Side side, int n_antennas,
                                    std::uint64_t seed) {
    Rng rng = make_rng(seed, Stream::init, side == Side::tx ? 0 : 1);
    switch (config.kind) {
        case PolicyKind::transformer:
            return std::make_unique<TransformerPolicy>(side, n_antennas, config, rng);
        case PolicyKind::gru: return std::make_unique<GruPolicy>(side, n_antennas, config, rng);
        case PolicyKind::nonadaptive:
            return std::make_unique<NonAdaptivePolicy>(side, n_antennas, config, rng);
        case PolicyKind::perfect_csi:
            return std::make_unique<PerfectCsiPolicy>(side, n_antennas, config);
    }
    throw InvalidArgument("unknown policy kind");
}

PolicyPair make_policy_pair(const ModelConfig& config, int n_tx, int n_rx, std::uint64_t seed) {
    return {make_policy(config, Side::tx, n_tx, seed), make_policy(config, Side::rx, n_rx, seed)};
}

PolicyPair clone_pair(const PolicyPair& pair) { return {pair.tx->clone(), pair.rx->clone()}; }

StageTensors output_heads(ad::Tape& tape, const ad::Tensor& o, int n_antennas, bool literal_sum) {
    const ad::Index n = n_antennas;
    if (o.cols() != 3 * n)
        throw InvalidArgument("output head expects 3N = " + std::to_string(3 * n) + " columns");
    StageTensors out;
    out.angles = tape.scale(tape.sigmoid(tape.slice_cols(o, 0, n)), kHalfPi);
    if (literal_sum) {
        auto summed = tape.l2_normalize_rows(
            tape.add(tape.slice_cols(o, n, 2 * n), tape.slice_cols(o, 2 * n, 3 * n)));
        const ad::Tensor parts[] = {summed, ad::Tensor::constant(ad::Matrix::Zero(o.rows(), n))};
        out.beamformer = tape.concat_cols(parts);
    } else {
        out.beamformer = tape.l2_normalize_rows(tape.slice_cols(o, n, 3 * n));
    }
    return out;
}

void add_stage0_parameters(ParameterSet& params, int n_antennas, Rng& rng) {
    for (Role role : kRoles) {
        const std::string prefix = std::string("init.") + role_name(role);
        params.add(prefix + ".angle_logits", init_normal(rng, 1, n_antennas, 1.0));
        params.add(prefix + ".beamformer", init_normal(rng, 1, 2 * n_antennas, 1.0));
    }
}

StageTensors stage0_outputs(ad::Tape& tape, Bindings& b, Role role, ad::Index batch,
                            int n_antennas, bool literal_sum) {
    const std::string prefix = std::string("init.") + role_name(role);
    // Same post-processing as the learned heads applied to [logits | beamformer].
    const ad::Tensor row[] = {b[prefix + ".angle_logits"], b[prefix + ".beamformer"]};
    if (literal_sum) {
        auto o = tape.broadcast_rows(tape.concat_cols(row), batch);
        StageTensors out;
        out.angles = tape.scale(tape.sigmoid(tape.slice_cols(o, 0, n_antennas)), kHalfPi);
        auto v = tape.l2_normalize_rows(tape.slice_cols(o, n_antennas, 2 * n_antennas));
        const ad::Tensor parts[] = {v, ad::Tensor::constant(ad::Matrix::Zero(batch, n_antennas))};
        out.beamformer = tape.concat_cols(parts);
        return out;
    }
    return output_heads(tape, tape.broadcast_rows(tape.concat_cols(row), batch), n_antennas);
}

void add_output_mlp(ParameterSet& params, const std::string& prefix, int d_in, int hidden,
                    int n_antennas, Rng& rng) {
    params.add(prefix + ".l0.weight", init_uniform(rng, d_in, hidden, d_in));
    params.add(prefix + ".l0.bias", init_uniform(rng, 1, hidden, d_in));
    params.add(prefix + ".ln0.gamma", ad::Matrix::Ones(1, hidden));
    params.add(prefix + ".ln0.beta", ad::Matrix::Zero(1, hidden));
    params.add(prefix + ".l1.weight", init_uniform(rng, hidden, hidden, hidden));
    params.add(prefix + ".l1.bias", init_uniform(rng, 1, hidden, hidden));
    params.add(prefix + ".ln1.gamma", ad::Matrix::Ones(1, hidden));
    params.add(prefix + ".ln1.beta", ad::Matrix::Zero(1, hidden));
    params.add(prefix + ".l2.weight", init_uniform(rng, hidden, 3 * n_antennas, hidden));
    params.add(prefix + ".l2.bias", init_uniform(rng, 1, 3 * n_antennas, hidden));
}

ad::Tensor output_mlp(ad::Tape& tape, Bindings& b, const std::string& prefix,
                      const ad::Tensor& x) {
    auto h = tape.relu(tape.affine(x, b[prefix + ".l0.weight"], b[prefix + ".l0.bias"]));
    h = tape.layer_norm(h, b[prefix + ".ln0.gamma"], b[prefix + ".ln0.beta"]);
    h = tape.relu(tape.affine(h, b[prefix + ".l1.weight"], b[prefix + ".l1.bias"]));
    h = tape.layer_norm(h, b[prefix + ".ln1.gamma"], b[prefix + ".ln1.beta"]);
    return tape.affine(h, b[prefix + ".l2.weight"], b[prefix + ".l2.bias"]);
}

std::pair<PolarizationAngles, CVector> random_stage_params(int n_antennas, Rng& rng) {
    PolarizationAngles angles(n_antennas);
    for (int k = 0; k < n_antennas; ++k) angles(k) = uniform(rng, 0.0, kHalfPi);
    CVector w(n_antennas);
    for (int k = 0; k < n_antennas; ++k) w(k) = complex_normal(rng);
    w /= w.norm();
    return {angles, w};
}

}  // namespace prba
