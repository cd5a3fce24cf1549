#include "prba/baselines.hpp"

#include <cmath>
#include <string>

namespace prba {

namespace {

ad::Matrix sigmoid_values(const ad::Matrix& x) {
    return x.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
}


ad::Matrix paired_row(const CVector& w) {
    ad::Matrix row(1, 2 * w.size());
    for (Eigen::Index k = 0; k < w.size(); ++k) {
        row(0, k) = w(k).real();
        row(0, w.size() + k) = w(k).imag();
    }
    return row;
}

class GruSession : public PolicySession {
public:
    GruSession(const GruPolicy& policy, const SessionContext& ctx) : policy_(policy), ctx_(ctx) {
        h_ = ctx_.tape->broadcast_rows((*ctx_.bindings)["gru.h0"], ctx_.batch);
    }

    void observe(const ad::Tensor& y) override {
        h_ = policy_.step(*ctx_.tape, *ctx_.bindings, h_, policy_.project(*ctx_.tape, *ctx_.bindings, y));
        ++count_;
    }

    StageTensors act(Role role) override {
        const bool literal = policy_.config().literal_sum_beamformer;
        if (count_ == 0)
            return stage0_outputs(*ctx_.tape, *ctx_.bindings, role, ctx_.batch,
                                  policy_.n_antennas(), literal);
        auto o = output_mlp(*ctx_.tape, *ctx_.bindings, std::string("head.") + role_name(role), h_);
        return output_heads(*ctx_.tape, o, policy_.n_antennas(), literal);
    }

    std::size_t observed() const override { return count_; }

private:
    const GruPolicy& policy_;
    SessionContext ctx_;
    ad::Tensor h_;
    std::size_t count_ = 0;
};

class NonAdaptiveSession : public PolicySession {
public:
    NonAdaptiveSession(const NonAdaptivePolicy& policy, const SessionContext& ctx)
        : policy_(policy), ctx_(ctx) {}

    void observe(const ad::Tensor& y) override {
        if (static_cast<int>(history_.size()) >= policy_.n_stages())
            throw InvalidArgument("non-adaptive policy: more than L observations");
        history_.push_back(y);
    }

    StageTensors act(Role role) override {
        ad::Tape& tape = *ctx_.tape;
        Bindings& b = *ctx_.bindings;
        if (role != Role::downlink) {
            const std::string prefix = std::string("pilot.") + role_name(role);
            return {tape.broadcast_rows(b[prefix + ".angles"], ctx_.batch),
                    tape.broadcast_rows(b[prefix + ".beamformer"], ctx_.batch)};
        }
        std::vector<ad::Tensor> parts = history_;
        const auto missing = policy_.n_stages() - static_cast<int>(history_.size());
        if (missing > 0) parts.push_back(ad::Tensor::constant(ad::Matrix::Zero(ctx_.batch, 2 * missing)));
        auto input = tape.concat_cols(parts);
        auto o = output_mlp(tape, b, "head.downlink", input);
        return output_heads(tape, o, policy_.n_antennas(), policy_.config().literal_sum_beamformer);
    }

    std::size_t observed() const override { return history_.size(); }

private:
    const NonAdaptivePolicy& policy_;
    SessionContext ctx_;
    std::vector<ad::Tensor> history_;
};

class PerfectCsiSession : public PolicySession {
public:
    PerfectCsiSession(const PerfectCsiPolicy& policy, const SessionContext& ctx) : ctx_(ctx) {
        if (!ctx.channels || static_cast<ad::Index>(ctx.channels->size()) != ctx.batch)
            throw InvalidArgument("perfect-CSI policy needs the episode channels");
        const ad::Index n = policy.n_antennas();
        ad::Matrix angles(ctx.batch, n);
        ad::Matrix w(ctx.batch, 2 * n);
        for (ad::Index e = 0; e < ctx.batch; ++e) {
            const IpoResult r = ipo_optimize((*ctx.channels)[static_cast<std::size_t>(e)]);
            const bool tx = policy.side() == Side::tx;
            const auto& a = tx ? r.angles_tx : r.angles_rx;
            const auto& v = tx ? r.w_tx : r.w_rx;
            if (a.size() != n) throw InvalidArgument("perfect-CSI policy: antenna count mismatch");
            angles.row(e) = a.transpose();
            w.row(e) = paired_row(v);
        }
        out_ = {ad::Tensor::constant(std::move(angles)), ad::Tensor::constant(std::move(w))};
    }

    void observe(const ad::Tensor&) override { ++count_; }
    StageTensors act(Role) override { return out_; }
    std::size_t observed() const override { return count_; }

private:
    SessionContext ctx_;
    StageTensors out_;
    std::size_t count_ = 0;
};

}  // namespace

ad::Matrix gru_step(const ad::Matrix& h, const ad::Matrix& x, const GruWeights& w) {
    ad::Matrix hx(h.rows(), h.cols() + x.cols());
    hx << h, x;
    ad::Matrix z = sigmoid_values((hx * w.update_w).rowwise() + w.update_b.row(0));
    ad::Matrix r = sigmoid_values((hx * w.reset_w).rowwise() + w.reset_b.row(0));
    ad::Matrix rhx(h.rows(), h.cols() + x.cols());
    rhx << r.cwiseProduct(h), x;
    ad::Matrix c = ((rhx * w.candidate_w).rowwise() + w.candidate_b.row(0))
                       .unaryExpr([](double v) { return std::tanh(v); });
    return h + z.cwiseProduct(c - h);
}

GruPolicy::GruPolicy(Side side, int n_antennas, const ModelConfig& config, Rng& rng)
    : Policy(side, n_antennas, config) {
    const int hs = config_.gru_hidden;
    const int xs = config_.gru_input;
    params_.add("input.weight", init_uniform(rng, 2, xs, 2));
    params_.add("input.bias", init_uniform(rng, 1, xs, 2));
    for (const char* gate : {"update", "reset", "candidate"}) {
        const std::string g = std::string("gru.") + gate;
        params_.add(g + ".weight", init_uniform(rng, hs + xs, hs, hs));
        params_.add(g + ".bias", init_uniform(rng, 1, hs, hs));
    }
    params_.add("gru.h0", ad::Matrix::Zero(1, hs));
    for (Role role : kRoles)
        add_output_mlp(params_, std::string("head.") + role_name(role), hs, config_.mlp_hidden,
                       n_antennas, rng);
    add_stage0_parameters(params_, n_antennas, rng);
}

std::unique_ptr<PolicySession> GruPolicy::start(const SessionContext& ctx) const {
    return std::make_unique<GruSession>(*this, ctx);
}

std::unique_ptr<Policy> GruPolicy::clone() const { return std::unique_ptr<Policy>(new GruPolicy(*this)); }

GruWeights GruPolicy::weights() const {
    return {params_.get("gru.update.weight"),    params_.get("gru.update.bias"),
            params_.get("gru.reset.weight"),     params_.get("gru.reset.bias"),
            params_.get("gru.candidate.weight"), params_.get("gru.candidate.bias")};
}

ad::Tensor GruPolicy::project(ad::Tape& tape, Bindings& b, const ad::Tensor& y) const {
    return tape.relu(tape.affine(y, b["input.weight"], b["input.bias"]));
}

ad::Tensor GruPolicy::step(ad::Tape& tape, Bindings& b, const ad::Tensor& h,
                           const ad::Tensor& x) const {
    const ad::Tensor hx_parts[] = {h, x};
    auto hx = tape.concat_cols(hx_parts);
    auto z = tape.sigmoid(tape.affine(hx, b["gru.update.weight"], b["gru.update.bias"]));
    auto r = tape.sigmoid(tape.affine(hx, b["gru.reset.weight"], b["gru.reset.bias"]));
    const ad::Tensor rhx_parts[] = {tape.mul(r, h), x};
    auto c = tape.tanh(tape.affine(tape.concat_cols(rhx_parts), b["gru.candidate.weight"],
                                   b["gru.candidate.bias"]));
    return tape.add(h, tape.mul(z, tape.sub(c, h)));
}

NonAdaptivePolicy::NonAdaptivePolicy(Side side, int n_antennas, const ModelConfig& config, Rng& rng)
    : Policy(side, n_antennas, config) {
    for (Role role : {Role::pilot_transmit, Role::pilot_receive}) {
        auto [angles, w] = random_stage_params(n_antennas, rng);
        const std::string prefix = std::string("pilot.") + role_name(role);
        params_.add(prefix + ".angles", ad::Matrix(angles.transpose()), false);
        params_.add(prefix + ".beamformer", paired_row(w), false);
    }
    add_output_mlp(params_, "head.downlink", 2 * config_.max_stages, config_.mlp_hidden, n_antennas,
                   rng);
}

std::unique_ptr<PolicySession> NonAdaptivePolicy::start(const SessionContext& ctx) const {
    return std::make_unique<NonAdaptiveSession>(*this, ctx);
}

std::unique_ptr<Policy> NonAdaptivePolicy::clone() const {
    return std::unique_ptr<Policy>(new NonAdaptivePolicy(*this));
}

std::pair<PolarizationAngles, CVector> NonAdaptivePolicy::downlink(
    const std::vector<cplx>& observations) const {
    if (static_cast<int>(observations.size()) != n_stages())
        throw InvalidArgument("non-adaptive downlink needs exactly L = " +
                              std::to_string(n_stages()) + " observations, got " +
                              std::to_string(observations.size()));
    ad::Matrix flat(1, 2 * n_stages());
    for (std::size_t i = 0; i < observations.size(); ++i) {
        flat(0, static_cast<ad::Index>(2 * i)) = observations[i].real();
        flat(0, static_cast<ad::Index>(2 * i + 1)) = observations[i].imag();
    }
    ad::Tape tape(false);
    Bindings b(params_, false);
    auto o = output_mlp(tape, b, "head.downlink", ad::Tensor::constant(flat));
    auto st = output_heads(tape, o, n_antennas_, config_.literal_sum_beamformer);
    const ad::Index n = n_antennas_;
    PolarizationAngles angles = st.angles.value().row(0).transpose();
    CVector w(n);
    for (ad::Index k = 0; k < n; ++k)
        w(k) = cplx(st.beamformer.value()(0, k), st.beamformer.value()(0, n + k));
    return {angles, w};
}

PerfectCsiPolicy::PerfectCsiPolicy(Side side, int n_antennas, const ModelConfig& config)
    : Policy(side, n_antennas, [&] {
          ModelConfig c = config;
          c.kind = PolicyKind::perfect_csi;
          return c;
      }()) {}

std::unique_ptr<PolicySession> PerfectCsiPolicy::start(const SessionContext& ctx) const {
    return std::make_unique<PerfectCsiSession>(*this, ctx);
}

std::unique_ptr<Policy> PerfectCsiPolicy::clone() const {
    return std::make_unique<PerfectCsiPolicy>(side_, n_antennas_, config_);
}

}  // namespace prba
