#include "helpers.hpp"
#include "prba/baselines.hpp"
#include "prba/polarization.hpp"
#include "prba/protocol.hpp"
#include "prba/training.hpp"

using namespace prba;

namespace {

ModelConfig tiny(PolicyKind kind, int stages) {
    ModelConfig m;
    m.kind = kind;
    m.d_emb = 8;
    m.n_heads = 2;
    m.n_layers = 1;
    m.ffn_hidden = 8;
    m.mlp_hidden = 8;
    m.gru_hidden = 8;
    m.gru_input = 4;
    m.max_stages = stages;
    return m;
}

StageParams random_params(Rng& rng, int n, Role role) {
    auto [a, w] = random_stage_params(n, rng);
    return StageParams{a, w, role};
}

// Emits an angle above pi/2 for the Rx pilot_receive mapping at stage 1.
class BrokenPolicy : public Policy {
public:
    BrokenPolicy(Side side, int n) : Policy(side, n, tiny(PolicyKind::transformer, 3)) {}
    std::unique_ptr<Policy> clone() const override { return std::make_unique<BrokenPolicy>(side_, n_antennas_); }
    std::unique_ptr<PolicySession> start(const SessionContext& ctx) const override {
        struct S : PolicySession {
            ad::Index batch;
            int n;
            std::size_t seen = 0;
            void observe(const ad::Tensor&) override { ++seen; }
            std::size_t observed() const override { return seen; }
            StageTensors act(Role role) override {
                ad::Matrix a = ad::Matrix::Constant(batch, n, 0.5);
                if (role == Role::pilot_receive && seen == 1) a(0, 0) = 2.0;
                ad::Matrix w = ad::Matrix::Zero(batch, 2 * n);
                w.col(0).setOnes();
                return {ad::Tensor::constant(a), ad::Tensor::constant(w)};
            }
        };
        auto s = std::make_unique<S>();
        s->batch = ctx.batch;
        s->n = n_antennas_;
        return s;
    }
};

}  // namespace

TEST_CASE("protocol config") {
    auto p = ProtocolConfig::from_snr_db(10.0, 4);
    CHECK(p.sigma2_rx == doctest::Approx(0.1));
    CHECK(p.sigma2_tx == doctest::Approx(0.1));
    CHECK(p.snr_db() == doctest::Approx(10.0));
    CHECK(p.n_stages == 4);
    auto back = protocol_config_from_json(to_json(p));
    CHECK(to_json(back) == to_json(p));
    p.n_stages = 0;
    CHECK_THROWS_AS(p.validate(), ValidationError);
}

TEST_CASE("zero-noise pilots are reciprocal") {
    Rng rng(1);
    for (int t = 0; t < 100; ++t) {
        const int nt = 1 + t % 5, nr = 1 + t % 3;
        auto h = testing::random_cmatrix(rng, 2 * nr, 2 * nt);
        auto ptx = random_params(rng, nt, Role::pilot_transmit);
        auto prx = random_params(rng, nr, Role::pilot_receive);
        const cplx down = observe_pilot(h, ptx, prx, 1.0, 0.0, false);
        const cplx up = observe_pilot(h, prx, ptx, 1.0, 0.0, true);
        CHECK(std::abs(up - std::conj(down)) < 1e-12);
    }
}

TEST_CASE("observe_pilot matches the gain formula") {
    Rng rng(2);
    auto h = testing::random_cmatrix(rng, 4, 6);
    auto a = random_params(rng, 3, Role::pilot_transmit);
    auto b = random_params(rng, 2, Role::pilot_receive);
    const cplx y = observe_pilot(h, a, b, 4.0, cplx(0.5, -0.5), false);
    const double g = beamforming_gain(h, a.angles, b.angles, a.beamformer, b.beamformer);
    CHECK(std::norm((y - cplx(0.5, -0.5)) / 2.0) == doctest::Approx(g).epsilon(1e-12));
    CHECK_THROWS_AS(observe_pilot(h, b, a, 1.0, 0.0, false), InvalidArgument);
}

TEST_CASE("noise draws follow the configured variance") {
    auto p = ProtocolConfig::from_snr_db(6.0, 5);
    const int n = 4000;
    CMatrix rx(n, 5), tx(n, 5);
    for (int e = 0; e < n; ++e) draw_noise(p, 9, e, rx, tx, e);
    CHECK(rx.cwiseAbs2().mean() == doctest::Approx(p.sigma2_rx).epsilon(0.03));
    CHECK(tx.cwiseAbs2().mean() == doctest::Approx(p.sigma2_tx).epsilon(0.03));
    p.pilot_noise = false;
    draw_noise(p, 9, 0, rx, tx, 0);
    CHECK(rx.row(0).isZero());
}

TEST_CASE("episode records have consistent lengths") {
    ChannelConfig cc = testing::small_config(3, 2, 2);
    auto p = ProtocolConfig::from_snr_db(0.0, 4);
    auto pair = make_policy_pair(tiny(PolicyKind::transformer, 4), 3, 2, 1);
    auto h = generate_channel(cc, 3).matrix;
    auto r = run_episode(h, *pair.tx, *pair.rx, p, 5, 0);
    CHECK(r.y_rx.size() == 4);
    CHECK(r.y_tx.size() == 4);
    CHECK(r.stages.size() == 4);
    CHECK(r.gains.size() == 4);
    p.skip_final_uplink = true;
    auto s = run_episode(h, *pair.tx, *pair.rx, p, 5, 0);
    CHECK(s.y_tx.size() == 3);
    // only the final Tx downlink loses an observation
    for (int l = 0; l < 3; ++l) CHECK(s.gains[l] == r.gains[l]);
    auto j = to_json(r);
    CHECK(j["stages"].size() == 4);
    auto csv = gains_csv_rows(r, 7);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
    CHECK(csv.rfind("7,0,", 0) == 0);
}

TEST_CASE("recorded stage parameters reproduce the gains") {
    ChannelConfig cc = testing::small_config(3, 2, 1);
    auto p = ProtocolConfig::from_snr_db(0.0, 3);
    for (auto kind : {PolicyKind::transformer, PolicyKind::gru, PolicyKind::nonadaptive}) {
        auto pair = make_policy_pair(tiny(kind, 3), 3, 2, 2);
        auto h = generate_channel(cc, 8).matrix;
        auto r = run_episode(h, *pair.tx, *pair.rx, p, 1, 0);
        for (int l = 0; l < 3; ++l) {
            const auto& st = r.stages[l];
            CHECK(testing::rel_err(beamforming_gain(h, st.tx_downlink.angles, st.rx_downlink.angles,
                                                    st.tx_downlink.beamformer, st.rx_downlink.beamformer),
                                   r.gains[l]) < 1e-10);
        }
    }
}

TEST_CASE("perfect csi returns the ipo gain at every stage") {
    ChannelConfig cc = testing::small_config(4, 3, 2);
    auto p = ProtocolConfig::from_snr_db(0.0, 3);
    ModelConfig m;
    m.kind = PolicyKind::perfect_csi;
    auto pair = make_policy_pair(m, 4, 3, 0);
    for (int t = 0; t < 5; ++t) {
        auto h = generate_channel(cc, 100 + t).matrix;
        auto r = run_episode(h, *pair.tx, *pair.rx, p, 1, 0);
        const double g = ipo_optimize(h).gain;
        for (double x : r.gains) CHECK(testing::rel_err(x, g) < 1e-9);
    }
}

TEST_CASE("batched and single-episode runs agree") {
    ChannelConfig cc = testing::small_config(3, 2, 1);
    auto p = ProtocolConfig::from_snr_db(0.0, 3);
    auto pair = make_policy_pair(tiny(PolicyKind::gru, 3), 3, 2, 6);
    std::vector<CMatrix> hs;
    for (int e = 0; e < 4; ++e) hs.push_back(generate_channel(cc, e).matrix);
    auto batch = batch_from_channels(hs, p, 42);
    auto res = run_batch(*pair.tx, *pair.rx, batch, p);
    for (int e = 0; e < 4; ++e) {
        auto r = run_episode(hs[e], *pair.tx, *pair.rx, p, 42, e);
        for (int l = 0; l < 3; ++l) CHECK(std::abs(res.gains(e, l) - r.gains[l]) < 1e-12);
    }
}

TEST_CASE("loss is the negative mean summed gain") {
    ChannelConfig cc = testing::small_config(3, 2, 1);
    auto p = ProtocolConfig::from_snr_db(0.0, 3);
    auto pair = make_policy_pair(tiny(PolicyKind::transformer, 3), 3, 2, 6);
    auto batch = make_batch(cc, p, 4, 0, 5);
    RunOptions o;
    o.keep_stage_params = true;
    auto res = run_batch(*pair.tx, *pair.rx, batch, p, o);
    CHECK(res.loss.item() == doctest::Approx(-res.gains.sum() / 5).epsilon(1e-12));
    auto recs = records_from(res, batch, p);
    CHECK(episode_loss(recs) == doctest::Approx(res.loss.item()).epsilon(1e-12));
    o.per_stage_mean = true;
    auto res2 = run_batch(*pair.tx, *pair.rx, batch, p, o);
    CHECK(res2.loss.item() == doctest::Approx(res.loss.item() / 3).epsilon(1e-12));
}

TEST_CASE("runs are deterministic and batches are reproducible") {
    ChannelConfig cc = testing::small_config(3, 2, 2);
    auto p = ProtocolConfig::from_snr_db(0.0, 3);
    auto a = make_batch(cc, p, 7, 10, 4);
    auto b = make_batch(cc, p, 7, 10, 4);
    CHECK(a.noise_rx == b.noise_rx);
    CHECK(a.channel_seeds == b.channel_seeds);
    auto s = slice_batch(make_batch(cc, p, 7, 8, 6), 2, 4);
    CHECK(s.noise_tx == a.noise_tx);
    CHECK((*s.channels)[0] == (*a.channels)[0]);
    auto pair = make_policy_pair(tiny(PolicyKind::transformer, 3), 3, 2, 6);
    CHECK(run_batch(*pair.tx, *pair.rx, a, p).gains == run_batch(*pair.tx, *pair.rx, b, p).gains);
}

TEST_CASE("contract violations name the mapping and stage") {
    ChannelConfig cc = testing::small_config(2, 2, 1);
    auto p = ProtocolConfig::from_snr_db(0.0, 3);
    BrokenPolicy tx(Side::tx, 2), rx(Side::rx, 2);
    auto batch = make_batch(cc, p, 1, 0, 2);
    try {
        run_batch(tx, rx, batch, p);
        FAIL("expected a contract violation");
    } catch (const ContractViolation& e) {
        const std::string msg = e.what();
        CHECK(msg.find("rx.pilot_receive") != std::string::npos);
        CHECK(msg.find("stage 1") != std::string::npos);
    }
}
