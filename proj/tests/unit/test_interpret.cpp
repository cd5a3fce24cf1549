#include "helpers.hpp"
#include "prba/interpret.hpp"
#include "prba/polarization.hpp"
#include "prba/training.hpp"
#include "prba/transformer.hpp"

using namespace prba;

TEST_CASE("array net response") {
    RVector zero = RVector::Zero(3);
    auto r = array_net_response(zero, 0.0, 0.4);
    auto a = steering_vector(3, 0.4);
    for (int k = 0; k < 3; ++k) {
        CHECK(std::abs(r(k, 0) - a(k)) < 1e-15);
        CHECK(std::abs(r(k, 1)) < 1e-15);
    }
    RVector half = RVector::Constant(2, kHalfPi);
    auto v = array_net_response(half, 0.3, 0.0);
    CHECK(v(0, 0).real() == doctest::Approx(0.23076923076923075));
    CHECK(v(0, 1).real() == doctest::Approx(-0.23076923076923075));
}

TEST_CASE("theta grid") {
    auto g = default_theta_grid();
    CHECK(g.size() == 721);
    CHECK(g.front() == doctest::Approx(-kHalfPi));
    CHECK(g.back() == doctest::Approx(kHalfPi));
    CHECK(g[360] == doctest::Approx(0.0));
    CHECK(g[1] - g[0] == doctest::Approx(kPi / 720));
}

TEST_CASE("matched beamformers peak at the steering angle") {
    auto grid = default_theta_grid();
    RVector angles = RVector::Constant(8, 0.3);
    for (double deg : {-50.0, -12.5, 0.0, 33.0}) {
        const double th = deg * kPi / 180;
        CVector ac = array_net_response(angles, 0.3, th).col(0);
        CVector wt = ac.conjugate() / ac.norm();
        CVector wr = ac / ac.norm();
        auto tx = response_power(wt, angles, 0.3, grid, ResponseSide::transmit);
        auto rx = response_power(wr, angles, 0.3, grid, ResponseSide::receive);
        CHECK(std::abs(tx.argmax_theta - th) <= kPi / 720 + 1e-12);
        CHECK(std::abs(rx.argmax_theta - th) <= kPi / 720 + 1e-12);
        CHECK(tx.power[tx.argmax] == doctest::Approx(ac.squaredNorm()).epsilon(1e-3));
        CHECK(tx.power_db.size() == 721);
    }
}

TEST_CASE("attention export round trip and integrity") {
    AttentionTrace t;
    ad::Matrix s(2, 2);
    s << 1, 0, 0.25, 0.75;
    t.scores = {{s, s}};
    auto j = export_attention(t);
    auto back = parse_attention(j);
    REQUIRE(back.scores.size() == 1);
    REQUIRE(back.scores[0].size() == 2);
    CHECK(back.scores[0][1] == s);
    j["layers"][0]["heads"][0]["rows"][1][0] = 0.5;
    CHECK_THROWS_AS(parse_attention(j), IntegrityError);
}

TEST_CASE("head ablation with every head reproduces plain evaluation") {
    ModelConfig m;
    m.d_emb = 8;
    m.n_heads = 4;
    m.n_layers = 1;
    m.ffn_hidden = 8;
    m.mlp_hidden = 8;
    m.max_stages = 3;
    ChannelConfig cc = testing::small_config(3, 2, 1);
    auto p = ProtocolConfig::from_snr_db(0.0, 3);
    auto pair = make_policy_pair(m, 3, 2, 4);
    auto full = isolate_pair(pair, {0, 1, 2, 3});
    for (std::size_t i = 0; i < pair.tx->parameters().size(); ++i)
        CHECK(full.tx->parameters().entry(i).value == pair.tx->parameters().entry(i).value);

    auto rows = head_ablation_gain(pair, {4, 1}, cc, p, 30, 6, HeadSelection::first);
    auto plain = evaluate_average_gain(*pair.tx, *pair.rx, cc, p, 30, 6);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].head_count == 4);
    CHECK(rows[0].mean_linear == plain.mean_linear.back());
    CHECK(rows[1].heads == std::vector<int>{0});
    CHECK(rows[1].mean_linear != rows[0].mean_linear);

    auto r1 = head_ablation_gain(pair, {2}, cc, p, 10, 6, HeadSelection::random);
    auto r2 = head_ablation_gain(pair, {2}, cc, p, 10, 6, HeadSelection::random);
    CHECK(r1[0].heads == r2[0].heads);
    CHECK(r1[0].heads.size() == 2);
}
