#include "../support/episode_fd.hpp"
#include "helpers.hpp"
#include "prba/baselines.hpp"
#include "prba/transformer.hpp"

using namespace prba;
using ad::Matrix;
using ad::Tensor;

namespace {

ModelConfig small_model(PolicyKind kind) {
    ModelConfig m;
    m.kind = kind;
    m.d_emb = 16;
    m.n_heads = 4;
    m.n_layers = 2;
    m.ffn_hidden = 24;
    m.mlp_hidden = 16;
    m.gru_hidden = 12;
    m.gru_input = 6;
    m.max_stages = 4;
    return m;
}

Tensor random_obs(Rng& rng, ad::Index rows) {
    Matrix y(rows, 2);
    for (ad::Index i = 0; i < y.size(); ++i) y.data()[i] = uniform(rng, -2, 2);
    return Tensor::constant(y);
}

}  // namespace

TEST_CASE("pilot embedding and positional encoding") {
    Matrix w(1, 2), b(1, 2);
    w << 1, -1;
    b << 0.5, 0;
    auto e = embed_pilot(cplx(1, 2), w, b);
    REQUIRE(e.cols() == 4);
    CHECK(e(0, 0) == 1.5);
    CHECK(e(0, 1) == -1.0);
    CHECK(e(0, 2) == 2.5);
    CHECK(e(0, 3) == -2.0);

    auto p0 = positional_encoding(0, 4);
    CHECK(p0(0, 0) == 0.0);
    CHECK(p0(0, 1) == 1.0);
    CHECK(p0(0, 2) == 0.0);
    CHECK(p0(0, 3) == 1.0);
    auto p1 = positional_encoding(1, 4);
    CHECK(p1(0, 0) == doctest::Approx(std::sin(1.0)));
    CHECK(p1(0, 1) == doctest::Approx(std::cos(1.0)));
    CHECK(p1(0, 2) == doctest::Approx(std::sin(0.01)));
    CHECK(p1(0, 3) == doctest::Approx(std::cos(0.01)));
}

TEST_CASE("model config validation and round trip") {
    ModelConfig m = small_model(PolicyKind::transformer);
    CHECK_NOTHROW(m.validate());
    auto back = model_config_from_json(to_json(m));
    CHECK(to_json(back) == to_json(m));
    m.n_heads = 3;
    CHECK_THROWS_AS(m.validate(), ValidationError);
    CHECK(policy_kind_from_name("gru") == PolicyKind::gru);
    CHECK(policy_kind_from_name("perfect-csi") == PolicyKind::perfect_csi);
    CHECK_THROWS_AS(policy_kind_from_name("lstm"), Error);
}

TEST_CASE("output heads enforce the contracts") {
    ad::Tape t;
    Rng rng(3);
    Matrix o(50, 12);
    for (ad::Index i = 0; i < o.size(); ++i) o.data()[i] = uniform(rng, -40, 40);
    auto s = output_heads(t, Tensor::constant(o), 4);
    REQUIRE(s.angles.rows() == 50);
    REQUIRE(s.angles.cols() == 4);
    REQUIRE(s.beamformer.cols() == 8);
    CHECK(s.angles.value().minCoeff() >= 0.0);
    CHECK(s.angles.value().maxCoeff() <= kHalfPi);
    for (ad::Index r = 0; r < 50; ++r) CHECK(std::abs(s.beamformer.value().row(r).norm() - 1.0) < 1e-12);

    Matrix z = Matrix::Zero(1, 6);
    auto zs = output_heads(t, Tensor::constant(z), 2);
    CHECK(zs.angles.value()(0, 0) == doctest::Approx(kPi / 4));
    CHECK(zs.beamformer.value()(0, 0) == 1.0);

    Matrix q(1, 6);
    q << 0, 0, 1, 2, 3, 4;
    auto paired = output_heads(t, Tensor::constant(q), 2);
    const double n = std::sqrt(30.0);
    CHECK(paired.beamformer.value()(0, 0) == doctest::Approx(1 / n));
    CHECK(paired.beamformer.value()(0, 3) == doctest::Approx(4 / n));
    auto literal = output_heads(t, Tensor::constant(q), 2, true);
    CHECK(literal.beamformer.value()(0, 0) == doctest::Approx(4 / std::sqrt(52.0)));
    CHECK(literal.beamformer.value()(0, 2) == 0.0);
}

TEST_CASE("transformer encode is causal and prefix stable") {
    auto pol = make_policy(small_model(PolicyKind::transformer), Side::tx, 3, 5);
    auto& tf = dynamic_cast<TransformerPolicy&>(*pol);
    Rng rng(9);
    const ad::Index B = 2, L = 4;
    auto obs = random_obs(rng, B * L);
    ad::Tape t;
    Bindings b(tf.parameters(), false);
    std::vector<std::vector<Matrix>> scores;
    auto full = tf.encode(t, b, obs, B, L, &scores).value();
    REQUIRE(scores.size() == 2);
    for (const auto& layer : scores) {
        REQUIRE(layer.size() == static_cast<std::size_t>(B * 4));
        for (const auto& s : layer)
            for (ad::Index i = 0; i < L; ++i) {
                CHECK(std::abs(s.row(i).sum() - 1.0) < 1e-12);
                for (ad::Index j = i + 1; j < L; ++j) CHECK(s(i, j) == 0.0);
            }
    }
    for (ad::Index l = 1; l <= L; ++l) {
        std::vector<ad::Index> rows;
        for (ad::Index e = 0; e < B; ++e)
            for (ad::Index p = 0; p < l; ++p) rows.push_back(e * L + p);
        auto prefix = t.take_rows(obs, rows);
        auto last = tf.forward(t, b, prefix, B, l).value();
        for (ad::Index e = 0; e < B; ++e)
            CHECK((last.row(e) - full.row(e * L + l - 1)).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("cached step encoding matches the full encode") {
    auto pol = make_policy(small_model(PolicyKind::transformer), Side::tx, 3, 5);
    auto& tf = dynamic_cast<TransformerPolicy&>(*pol);
    Rng rng(10);
    const ad::Index B = 3, L = 5;
    auto obs = random_obs(rng, B * L);
    ad::Tape t;
    Bindings b(tf.parameters(), false);
    std::vector<std::vector<Matrix>> scores;
    auto full = tf.encode(t, b, obs, B, L, &scores).value();
    TransformerPolicy::KvCache cache;
    for (ad::Index l = 0; l < L; ++l) {
        std::vector<ad::Index> rows;
        for (ad::Index e = 0; e < B; ++e) rows.push_back(e * L + l);
        std::vector<std::vector<Matrix>> step_rows;
        auto state = tf.encode_step(t, b, t.take_rows(obs, rows), B, cache, &step_rows).value();
        CHECK(cache.length == l + 1);
        for (ad::Index e = 0; e < B; ++e)
            CHECK((state.row(e) - full.row(e * L + l)).cwiseAbs().maxCoeff() < 1e-12);
        for (std::size_t layer = 0; layer < step_rows.size(); ++layer)
            for (std::size_t bh = 0; bh < step_rows[layer].size(); ++bh)
                CHECK((step_rows[layer][bh].row(0) - scores[layer][bh].row(l).head(l + 1))
                          .cwiseAbs()
                          .maxCoeff() < 1e-12);
    }
}

TEST_CASE("attention scale options") {
    auto m = small_model(PolicyKind::transformer);
    auto a = make_policy(m, Side::rx, 2, 1);
    CHECK(dynamic_cast<TransformerPolicy&>(*a).attention_scale() == doctest::Approx(4.0));
    m.attention_scale = AttentionScale::sqrt_d_head;
    auto b = make_policy(m, Side::rx, 2, 1);
    CHECK(dynamic_cast<TransformerPolicy&>(*b).attention_scale() == doctest::Approx(2.0));
}

TEST_CASE("reduced transformer with one layer and one head") {
    auto m = small_model(PolicyKind::transformer);
    m.d_emb = 2;
    m.n_heads = 1;
    m.n_layers = 1;
    m.ffn_hidden = 1;
    auto pol = make_policy(m, Side::tx, 1, 2);
    auto& tf = dynamic_cast<TransformerPolicy&>(*pol);
    auto& p = tf.parameters();
    p.get_mutable("embed.weight") << 1.0;
    p.get_mutable("embed.bias") << 0.0;
    p.get_mutable("layer0.attn.wq").setZero();
    p.get_mutable("layer0.attn.wk").setZero();
    p.get_mutable("layer0.attn.wv").setIdentity();
    p.get_mutable("layer0.attn.wo").setIdentity();
    p.get_mutable("layer0.ffn.w1").setZero();
    p.get_mutable("layer0.ffn.b1").setZero();
    p.get_mutable("layer0.ffn.w2").setZero();
    p.get_mutable("layer0.ffn.b2").setZero();

    // One observation y = 2 + 0j: x = [2, 0] + PE(0) = [2, 1]; attention over
    // a single position copies v = x, so the sublayer input is 2x = [4, 2]
    // and layer norm maps it to +-sqrt(1/(1 + eps)).
    Matrix y(1, 2);
    y << 2.0, 0.0;
    ad::Tape t;
    Bindings b(p, false);
    auto out = tf.forward(t, b, Tensor::constant(y), 1, 1).value();
    const double s = 1.0 / std::sqrt(1.0 + 1e-5);
    // second layer norm sees the same vector again
    const double s2 = s / std::sqrt(s * s + 1e-5);
    CHECK(out(0, 0) == doctest::Approx(s2).epsilon(1e-10));
    CHECK(out(0, 1) == doctest::Approx(-s2).epsilon(1e-10));
}

TEST_CASE("isolate_heads") {
    auto pol = make_policy(small_model(PolicyKind::transformer), Side::tx, 3, 8);
    const auto& params = pol->parameters();
    ParameterSet full = params;
    isolate_heads(full, 0, {0, 1, 2, 3}, 4, 4);
    for (std::size_t i = 0; i < params.size(); ++i) CHECK(full.entry(i).value == params.entry(i).value);

    Matrix sum = Matrix::Zero(16, 16);
    for (int h = 0; h < 4; ++h) {
        ParameterSet one = params;
        isolate_heads(one, 1, {h}, 4, 4);
        CHECK(one.get("layer0.attn.wo") == params.get("layer0.attn.wo"));
        const auto& wo = one.get("layer1.attn.wo");
        for (int r = 0; r < 16; ++r)
            if (r / 4 != h) CHECK(wo.row(r).isZero());
        sum += wo;
    }
    CHECK(sum == params.get("layer1.attn.wo"));

    ParameterSet bad = params;
    CHECK_THROWS_AS(isolate_heads(bad, 0, {4}, 4, 4), InvalidArgument);
    CHECK_THROWS(isolate_heads(bad, 2, {0}, 4, 4));
}

TEST_CASE("gru step scalar example") {
    GruWeights w;
    w.update_w.resize(2, 1);
    w.update_w << 0.3, 0.4;
    w.update_b.resize(1, 1);
    w.update_b << 0.1;
    w.reset_w.resize(2, 1);
    w.reset_w << -0.2, 0.5;
    w.reset_b.resize(1, 1);
    w.reset_b << 0.0;
    w.candidate_w.resize(2, 1);
    w.candidate_w << 0.7, -0.6;
    w.candidate_b.resize(1, 1);
    w.candidate_b << 0.05;
    Matrix h(1, 1), x(1, 1);
    h << 0.5;
    x << 0.2;
    CHECK(gru_step(h, x, w)(0, 0) == doctest::Approx(0.269981545334799).epsilon(1e-13));
}

TEST_CASE("gru taped step agrees with the value step") {
    auto pol = make_policy(small_model(PolicyKind::gru), Side::rx, 3, 4);
    auto& gru = dynamic_cast<GruPolicy&>(*pol);
    Rng rng(2);
    Matrix h(1, 12), x(1, 6);
    for (ad::Index i = 0; i < h.size(); ++i) h.data()[i] = uniform(rng, -1, 1);
    for (ad::Index i = 0; i < x.size(); ++i) x.data()[i] = uniform(rng, -1, 1);
    ad::Tape t;
    Bindings b(gru.parameters(), false);
    auto taped = gru.step(t, b, Tensor::constant(h), Tensor::constant(x)).value();
    CHECK((taped - gru_step(h, x, gru.weights())).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("nonadaptive pilots are frozen and the downlink needs L pilots") {
    auto m = small_model(PolicyKind::nonadaptive);
    auto pol = make_policy(m, Side::tx, 3, 4);
    auto& na = dynamic_cast<NonAdaptivePolicy&>(*pol);
    bool saw_frozen = false;
    for (const auto& e : na.parameters().entries())
        if (e.name.rfind("pilot.", 0) == 0) {
            CHECK_FALSE(e.trainable);
            saw_frozen = true;
        }
    CHECK(saw_frozen);
    std::vector<cplx> obs(4, cplx(0.3, -0.1));
    auto [angles, w] = na.downlink(obs);
    CHECK(angles.size() == 3);
    CHECK(std::abs(w.norm() - 1.0) < 1e-12);
    obs.pop_back();
    CHECK_THROWS_AS(na.downlink(obs), InvalidArgument);
}

TEST_CASE("policy contracts over random evaluations") {
    Rng rng(77);
    for (auto kind : {PolicyKind::transformer, PolicyKind::gru, PolicyKind::nonadaptive}) {
        auto pair = make_policy_pair(small_model(kind), 4, 3, 10);
        ad::Tape t(false);
        Bindings b(pair.tx->parameters(), false);
        SessionContext ctx{&t, &b, 8, nullptr, false};
        auto session = pair.tx->start(ctx);
        for (int l = 0; l < 4; ++l) {
            for (auto role : kRoles) {
                auto s = session->act(role);
                CHECK(s.angles.value().minCoeff() >= 0.0);
                CHECK(s.angles.value().maxCoeff() <= kHalfPi);
                for (ad::Index r = 0; r < 8; ++r)
                    CHECK(std::abs(s.beamformer.value().row(r).norm() - 1.0) < 1e-9);
            }
            session->observe(random_obs(rng, 8));
        }
        CHECK(session->observed() == 4);
    }
}

TEST_CASE("policy initialization is seeded") {
    for (auto kind : {PolicyKind::transformer, PolicyKind::gru, PolicyKind::nonadaptive}) {
        auto a = make_policy(small_model(kind), Side::tx, 3, 5);
        auto b = make_policy(small_model(kind), Side::tx, 3, 5);
        auto c = make_policy(small_model(kind), Side::rx, 3, 5);
        REQUIRE(a->parameters().size() == b->parameters().size());
        for (std::size_t i = 0; i < a->parameters().size(); ++i)
            CHECK(a->parameters().entry(i).value == b->parameters().entry(i).value);
        CHECK(a->parameters().entry(0).value != c->parameters().entry(0).value);
        auto d = a->clone();
        CHECK(d->parameters().entry(0).value == a->parameters().entry(0).value);
    }
}

TEST_CASE("episode loss gradients match finite differences") {
    ChannelConfig cc = testing::small_config(4, 2, 1);
    auto protocol = ProtocolConfig::from_snr_db(0.0, 3);
    auto batch = make_batch(cc, protocol, 21, 0, 3);
    for (auto kind : {PolicyKind::transformer, PolicyKind::gru, PolicyKind::nonadaptive}) {
        auto m = small_model(kind);
        m.max_stages = 3;
        auto pair = make_policy_pair(m, 4, 2, 3);
        auto report = support::episode_fd(pair, batch, protocol, 5, 1e-6, 4, 1e-6);
        CHECK(report.worst < 1e-4);
        CHECK_FALSE(report.classes.empty());
    }
}
