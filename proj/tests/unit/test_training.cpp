#include "../support/episode_fd.hpp"
#include "helpers.hpp"
#include "prba/training.hpp"

using namespace prba;
using ad::Matrix;

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

TrainConfig quick_train() {
    TrainConfig t;
    t.batch_size = 4;
    t.batches_per_epoch = 2;
    t.max_epochs = 3;
    t.patience_epochs = 5;
    t.lr0 = 1e-2;
    t.gamma = 1.0;
    t.eval_episodes = 10;
    return t;
}

}  // namespace

TEST_CASE("learning rate schedule") {
    CHECK(lr_schedule(0, 1e-3, 0.9995) == 1e-3);
    CHECK(lr_schedule(10000, 1e-4, 0.9999) == doctest::Approx(3.678610464329705e-05).epsilon(1e-12));
    CHECK_THROWS_AS(lr_schedule(-1, 1e-3, 0.9), InvalidArgument);
}

TEST_CASE("adam steps") {
    ParameterSet p;
    Matrix one(1, 1);
    one << 1.0;
    p.add("x", one);
    auto state = AdamState::for_parameters(p);
    Matrix g(1, 1);
    g << 0.5;
    adam_step(p, {g}, state, 0.01);
    adam_step(p, {g}, state, 0.01);
    CHECK(p.get("x")(0, 0) == doctest::Approx(0.9800000004000001).epsilon(1e-14));
    CHECK(state.t == 2);

    // first step moves every coordinate by about lr regardless of scale
    ParameterSet q;
    Matrix v(1, 3);
    v << 0, 0, 0;
    q.add("v", v);
    auto s2 = AdamState::for_parameters(q);
    Matrix gv(1, 3);
    gv << 1e-3, -5.0, 1e4;
    adam_step(q, {gv}, s2, 0.1);
    CHECK(q.get("v")(0, 0) == doctest::Approx(-0.1).epsilon(1e-4));
    CHECK(q.get("v")(0, 1) == doctest::Approx(0.1).epsilon(1e-8));
    CHECK(q.get("v")(0, 2) == doctest::Approx(-0.1).epsilon(1e-8));

    auto back = adam_state_from_json(to_json(s2));
    CHECK(back.t == s2.t);
    CHECK(back.m[0] == s2.m[0]);
    CHECK(back.v[0] == s2.v[0]);
}

TEST_CASE("adam rejects non-finite gradients without side effects") {
    ParameterSet p;
    p.add("a", Matrix::Ones(1, 2));
    p.add("b", Matrix::Ones(1, 2));
    auto state = AdamState::for_parameters(p);
    Matrix good = Matrix::Ones(1, 2), bad = Matrix::Ones(1, 2);
    bad(0, 1) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(adam_step(p, {good, bad}, state, 0.1), NumericFault);
    CHECK(p.get("a") == Matrix::Ones(1, 2));
    CHECK(state.t == 0);
    CHECK(state.m[0].isZero());
}

TEST_CASE("frozen entries are not updated") {
    ParameterSet p;
    p.add("f", Matrix::Ones(1, 2), false);
    auto state = AdamState::for_parameters(p);
    adam_step(p, {Matrix::Ones(1, 2)}, state, 0.5);
    CHECK(p.get("f") == Matrix::Ones(1, 2));
}

TEST_CASE("gain summaries") {
    Matrix g(2, 1);
    g << 1.0, 3.0;
    auto r = summarize_gains(g);
    CHECK(r.mean_linear[0] == 2.0);
    CHECK(r.stderr_linear[0] == doctest::Approx(1.0));
    CHECK(r.mean_db[0] == doctest::Approx(10 * std::log10(2.0)));
    CHECK(r.stderr_db[0] == doctest::Approx(10 / std::log(10.0) / 2));
}

TEST_CASE("gradient chunking and threading do not change results") {
    ChannelConfig cc = testing::small_config(3, 2, 1);
    auto p = ProtocolConfig::from_snr_db(0.0, 3);
    auto pair = make_policy_pair(tiny(PolicyKind::transformer, 3), 3, 2, 1);
    auto batch = make_batch(cc, p, 2, 0, 6);
    auto a = compute_gradients(*pair.tx, *pair.rx, batch, p, false, 1);
    auto b = compute_gradients(*pair.tx, *pair.rx, batch, p, false, 3);
    CHECK(std::abs(a.loss - b.loss) < 1e-12);
    CHECK((a.gains - b.gains).cwiseAbs().maxCoeff() < 1e-12);
    for (std::size_t i = 0; i < a.tx.size(); ++i) CHECK((a.tx[i] - b.tx[i]).cwiseAbs().maxCoeff() < 1e-12);
    for (std::size_t i = 0; i < a.rx.size(); ++i) CHECK((a.rx[i] - b.rx[i]).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("training loss gradient matches finite differences") {
    ChannelConfig cc = testing::small_config(2, 2, 2);
    auto p = ProtocolConfig::from_snr_db(5.0, 2);
    auto pair = make_policy_pair(tiny(PolicyKind::gru, 2), 2, 2, 9);
    auto batch = make_batch(cc, p, 3, 0, 4);
    auto report = support::episode_fd(pair, batch, p, 6, 1e-6, 1, 1e-6);
    CHECK(report.worst < 1e-4);
}

TEST_CASE("training improves a fixed-channel objective and is deterministic") {
    ChannelConfig cc = testing::small_config(3, 2, 1);
    auto p = ProtocolConfig::from_snr_db(10.0, 2);
    auto fixed = std::make_shared<std::vector<CMatrix>>(1, generate_channel(cc, 4).matrix);
    TrainOptions opt;
    opt.fixed_channels = fixed;
    auto cfg = quick_train();
    cfg.max_epochs = 6;
    auto a = make_policy_pair(tiny(PolicyKind::transformer, 2), 3, 2, 5);
    auto b = make_policy_pair(tiny(PolicyKind::transformer, 2), 3, 2, 5);
    auto ra = train(a, cc, p, cfg, opt);
    auto rb = train(b, cc, p, cfg, opt);
    CHECK(ra.epoch_losses == rb.epoch_losses);
    for (std::size_t i = 0; i < a.tx->parameters().size(); ++i)
        CHECK(a.tx->parameters().entry(i).value == b.tx->parameters().entry(i).value);
    CHECK(ra.best_loss < ra.epoch_losses.front());
    CHECK(ra.best_loss == *std::min_element(ra.epoch_losses.begin(), ra.epoch_losses.end()));
    CHECK(ra.steps == 12);
    CHECK(ra.history.size() == 12);
    CHECK(ra.history[1].lr == doctest::Approx(1e-2));
}

TEST_CASE("best parameters are restored") {
    ChannelConfig cc = testing::small_config(2, 2, 1);
    auto p = ProtocolConfig::from_snr_db(0.0, 2);
    auto cfg = quick_train();
    cfg.max_epochs = 4;
    cfg.lr0 = 0.3;
    auto pair = make_policy_pair(tiny(PolicyKind::gru, 2), 2, 2, 3);
    std::vector<ParameterSet> snapshots;
    TrainOptions opt;
    opt.on_epoch = [&](int, double, bool) { snapshots.push_back(pair.tx->parameters()); };
    auto r = train(pair, cc, p, cfg, opt);
    REQUIRE(snapshots.size() == static_cast<std::size_t>(r.epochs_run));
    const auto& best = snapshots[static_cast<std::size_t>(r.best_epoch)];
    for (std::size_t i = 0; i < best.size(); ++i)
        CHECK(best.entry(i).value == pair.tx->parameters().entry(i).value);
}

TEST_CASE("plateau triggers early stopping after the patience window") {
    ChannelConfig cc = testing::small_config(2, 2, 1);
    auto p = ProtocolConfig::from_snr_db(0.0, 2);
    p.pilot_noise = false;
    auto fixed = std::make_shared<std::vector<CMatrix>>(1, generate_channel(cc, 4).matrix);
    TrainOptions opt;
    opt.fixed_channels = fixed;
    auto cfg = quick_train();
    cfg.lr0 = 1e-300;
    cfg.patience_epochs = 3;
    cfg.max_epochs = 50;
    auto pair = make_policy_pair(tiny(PolicyKind::transformer, 2), 2, 2, 1);
    auto r = train(pair, cc, p, cfg, opt);
    CHECK(r.early_stopped);
    CHECK(r.best_epoch == 0);
    CHECK(r.epochs_run == 4);
}

TEST_CASE("max_steps caps training") {
    ChannelConfig cc = testing::small_config(2, 2, 1);
    auto p = ProtocolConfig::from_snr_db(0.0, 2);
    auto cfg = quick_train();
    cfg.max_steps = 3;
    auto pair = make_policy_pair(tiny(PolicyKind::nonadaptive, 2), 2, 2, 1);
    auto r = train(pair, cc, p, cfg);
    CHECK(r.steps == 3);
}

TEST_CASE("train config validation") {
    TrainConfig t;
    t.lr0 = 0.0;
    CHECK_THROWS_AS(t.validate(), ValidationError);
    t = TrainConfig{};
    t.gamma = 1.5;
    CHECK_THROWS_AS(t.validate(), ValidationError);
    auto back = train_config_from_json(to_json(TrainConfig{}));
    CHECK(to_json(back) == to_json(TrainConfig{}));
}

TEST_CASE("evaluation uses common random numbers") {
    ChannelConfig cc = testing::small_config(3, 2, 2);
    auto p = ProtocolConfig::from_snr_db(0.0, 3);
    auto pair = make_policy_pair(tiny(PolicyKind::gru, 3), 3, 2, 2);
    auto a = evaluate_average_gain(*pair.tx, *pair.rx, cc, p, 20, 5, 1, 250);
    auto same = evaluate_average_gain(*pair.tx, *pair.rx, cc, p, 20, 5, 2, 250);
    CHECK(a.gains == same.gains);
    // other chunkings only reorder floating-point reductions
    auto b = evaluate_average_gain(*pair.tx, *pair.rx, cc, p, 20, 5, 2, 3);
    CHECK((a.gains - b.gains).cwiseAbs().maxCoeff() < 1e-12);
    auto c = evaluate_average_gain(*pair.tx, *pair.rx, cc, p, 10, 5, 1, 4);
    CHECK((c.gains - a.gains.topRows(10)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK_THROWS_AS(evaluate_average_gain(*pair.tx, *pair.rx, cc, p, 0, 5), InvalidArgument);
}

TEST_CASE("standard error shrinks with the square root of the episode count") {
    ChannelConfig cc = testing::small_config(3, 2, 1);
    auto p = ProtocolConfig::from_snr_db(0.0, 1);
    ModelConfig m;
    m.kind = PolicyKind::perfect_csi;
    auto pair = make_policy_pair(m, 3, 2, 0);
    auto small = evaluate_average_gain(*pair.tx, *pair.rx, cc, p, 500, 1);
    auto large = evaluate_average_gain(*pair.tx, *pair.rx, cc, p, 2000, 1);
    const double ratio = large.stderr_linear[0] / small.stderr_linear[0];
    CHECK(ratio > 0.4);
    CHECK(ratio < 0.6);
}
