#include "prba/protocol.hpp"

#include <cmath>
#include <sstream>
#include <string>

namespace prba {

ProtocolConfig ProtocolConfig::from_snr_db(double snr_db, int n_stages) {
    ProtocolConfig c;
    c.n_stages = n_stages;
    c.sigma2_tx = c.sigma2_rx = std::pow(10.0, -snr_db / 10.0);
    return c;
}

void ProtocolConfig::validate() const {
    if (n_stages < 1) throw ValidationError("protocol.n_stages must be >= 1");
    if (!(rho_tx > 0.0) || !(rho_rx > 0.0)) throw ValidationError("pilot powers must be > 0");
    if (!(sigma2_tx > 0.0) || !(sigma2_rx > 0.0))
        throw ValidationError("noise variances must be > 0");
}

Json to_json(const ProtocolConfig& c) {
    return Json{{"n_stages", c.n_stages},       {"rho_tx", c.rho_tx},
                {"rho_rx", c.rho_rx},           {"sigma2_tx", c.sigma2_tx},
                {"sigma2_rx", c.sigma2_rx},     {"pilot_noise", c.pilot_noise},
                {"skip_final_uplink", c.skip_final_uplink}};
}

ProtocolConfig protocol_config_from_json(const Json& j) {
    ProtocolConfig c;
    c.n_stages = j.at("n_stages").get<int>();
    c.rho_tx = j.at("rho_tx").get<double>();
    c.rho_rx = j.at("rho_rx").get<double>();
    c.sigma2_tx = j.at("sigma2_tx").get<double>();
    c.sigma2_rx = j.at("sigma2_rx").get<double>();
    c.pilot_noise = j.at("pilot_noise").get<bool>();
    c.skip_final_uplink = j.at("skip_final_uplink").get<bool>();
    return c;
}

cplx observe_pilot(const CMatrix& h_dp, const StageParams& sender, const StageParams& receiver,
                   double power, cplx noise, bool uplink) {
    const CMatrix h = uplink ? CMatrix(h_dp.adjoint()) : h_dp;
    if (h.cols() != 2 * sender.angles.size() || h.rows() != 2 * receiver.angles.size() ||
        sender.beamformer.size() != sender.angles.size() ||
        receiver.beamformer.size() != receiver.angles.size())
        throw InvalidArgument("observe_pilot: dimension mismatch");
    const CVector send = polarization_matrix(sender.angles).cast<cplx>() * sender.beamformer;
    const CVector rec = polarization_matrix(receiver.angles).cast<cplx>() * receiver.beamformer;
    return rec.dot(h * send) * std::sqrt(power) + noise;
}

Json to_json(const EpisodeRecord& r) {
    auto cvec = [](const std::vector<cplx>& v) {
        Json a = Json::array();
        for (auto z : v) a.push_back({z.real(), z.imag()});
        return a;
    };
    auto params = [](const StageParams& p) {
        Json angles = Json::array();
        for (Eigen::Index k = 0; k < p.angles.size(); ++k) angles.push_back(p.angles(k));
        Json w = Json::array();
        for (Eigen::Index k = 0; k < p.beamformer.size(); ++k)
            w.push_back({p.beamformer(k).real(), p.beamformer(k).imag()});
        return Json{{"role", role_name(p.role)}, {"angles", angles}, {"beamformer", w}};
    };
    Json stages = Json::array();
    for (const auto& s : r.stages)
        stages.push_back({{"tx_pilot_transmit", params(s.tx_pilot_transmit)},
                          {"rx_pilot_receive", params(s.rx_pilot_receive)},
                          {"rx_pilot_transmit", params(s.rx_pilot_transmit)},
                          {"tx_pilot_receive", params(s.tx_pilot_receive)},
                          {"tx_downlink", params(s.tx_downlink)},
                          {"rx_downlink", params(s.rx_downlink)}});
    return Json{{"channel_seed", r.channel_seed},
                {"y_tx", cvec(r.y_tx)},
                {"y_rx", cvec(r.y_rx)},
                {"gains", r.gains},
                {"stages", stages}};
}

std::string gains_csv_rows(const EpisodeRecord& record, std::uint64_t episode_id) {
    std::ostringstream out;
    out.precision(17);
    for (std::size_t l = 0; l < record.gains.size(); ++l)
        out << episode_id << ',' << l << ',' << record.gains[l] << ',' << to_db(record.gains[l])
            << '\n';
    return out.str();
}

void draw_noise(const ProtocolConfig& config, std::uint64_t seed, std::uint64_t episode,
                CMatrix& noise_rx, CMatrix& noise_tx, ad::Index row) {
    if (!config.pilot_noise) {
        noise_rx.row(row).setZero();
        noise_tx.row(row).setZero();
        return;
    }
    Rng rng = make_rng(seed, Stream::noise, episode);
    for (int l = 0; l < config.n_stages; ++l) {
        noise_rx(row, l) = complex_normal(rng, config.sigma2_rx);
        noise_tx(row, l) = complex_normal(rng, config.sigma2_tx);
    }
}

EpisodeBatch make_batch(const ChannelConfig& channel_cfg, const ProtocolConfig& config,
                        std::uint64_t seed, std::uint64_t first, ad::Index count) {
    EpisodeBatch batch;
    auto channels = std::make_shared<std::vector<CMatrix>>();
    channels->reserve(static_cast<std::size_t>(count));
    batch.noise_rx.resize(count, config.n_stages);
    batch.noise_tx.resize(count, config.n_stages);
    for (ad::Index i = 0; i < count; ++i) {
        const std::uint64_t e = first + static_cast<std::uint64_t>(i);
        auto ch = experiment_channel(channel_cfg, seed, e);
        channels->push_back(std::move(ch.matrix));
        batch.channel_seeds.push_back(ch.seed);
        draw_noise(config, seed, e, batch.noise_rx, batch.noise_tx, i);
    }
    batch.channels = std::move(channels);
    return batch;
}

EpisodeBatch batch_from_channels(std::vector<CMatrix> channels, const ProtocolConfig& config,
                                 std::uint64_t noise_seed, std::uint64_t first_noise_index) {
    EpisodeBatch batch;
    const auto count = static_cast<ad::Index>(channels.size());
    batch.noise_rx.resize(count, config.n_stages);
    batch.noise_tx.resize(count, config.n_stages);
    for (ad::Index i = 0; i < count; ++i) {
        draw_noise(config, noise_seed, first_noise_index + static_cast<std::uint64_t>(i),
                   batch.noise_rx, batch.noise_tx, i);
        batch.channel_seeds.push_back(0);
    }
    batch.channels = std::make_shared<const std::vector<CMatrix>>(std::move(channels));
    return batch;
}

EpisodeBatch slice_batch(const EpisodeBatch& batch, ad::Index begin, ad::Index count) {
    EpisodeBatch out;
    out.channels = std::make_shared<const std::vector<CMatrix>>(
        batch.channels->begin() + begin, batch.channels->begin() + begin + count);
    out.channel_seeds.assign(batch.channel_seeds.begin() + begin,
                             batch.channel_seeds.begin() + begin + count);
    out.noise_rx = batch.noise_rx.middleRows(begin, count);
    out.noise_tx = batch.noise_tx.middleRows(begin, count);
    return out;
}

namespace {

ad::Tensor noise_column(const CMatrix& noise, int l) {
    ad::Matrix m(noise.rows(), 2);
    for (ad::Index b = 0; b < noise.rows(); ++b) {
        m(b, 0) = noise(b, l).real();
        m(b, 1) = noise(b, l).imag();
    }
    return ad::Tensor::constant(std::move(m));
}

ad::Tensor pilot(ad::Tape& tape, const StageTensors& send, const StageTensors& rec,
                 const std::shared_ptr<const std::vector<CMatrix>>& channels, bool uplink) {
    auto sent = tape.polarize(send.angles, send.beamformer);
    auto through = tape.channel_apply(sent, channels, uplink);
    auto probe = tape.polarize(rec.angles, rec.beamformer);
    return tape.complex_inner(probe, through);
}

void check_contract(const StageTensors& st, int n, Side side, Role role, int stage) {
    auto fail = [&](const std::string& what) {
        throw ContractViolation(std::string(side_name(side)) + "." + role_name(role) +
                                " mapping at stage " + std::to_string(stage) + ": " + what);
    };
    const auto& a = st.angles.value();
    const auto& w = st.beamformer.value();
    if (a.cols() != n || w.cols() != 2 * n) fail("wrong output width");
    if (!a.allFinite() || (a.array() < 0.0).any() || (a.array() > kHalfPi).any())
        fail("polarization angle outside [0, pi/2]");
    for (ad::Index b = 0; b < w.rows(); ++b)
        if (std::abs(w.row(b).norm() - 1.0) > 1e-9) fail("beamformer is not unit norm");
}

StageParams to_params(const StageTensors& st, ad::Index row, Role role) {
    const ad::Index n = st.angles.cols();
    StageParams p;
    p.role = role;
    p.angles = st.angles.value().row(row).transpose();
    p.beamformer.resize(n);
    for (ad::Index k = 0; k < n; ++k)
        p.beamformer(k) = cplx(st.beamformer.value()(row, k), st.beamformer.value()(row, n + k));
    return p;
}

void store_complex(CMatrix& out, const ad::Tensor& y, int l) {
    for (ad::Index b = 0; b < y.rows(); ++b) out(b, l) = cplx(y.value()(b, 0), y.value()(b, 1));
}

}  // namespace

BatchResult run_batch(ad::Tape& tape, Bindings& tx_bind, Bindings& rx_bind, const Policy& tx,
                      const Policy& rx, const EpisodeBatch& batch, const ProtocolConfig& config,
                      const RunOptions& options) {
    const ad::Index B = batch.size();
    const int L = config.n_stages;
    if (B < 1) throw InvalidArgument("run_batch: empty batch");
    if (batch.noise_rx.cols() != L || batch.noise_tx.cols() != L)
        throw InvalidArgument("run_batch: noise does not match the stage count");
    const auto& h0 = batch.channels->front();
    if (h0.cols() != 2 * tx.n_antennas() || h0.rows() != 2 * rx.n_antennas())
        throw InvalidArgument("run_batch: channel shape does not match the policies");

    SessionContext ctx_tx{&tape, &tx_bind, B, batch.channels, options.trace_attention};
    SessionContext ctx_rx{&tape, &rx_bind, B, batch.channels, options.trace_attention};
    auto tx_session = tx.start(ctx_tx);
    auto rx_session = rx.start(ctx_rx);

    BatchResult result;
    result.y_rx = CMatrix::Zero(B, L);
    result.y_tx = CMatrix::Zero(B, L);
    if (options.keep_stage_params)
        result.stages.assign(static_cast<std::size_t>(B), std::vector<StageRecord>(L));

    const double amp_tx = std::sqrt(config.rho_tx);
    const double amp_rx = std::sqrt(config.rho_rx);
    std::vector<ad::Tensor> gains;
    auto act = [&](PolicySession& s, const Policy& p, Role role, int l) {
        StageTensors st = s.act(role);
        check_contract(st, p.n_antennas(), p.side(), role, l);
        return st;
    };

    for (int l = 0; l < L; ++l) {
        auto tx_pt = act(*tx_session, tx, Role::pilot_transmit, l);
        auto rx_pr = act(*rx_session, rx, Role::pilot_receive, l);
        auto y_rx = tape.add(tape.scale(pilot(tape, tx_pt, rx_pr, batch.channels, false), amp_tx),
                             noise_column(batch.noise_rx, l));
        rx_session->observe(y_rx);
        store_complex(result.y_rx, y_rx, l);

        auto rx_pt = act(*rx_session, rx, Role::pilot_transmit, l);
        auto tx_pr = act(*tx_session, tx, Role::pilot_receive, l);
        if (!(config.skip_final_uplink && l == L - 1)) {
            auto y_tx = tape.add(tape.scale(pilot(tape, rx_pt, tx_pr, batch.channels, true), amp_rx),
                                 noise_column(batch.noise_tx, l));
            tx_session->observe(y_tx);
            store_complex(result.y_tx, y_tx, l);
        }

        auto tx_dl = act(*tx_session, tx, Role::downlink, l);
        auto rx_dl = act(*rx_session, rx, Role::downlink, l);
        gains.push_back(tape.abs2(pilot(tape, tx_dl, rx_dl, batch.channels, false)));

        if (options.keep_stage_params) {
            for (ad::Index b = 0; b < B; ++b) {
                auto& s = result.stages[static_cast<std::size_t>(b)][static_cast<std::size_t>(l)];
                s.tx_pilot_transmit = to_params(tx_pt, b, Role::pilot_transmit);
                s.rx_pilot_receive = to_params(rx_pr, b, Role::pilot_receive);
                s.rx_pilot_transmit = to_params(rx_pt, b, Role::pilot_transmit);
                s.tx_pilot_receive = to_params(tx_pr, b, Role::pilot_receive);
                s.tx_downlink = to_params(tx_dl, b, Role::downlink);
                s.rx_downlink = to_params(rx_dl, b, Role::downlink);
            }
        }
    }

    auto all = tape.concat_cols(gains);
    result.gains = all.value();
    double denom = options.loss_denominator > 0.0 ? options.loss_denominator : static_cast<double>(B);
    if (options.per_stage_mean) denom *= L;
    result.loss = tape.scale(tape.sum(all), -1.0 / denom);
    if (options.trace_attention) {
        result.tx_attention = tx_session->attention();
        result.rx_attention = rx_session->attention();
    }
    return result;
}

BatchResult run_batch(const Policy& tx, const Policy& rx, const EpisodeBatch& batch,
                      const ProtocolConfig& config, const RunOptions& options) {
    ad::Tape tape(false);
    Bindings tb(tx.parameters(), false);
    Bindings rb(rx.parameters(), false);
    return run_batch(tape, tb, rb, tx, rx, batch, config, options);
}

std::vector<EpisodeRecord> records_from(const BatchResult& result, const EpisodeBatch& batch,
                                        const ProtocolConfig& config) {
    std::vector<EpisodeRecord> out;
    const ad::Index B = result.gains.rows();
    const ad::Index L = result.gains.cols();
    for (ad::Index b = 0; b < B; ++b) {
        EpisodeRecord r;
        r.channel_seed = batch.channel_seeds.at(static_cast<std::size_t>(b));
        for (ad::Index l = 0; l < L; ++l) {
            r.y_rx.push_back(result.y_rx(b, l));
            r.gains.push_back(result.gains(b, l));
        }
        const ad::Index uplinks = config.skip_final_uplink ? L - 1 : L;
        for (ad::Index l = 0; l < uplinks; ++l) r.y_tx.push_back(result.y_tx(b, l));
        if (!result.stages.empty()) r.stages = result.stages[static_cast<std::size_t>(b)];
        out.push_back(std::move(r));
    }
    return out;
}

EpisodeRecord run_episode(const CMatrix& h_dp, const Policy& tx, const Policy& rx,
                          const ProtocolConfig& config, std::uint64_t noise_seed,
                          std::uint64_t episode) {
    auto batch = batch_from_channels({h_dp}, config, noise_seed, episode);
    RunOptions options;
    options.keep_stage_params = true;
    auto result = run_batch(tx, rx, batch, config, options);
    return std::move(records_from(result, batch, config).front());
}

}  // namespace prba
