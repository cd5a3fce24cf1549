#include "prba/experiments.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

namespace prba {

namespace {

std::string fmt(double v) {
    std::ostringstream s;
    s << std::setprecision(10) << v;
    return s.str();
}

void log_line(const RunContext& ctx, const std::string& line) {
    if (ctx.log) *ctx.log << line << std::endl;
}

void check_antennas(const PolicyPair& pair, const ChannelConfig& channel, const std::string& what) {
    if (pair.tx->n_antennas() != static_cast<int>(channel.n_tx) ||
        pair.rx->n_antennas() != static_cast<int>(channel.n_rx))
        throw ValidationError(what + ": checkpoint antenna counts do not match channel.n_tx/n_rx");
}

Json angles_json(const PolarizationAngles& a) {
    return std::vector<double>(a.data(), a.data() + a.size());
}

}  // namespace

std::uint64_t RunContext::eval_seed() const { return derive_seed(config.seed, Stream::misc, 1); }

std::string csv_comment(const ExperimentConfig& config) {
    return "# config_hash=" + config_hash(config) + " seed=" + std::to_string(config.seed) + "\n";
}

void run_gen_channels(const RunContext& ctx, long count) {
    if (count < 1) throw InvalidArgument("gen-channels: count must be >= 1");
    std::vector<DepolarizedChannel> channels;
    for (long e = 0; e < count; ++e)
        channels.push_back(experiment_channel(ctx.config.channel, ctx.config.seed,
                                              static_cast<std::uint64_t>(e)));
    std::filesystem::create_directories(ctx.out);
    write_channel_corpus(ctx.out / "channels.json", channels, true);
    log_line(ctx, "wrote " + std::to_string(count) + " channels to " + (ctx.out / "channels.json").string());
}

TrainResult run_train(const RunContext& ctx) {
    ExperimentConfig config = ctx.config;
    config.train.threads = ctx.threads;
    if (config.model.kind == PolicyKind::perfect_csi)
        throw InvalidArgument("train: the perfect-CSI policy has nothing to train");
    config.validate();
    PolicyPair pair = make_policy_pair(config.model, static_cast<int>(config.channel.n_tx),
                                       static_cast<int>(config.channel.n_rx), config.seed);
    TrainOptions options;
    options.on_epoch = [&](int epoch, double loss, bool improved) {
        log_line(ctx, "epoch " + std::to_string(epoch) + " loss " + fmt(loss) +
                          (improved ? " *" : ""));
    };
    TrainResult result = train(pair, config.channel, config.protocol, config.train, options);

    std::ostringstream csv;
    csv << csv_comment(config) << "step,epoch,loss,lr\n";
    csv << std::setprecision(17);
    for (const auto& r : result.history) csv << r.step << ',' << r.epoch << ',' << r.loss << ',' << r.lr << '\n';
    write_text_file(ctx.out / "loss.csv", csv.str());

    Checkpoint ck;
    ck.config = config;
    ck.config.train.threads = 1;
    ck.policies = std::move(pair);
    ck.adam_tx = result.adam_tx;
    ck.adam_rx = result.adam_rx;
    ck.meta = {result.steps, result.best_loss, result.best_epoch, result.epochs_run};
    save_checkpoint(ctx.out / "checkpoint.json", ck);
    log_line(ctx, "best loss " + fmt(result.best_loss) + " at epoch " + std::to_string(result.best_epoch));
    return result;
}

PolicyPair load_method(const RunContext& ctx, const std::string& method) {
    const PolicyKind kind = policy_kind_from_name(method);
    if (kind == PolicyKind::perfect_csi) {
        ModelConfig m = ctx.config.model;
        m.kind = PolicyKind::perfect_csi;
        return make_policy_pair(m, static_cast<int>(ctx.config.channel.n_tx),
                                static_cast<int>(ctx.config.channel.n_rx), ctx.config.seed);
    }
    auto it = ctx.checkpoints.find(method);
    if (it == ctx.checkpoints.end())
        throw InvalidArgument("method '" + method + "' needs --checkpoint " + method + "=PATH");
    Checkpoint ck = load_checkpoint(it->second, kind);
    check_antennas(ck.policies, ctx.config.channel, method);
    return std::move(ck.policies);
}

void run_eval(const RunContext& ctx) {
    std::vector<std::string> methods = ctx.methods;
    if (methods.empty()) methods = {"perfect-csi"};
    const long episodes = ctx.eval_episodes();
    std::vector<EvalResult> results;
    for (std::size_t i = 0; i < methods.size(); ++i) {
        PolicyPair pair = load_method(ctx, methods[i]);
        const std::uint64_t seed =
            ctx.independent_noise ? derive_seed(ctx.eval_seed(), Stream::misc, i + 1) : ctx.eval_seed();
        results.push_back(evaluate_average_gain(*pair.tx, *pair.rx, ctx.config.channel,
                                                ctx.config.protocol, episodes, seed, ctx.threads));
        log_line(ctx, methods[i] + ": final-stage " + fmt(results.back().mean_db.back()) + " dB");
    }
    std::ostringstream csv;
    csv << csv_comment(ctx.config) << "stage";
    for (const auto& m : methods) csv << ',' << m << "_gain_db," << m << "_stderr_db";
    csv << '\n';
    for (int l = 0; l < ctx.config.protocol.n_stages; ++l) {
        csv << l;
        for (const auto& r : results)
            csv << ',' << fmt(r.mean_db[static_cast<std::size_t>(l)]) << ','
                << fmt(r.stderr_db[static_cast<std::size_t>(l)]);
        csv << '\n';
    }
    write_text_file(ctx.out / "eval.csv", csv.str());
}

void run_sweep_paths(const RunContext& ctx, const std::vector<int>& paths) {
    if (paths.empty()) throw InvalidArgument("sweep-paths: no path counts given");
    auto general_it = ctx.checkpoints.find("transformer");
    if (general_it == ctx.checkpoints.end())
        throw InvalidArgument("sweep-paths needs --checkpoint transformer=PATH");
    Checkpoint general = load_checkpoint(general_it->second, PolicyKind::transformer);
    check_antennas(general.policies, ctx.config.channel, "sweep-paths");
    const long episodes = ctx.eval_episodes();

    std::ostringstream csv;
    csv << csv_comment(ctx.config)
        << "n_paths,trained_paths,generalized_db,generalized_stderr_db,matched_db,"
           "matched_stderr_db,perfect_csi_db,gap_db\n";
    for (int p : paths) {
        ChannelConfig channel = ctx.config.channel;
        channel.n_paths = static_cast<std::size_t>(p);
        const auto g = evaluate_average_gain(*general.policies.tx, *general.policies.rx, channel,
                                             ctx.config.protocol, episodes, ctx.eval_seed(), ctx.threads);
        RunContext oracle_ctx = ctx;
        oracle_ctx.config.channel = channel;
        PolicyPair oracle = load_method(oracle_ctx, "perfect-csi");
        const auto o = evaluate_average_gain(*oracle.tx, *oracle.rx, channel, ctx.config.protocol,
                                             episodes, ctx.eval_seed(), ctx.threads);
        csv << p << ',' << general.config.channel.n_paths << ',' << fmt(g.mean_db.back()) << ','
            << fmt(g.stderr_db.back()) << ',';
        auto matched_it = ctx.checkpoints.find("P=" + std::to_string(p));
        if (matched_it != ctx.checkpoints.end()) {
            Checkpoint matched = load_checkpoint(matched_it->second, PolicyKind::transformer);
            const auto m = evaluate_average_gain(*matched.policies.tx, *matched.policies.rx, channel,
                                                 ctx.config.protocol, episodes, ctx.eval_seed(),
                                                 ctx.threads);
            csv << fmt(m.mean_db.back()) << ',' << fmt(m.stderr_db.back()) << ','
                << fmt(o.mean_db.back()) << ',' << fmt(m.mean_db.back() - g.mean_db.back()) << '\n';
        } else {
            csv << ",," << fmt(o.mean_db.back()) << ",\n";
        }
        log_line(ctx, "P=" + std::to_string(p) + " generalized " + fmt(g.mean_db.back()) + " dB");
    }
    write_text_file(ctx.out / "sweep_paths.csv", csv.str());
}

void run_interpret(const RunContext& ctx, const std::vector<int>& head_counts) {
    auto it = ctx.checkpoints.find("transformer");
    if (it == ctx.checkpoints.end())
        throw InvalidArgument("interpret needs --checkpoint transformer=PATH");
    Checkpoint ck = load_checkpoint(it->second, PolicyKind::transformer);
    check_antennas(ck.policies, ctx.config.channel, "interpret");
    const auto& channel_cfg = ctx.config.channel;
    const auto& protocol = ctx.config.protocol;

    // One channel, one episode: per-stage downlink responses and attention.
    auto batch = make_batch(channel_cfg, protocol, ctx.eval_seed(), 0, 1);
    RunOptions options;
    options.keep_stage_params = true;
    options.trace_attention = true;
    auto result = run_batch(*ck.policies.tx, *ck.policies.rx, batch, protocol, options);
    const CMatrix& h = batch.channels->front();

    const auto grid = default_theta_grid();
    std::ostringstream csv;
    csv << csv_comment(ctx.config) << "theta_deg,power_db,tag\n";
    auto emit = [&](const ArrayResponseCurve& c, const std::string& tag) {
        for (std::size_t i = 0; i < c.theta.size(); ++i)
            csv << fmt(c.theta[i] * 180.0 / kPi) << ',' << fmt(c.power_db[i]) << ',' << tag << '\n';
    };
    const auto& stages = result.stages.front();
    for (std::size_t l = 0; l < stages.size(); ++l) {
        const auto& s = stages[l];
        emit(response_power(s.tx_downlink.beamformer, s.tx_downlink.angles, channel_cfg.chi_ant, grid,
                            ResponseSide::transmit, channel_cfg.antenna_gain),
             "transformer_tx_stage" + std::to_string(l));
        emit(response_power(s.rx_downlink.beamformer, s.rx_downlink.angles, channel_cfg.chi_ant, grid,
                            ResponseSide::receive, channel_cfg.antenna_gain),
             "transformer_rx_stage" + std::to_string(l));
    }
    const IpoResult ipo = ipo_optimize(h);
    emit(response_power(ipo.w_tx, ipo.angles_tx, channel_cfg.chi_ant, grid, ResponseSide::transmit,
                        channel_cfg.antenna_gain),
         "perfect_csi_tx");
    emit(response_power(ipo.w_rx, ipo.angles_rx, channel_cfg.chi_ant, grid, ResponseSide::receive,
                        channel_cfg.antenna_gain),
         "perfect_csi_rx");
    Rng rng = make_rng(ctx.config.seed, Stream::misc, 2);
    PolarizationAngles rand_tx(h.cols() / 2), rand_rx(h.rows() / 2);
    for (auto& a : rand_tx) a = uniform(rng, 0.0, kHalfPi);
    for (auto& a : rand_rx) a = uniform(rng, 0.0, kHalfPi);
    const SvdBeams rb = svd_beamformers(effective_channel(h, rand_tx, rand_rx));
    emit(response_power(rb.w_tx, rand_tx, channel_cfg.chi_ant, grid, ResponseSide::transmit,
                        channel_cfg.antenna_gain),
         "random_polarization_tx");
    write_text_file(ctx.out / "array_response.csv", csv.str());

    const int heads = ck.config.model.n_heads;
    Json attention{{"tx", export_attention(slice_trace(result.tx_attention, 0, heads))},
                   {"rx", export_attention(slice_trace(result.rx_attention, 0, heads))}};
    write_text_file(ctx.out / "attention.json", attention.dump(1) + "\n");

    std::vector<int> counts = head_counts;
    if (counts.empty())
        for (int k = 1; k <= heads; ++k) counts.push_back(k);
    std::ostringstream ab;
    ab << csv_comment(ctx.config) << "selection,head_count,heads,mean_gain_db,stderr_db\n";
    for (auto sel : {HeadSelection::first, HeadSelection::random}) {
        const auto rows = head_ablation_gain(ck.policies, counts, channel_cfg, protocol,
                                             ctx.eval_episodes(), ctx.eval_seed(), sel, ctx.threads);
        for (const auto& r : rows) {
            ab << (sel == HeadSelection::first ? "first" : "random") << ',' << r.head_count << ',';
            for (std::size_t i = 0; i < r.heads.size(); ++i) ab << (i ? " " : "") << r.heads[i];
            ab << ',' << fmt(r.mean_db) << ',' << fmt(r.stderr_db) << '\n';
        }
    }
    write_text_file(ctx.out / "ablation.csv", ab.str());
}

void run_oracle(const RunContext& ctx, long count, int grid_points) {
    if (count < 1) throw InvalidArgument("oracle: count must be >= 1");
    std::ostringstream csv;
    csv << csv_comment(ctx.config)
        << "channel_seed,ipo_gain_db,grid_gain_db,ratio,sweeps,converged\n";
    Json records = Json::array();
    for (long e = 0; e < count; ++e) {
        const auto ch = experiment_channel(ctx.config.channel, ctx.config.seed, static_cast<std::uint64_t>(e));
        const IpoResult ipo = ipo_optimize(ch.matrix);
        const OracleResult grid = brute_force_polarization_oracle(ch.matrix, grid_points);
        csv << ch.seed << ',' << fmt(to_db(ipo.gain)) << ',' << fmt(to_db(grid.gain)) << ','
            << fmt(ipo.gain / grid.gain) << ',' << ipo.sweeps << ',' << (ipo.converged ? 1 : 0) << '\n';
        records.push_back({{"channel_seed", ch.seed},
                           {"angles_tx", angles_json(ipo.angles_tx)},
                           {"angles_rx", angles_json(ipo.angles_rx)},
                           {"gain_db", to_db(ipo.gain)}});
    }
    write_text_file(ctx.out / "oracle.csv", csv.str());
    write_text_file(ctx.out / "oracle.json", records.dump(1) + "\n");
}

}  // namespace prba
