#include "prba/training.hpp"

#include <cmath>
#include <exception>
#include <mutex>
#include <thread>

namespace prba {

void TrainConfig::validate() const {
    if (!(lr0 > 0.0)) throw ValidationError("train.lr0 must be > 0");
    if (!(gamma > 0.0 && gamma <= 1.0)) throw ValidationError("train.gamma must be in (0, 1]");
    if (batch_size < 1) throw ValidationError("train.batch_size must be >= 1");
    if (batches_per_epoch < 1) throw ValidationError("train.batches_per_epoch must be >= 1");
    if (patience_epochs < 1) throw ValidationError("train.patience_epochs must be >= 1");
    if (max_epochs < 1) throw ValidationError("train.max_epochs must be >= 1");
    if (eval_episodes < 1) throw ValidationError("train.eval_episodes must be >= 1");
    if (threads < 0) throw ValidationError("train.threads must be >= 0");
}

Json to_json(const TrainConfig& c) {
    return Json{{"lr0", c.lr0},
                {"gamma", c.gamma},
                {"batch_size", c.batch_size},
                {"batches_per_epoch", c.batches_per_epoch},
                {"patience_epochs", c.patience_epochs},
                {"max_epochs", c.max_epochs},
                {"max_steps", c.max_steps},
                {"eval_episodes", c.eval_episodes},
                {"seed", c.seed},
                {"per_stage_mean", c.per_stage_mean}};
}

TrainConfig train_config_from_json(const Json& j) {
    TrainConfig c;
    c.lr0 = j.at("lr0").get<double>();
    c.gamma = j.at("gamma").get<double>();
    c.batch_size = j.at("batch_size").get<int>();
    c.batches_per_epoch = j.at("batches_per_epoch").get<int>();
    c.patience_epochs = j.at("patience_epochs").get<int>();
    c.max_epochs = j.at("max_epochs").get<int>();
    c.max_steps = j.at("max_steps").get<long>();
    c.eval_episodes = j.at("eval_episodes").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.per_stage_mean = j.at("per_stage_mean").get<bool>();
    return c;
}

AdamState AdamState::for_parameters(const ParameterSet& params) {
    AdamState s;
    for (const auto& e : params.entries()) {
        s.m.push_back(ad::Matrix::Zero(e.value.rows(), e.value.cols()));
        s.v.push_back(ad::Matrix::Zero(e.value.rows(), e.value.cols()));
    }
    return s;
}

namespace {

Json matrix_json(const ad::Matrix& m) {
    return Json{{"shape", {m.rows(), m.cols()}},
                {"values", std::vector<double>(m.data(), m.data() + m.size())}};
}

ad::Matrix matrix_from(const Json& j) {
    const auto shape = j.at("shape").get<std::vector<ad::Index>>();
    const auto values = j.at("values").get<std::vector<double>>();
    if (shape.size() != 2 || static_cast<ad::Index>(values.size()) != shape[0] * shape[1])
        throw IntegrityError("tensor length does not match its shape");
    ad::Matrix m(shape[0], shape[1]);
    std::copy(values.begin(), values.end(), m.data());
    return m;
}

}  // namespace

Json to_json(const AdamState& s) {
    Json m = Json::array(), v = Json::array();
    for (const auto& x : s.m) m.push_back(matrix_json(x));
    for (const auto& x : s.v) v.push_back(matrix_json(x));
    return Json{{"t", s.t}, {"beta1", s.beta1}, {"beta2", s.beta2}, {"eps", s.eps},
                {"m", m},   {"v", v}};
}

AdamState adam_state_from_json(const Json& j) {
    AdamState s;
    s.t = j.at("t").get<long>();
    s.beta1 = j.at("beta1").get<double>();
    s.beta2 = j.at("beta2").get<double>();
    s.eps = j.at("eps").get<double>();
    for (const auto& x : j.at("m")) s.m.push_back(matrix_from(x));
    for (const auto& x : j.at("v")) s.v.push_back(matrix_from(x));
    return s;
}

void adam_step(ParameterSet& params, const std::vector<ad::Matrix>& grads, AdamState& state,
               double lr) {
    if (grads.size() != params.size() || state.m.size() != params.size())
        throw InvalidArgument("adam_step: gradient/state count does not match parameters");
    for (std::size_t i = 0; i < grads.size(); ++i) {
        const auto& v = params.entry(i).value;
        if (grads[i].rows() != v.rows() || grads[i].cols() != v.cols())
            throw InvalidArgument("adam_step: gradient shape mismatch for " + params.entry(i).name);
        if (params.entry(i).trainable && !grads[i].allFinite())
            throw NumericFault("non-finite gradient for " + params.entry(i).name);
    }
    state.t += 1;
    const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
    const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
    for (std::size_t i = 0; i < grads.size(); ++i) {
        auto& e = params.entry(i);
        if (!e.trainable) continue;
        const auto& g = grads[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g.cwiseAbs2();
        e.value.array() -= lr * (state.m[i].array() / c1) /
                           ((state.v[i].array() / c2).sqrt() + state.eps);
    }
}

double lr_schedule(long t, double lr0, double gamma) {
    if (t < 0) throw InvalidArgument("lr_schedule: t must be >= 0");
    return lr0 * std::pow(gamma, static_cast<double>(t));
}

double episode_loss(const std::vector<EpisodeRecord>& records, bool per_stage_mean) {
    if (records.empty()) throw InvalidArgument("episode_loss: empty batch");
    double total = 0.0;
    for (const auto& r : records) {
        double s = 0.0;
        for (double g : r.gains) s += g;
        if (per_stage_mean) s /= static_cast<double>(r.gains.size());
        total += s;
    }
    return -total / static_cast<double>(records.size());
}

void parallel_for(int count, int threads, const std::function<void(int)>& fn) {
    if (threads == 0) threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    threads = std::min(threads, count);
    if (threads <= 1) {
        for (int i = 0; i < count; ++i) fn(i);
        return;
    }
    std::exception_ptr error;
    std::mutex mu;
    std::vector<std::thread> pool;
    for (int w = 0; w < threads; ++w) {
        pool.emplace_back([&, w] {
            for (int i = w; i < count; i += threads) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(mu);
                    if (!error) error = std::current_exception();
                    return;
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

GradientResult compute_gradients(const Policy& tx, const Policy& rx, const EpisodeBatch& batch,
                                 const ProtocolConfig& protocol, bool per_stage_mean, int threads) {
    const ad::Index B = batch.size();
    int chunks = threads <= 1 ? 1 : static_cast<int>(std::min<ad::Index>(threads, B));
    struct Part {
        double loss = 0.0;
        std::vector<ad::Matrix> tx, rx;
        ad::Matrix gains;
        std::size_t guarded = 0;
    };
    std::vector<Part> parts(static_cast<std::size_t>(chunks));
    parallel_for(chunks, chunks, [&](int c) {
        const ad::Index begin = B * c / chunks;
        const ad::Index end = B * (c + 1) / chunks;
        const EpisodeBatch sub = chunks == 1 ? batch : slice_batch(batch, begin, end - begin);
        ad::Tape tape;
        Bindings tb(tx.parameters(), true);
        Bindings rb(rx.parameters(), true);
        RunOptions options;
        options.loss_denominator = static_cast<double>(B);
        options.per_stage_mean = per_stage_mean;
        auto result = run_batch(tape, tb, rb, tx, rx, sub, protocol, options);
        tape.backward(result.loss);
        auto& p = parts[static_cast<std::size_t>(c)];
        p.loss = result.loss.item();
        p.tx = tb.gradients();
        p.rx = rb.gradients();
        p.gains = std::move(result.gains);
        p.guarded = tape.guarded_normalizations();
    });
    GradientResult out;
    out.tx = std::move(parts[0].tx);
    out.rx = std::move(parts[0].rx);
    out.loss = parts[0].loss;
    out.guarded_normalizations = parts[0].guarded;
    out.gains.resize(B, protocol.n_stages);
    out.gains.topRows(parts[0].gains.rows()) = parts[0].gains;
    ad::Index row = parts[0].gains.rows();
    for (std::size_t c = 1; c < parts.size(); ++c) {
        out.loss += parts[c].loss;
        for (std::size_t i = 0; i < out.tx.size(); ++i) out.tx[i] += parts[c].tx[i];
        for (std::size_t i = 0; i < out.rx.size(); ++i) out.rx[i] += parts[c].rx[i];
        out.gains.middleRows(row, parts[c].gains.rows()) = parts[c].gains;
        row += parts[c].gains.rows();
        out.guarded_normalizations += parts[c].guarded;
    }
    return out;
}

TrainResult train(PolicyPair& pair, const ChannelConfig& channel, const ProtocolConfig& protocol,
                  const TrainConfig& config, const TrainOptions& options) {
    config.validate();
    protocol.validate();
    TrainResult result;
    result.adam_tx = AdamState::for_parameters(pair.tx->parameters());
    result.adam_rx = AdamState::for_parameters(pair.rx->parameters());
    const std::uint64_t data_seed = derive_seed(config.seed, Stream::train);
    const ad::Index B = config.batch_size;

    ParameterSet best_tx = pair.tx->parameters();
    ParameterSet best_rx = pair.rx->parameters();
    int since_best = 0;
    long step = 0;

    for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
        double epoch_sum = 0.0;
        int epoch_steps = 0;
        for (int k = 0; k < config.batches_per_epoch; ++k) {
            if (config.max_steps > 0 && step >= config.max_steps) break;
            const auto first = static_cast<std::uint64_t>(step) * static_cast<std::uint64_t>(B);
            EpisodeBatch batch;
            if (options.fixed_channels) {
                std::vector<CMatrix> chans;
                const auto& fixed = *options.fixed_channels;
                for (ad::Index i = 0; i < B; ++i)
                    chans.push_back(fixed[static_cast<std::size_t>(i) % fixed.size()]);
                batch = batch_from_channels(std::move(chans), protocol, data_seed, first);
            } else {
                batch = make_batch(channel, protocol, data_seed, first, B);
            }
            const double lr = lr_schedule(step, config.lr0, config.gamma);
            GradientResult g;
            try {
                g = compute_gradients(*pair.tx, *pair.rx, batch, protocol, config.per_stage_mean,
                                      config.threads);
            } catch (const NumericFault& e) {
                throw NumericFault("training step " + std::to_string(step) + ": " + e.what());
            }
            auto finite = [](const std::vector<ad::Matrix>& gs) {
                for (const auto& m : gs)
                    if (!m.allFinite()) return false;
                return true;
            };
            if (finite(g.tx) && finite(g.rx)) {
                adam_step(pair.tx->parameters(), g.tx, result.adam_tx, lr);
                adam_step(pair.rx->parameters(), g.rx, result.adam_rx, lr);
            } else {
                ++result.skipped_steps;
            }
            LossRecord rec{step, epoch, g.loss, lr};
            result.history.push_back(rec);
            if (options.on_step) options.on_step(rec);
            epoch_sum += g.loss;
            ++epoch_steps;
            ++step;
        }
        if (epoch_steps == 0) break;
        const double epoch_loss = epoch_sum / epoch_steps;
        result.epoch_losses.push_back(epoch_loss);
        result.epochs_run = epoch + 1;
        const bool improved = result.best_epoch < 0 || epoch_loss < result.best_loss;
        if (improved) {
            result.best_loss = epoch_loss;
            result.best_epoch = epoch;
            best_tx = pair.tx->parameters();
            best_rx = pair.rx->parameters();
            since_best = 0;
        } else {
            ++since_best;
        }
        if (options.on_epoch) options.on_epoch(epoch, epoch_loss, improved);
        if (since_best >= config.patience_epochs) {
            result.early_stopped = true;
            break;
        }
    }
    result.steps = step;
    pair.tx->parameters() = best_tx;
    pair.rx->parameters() = best_rx;
    return result;
}

EvalResult summarize_gains(const ad::Matrix& gains) {
    EvalResult r;
    const auto n = static_cast<double>(gains.rows());
    for (ad::Index l = 0; l < gains.cols(); ++l) {
        double mean = 0.0;
        for (ad::Index e = 0; e < gains.rows(); ++e) mean += gains(e, l);
        mean /= n;
        double ss = 0.0;
        for (ad::Index e = 0; e < gains.rows(); ++e) ss += (gains(e, l) - mean) * (gains(e, l) - mean);
        const double se = gains.rows() > 1 ? std::sqrt(ss / (n - 1.0) / n) : 0.0;
        r.mean_linear.push_back(mean);
        r.stderr_linear.push_back(se);
        r.mean_db.push_back(to_db(mean));
        r.stderr_db.push_back(mean > 0.0 ? 10.0 / std::log(10.0) * se / mean : 0.0);
    }
    r.gains = gains;
    return r;
}

EvalResult evaluate_average_gain(const Policy& tx, const Policy& rx, const ChannelConfig& channel,
                                 const ProtocolConfig& protocol, long episodes, std::uint64_t seed,
                                 int threads, int chunk) {
    if (episodes < 1) throw InvalidArgument("evaluate_average_gain: episodes must be >= 1");
    if (chunk < 1) chunk = 1;
    const int n_chunks = static_cast<int>((episodes + chunk - 1) / chunk);
    ad::Matrix gains(episodes, protocol.n_stages);
    parallel_for(n_chunks, threads, [&](int c) {
        const long first = static_cast<long>(c) * chunk;
        const long count = std::min<long>(chunk, episodes - first);
        auto batch = make_batch(channel, protocol, seed, static_cast<std::uint64_t>(first), count);
        auto result = run_batch(tx, rx, batch, protocol);
        gains.middleRows(first, count) = result.gains;
    });
    return summarize_gains(gains);
}

}  // namespace prba
