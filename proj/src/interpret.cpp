#include "prba/interpret.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace prba {

CMatrix array_net_response(const PolarizationAngles& angles, double chi_ant, double theta,
                           AntennaGainForm form) {
    validate_angles(angles);
    const auto n = static_cast<std::size_t>(angles.size());
    const CVector a = steering_vector(n, theta);
    const Eigen::Matrix2d j = antenna_gain_matrix(chi_ant, form);
    CMatrix out(angles.size(), 2);
    for (Eigen::Index k = 0; k < angles.size(); ++k) {
        const Eigen::Vector2d p(std::cos(angles(k)), std::sin(angles(k)));
        const Eigen::Vector2d jp = j * p;
        out(k, 0) = a(k) * jp(0);
        out(k, 1) = a(k) * jp(1);
    }
    return out;
}

std::vector<double> default_theta_grid(int points) {
    if (points < 2) throw InvalidArgument("theta grid needs at least two points");
    std::vector<double> grid(static_cast<std::size_t>(points));
    for (int i = 0; i < points; ++i) grid[static_cast<std::size_t>(i)] = -kHalfPi + kPi * i / (points - 1);
    return grid;
}

ArrayResponseCurve response_power(const CVector& w, const PolarizationAngles& angles, double chi_ant,
                                  const std::vector<double>& grid, ResponseSide side,
                                  AntennaGainForm form) {
    if (grid.empty()) throw InvalidArgument("response_power: empty grid");
    if (w.size() != angles.size()) throw InvalidArgument("response_power: size mismatch");
    ArrayResponseCurve curve;
    curve.theta = grid;
    for (double theta : grid) {
        const CVector ac = array_net_response(angles, chi_ant, theta, form).col(0);
        const cplx r = side == ResponseSide::transmit ? (ac.transpose() * w)(0) : w.dot(ac);
        curve.power.push_back(std::norm(r));
        curve.power_db.push_back(to_db(std::max(std::norm(r), 1e-300)));
    }
    curve.argmax = static_cast<std::size_t>(
        std::max_element(curve.power.begin(), curve.power.end()) - curve.power.begin());
    curve.argmax_theta = grid[curve.argmax];
    return curve;
}

Json export_attention(const AttentionTrace& trace) {
    if (trace.scores.empty()) throw InvalidArgument("export_attention: empty trace");
    Json layers = Json::array();
    for (std::size_t i = 0; i < trace.scores.size(); ++i) {
        Json heads = Json::array();
        for (std::size_t h = 0; h < trace.scores[i].size(); ++h) {
            const auto& m = trace.scores[i][h];
            Json rows = Json::array();
            for (ad::Index r = 0; r < m.rows(); ++r) {
                if (std::abs(m.row(r).sum() - 1.0) > 1e-6 || (m.row(r).array() < 0.0).any())
                    throw IntegrityError("attention row " + std::to_string(r) + " of layer " +
                                         std::to_string(i) + " head " + std::to_string(h) +
                                         " is not row-stochastic");
                rows.push_back(std::vector<double>(m.row(r).data(), m.row(r).data() + m.cols()));
            }
            heads.push_back({{"head", h}, {"rows", rows}});
        }
        layers.push_back({{"layer", i}, {"heads", heads}});
    }
    return Json{{"layers", layers}};
}

AttentionTrace parse_attention(const Json& j) {
    AttentionTrace trace;
    for (const auto& layer : j.at("layers")) {
        std::vector<ad::Matrix> heads;
        for (const auto& head : layer.at("heads")) {
            const auto rows = head.at("rows").get<std::vector<std::vector<double>>>();
            ad::Matrix m(static_cast<ad::Index>(rows.size()),
                         rows.empty() ? 0 : static_cast<ad::Index>(rows[0].size()));
            for (std::size_t r = 0; r < rows.size(); ++r) {
                if (static_cast<ad::Index>(rows[r].size()) != m.cols())
                    throw IntegrityError("ragged attention matrix");
                for (std::size_t c = 0; c < rows[r].size(); ++c)
                    m(static_cast<ad::Index>(r), static_cast<ad::Index>(c)) = rows[r][c];
                const auto row = m.row(static_cast<ad::Index>(r));
                if (std::abs(row.sum() - 1.0) > 1e-6 || (row.array() < 0.0).any())
                    throw IntegrityError("attention row " + std::to_string(r) + " is not a distribution");
            }
            heads.push_back(std::move(m));
        }
        trace.scores.push_back(std::move(heads));
    }
    return trace;
}

PolicyPair isolate_pair(const PolicyPair& pair, const std::vector<int>& subset) {
    PolicyPair out = clone_pair(pair);
    for (Policy* p : {out.tx.get(), out.rx.get()}) {
        if (p->kind() != PolicyKind::transformer)
            throw InvalidArgument("head isolation needs a transformer policy");
        const auto& c = p->config();
        for (int layer = 0; layer < c.n_layers; ++layer)
            isolate_heads(p->parameters(), layer, subset, c.n_heads, c.d_head());
    }
    return out;
}

std::vector<AblationRow> head_ablation_gain(const PolicyPair& pair, const std::vector<int>& counts,
                                            const ChannelConfig& channel,
                                            const ProtocolConfig& protocol, long episodes,
                                            std::uint64_t seed, HeadSelection selection,
                                            int threads) {
    const int m = pair.tx->config().n_heads;
    std::vector<AblationRow> rows;
    for (int k : counts) {
        if (k < 1 || k > m)
            throw InvalidArgument("head count " + std::to_string(k) + " outside [1, " +
                                  std::to_string(m) + "]");
        std::vector<int> heads(static_cast<std::size_t>(m));
        std::iota(heads.begin(), heads.end(), 0);
        if (selection == HeadSelection::random) {
            Rng rng = make_rng(seed, Stream::ablation, static_cast<std::uint64_t>(k));
            std::shuffle(heads.begin(), heads.end(), rng);
        }
        heads.resize(static_cast<std::size_t>(k));
        std::sort(heads.begin(), heads.end());
        const PolicyPair ablated = isolate_pair(pair, heads);
        const auto eval =
            evaluate_average_gain(*ablated.tx, *ablated.rx, channel, protocol, episodes, seed, threads);
        AblationRow row;
        row.head_count = k;
        row.heads = heads;
        row.mean_linear = eval.mean_linear.back();
        row.mean_db = eval.mean_db.back();
        row.stderr_db = eval.stderr_db.back();
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace prba
