#include "prba/channel.hpp"

#include <cmath>
#include <fstream>

#include "prba/serialization.hpp"

namespace prba {

void ChannelConfig::validate() const {
    if (n_tx < 1) throw ValidationError("channel.n_tx must be >= 1");
    if (n_rx < 1) throw ValidationError("channel.n_rx must be >= 1");
    if (n_paths < 1) throw ValidationError("channel.n_paths must be >= 1");
    if (!(chi >= 0.0)) throw ValidationError("channel.chi must be >= 0");
    if (!(chi_ant >= 0.0)) throw ValidationError("channel.chi_ant must be >= 0");
    if (psi_mode == PsiMode::fixed && !std::isfinite(psi_value))
        throw ValidationError("channel.psi must be finite");
}

CVector steering_vector(std::size_t n, double phi) {
    if (n == 0) throw InvalidArgument("steering_vector: antenna count must be >= 1");
    CVector a(static_cast<Eigen::Index>(n));
    const double s = std::sin(phi);
    for (std::size_t k = 0; k < n; ++k)
        a(static_cast<Eigen::Index>(k)) = std::polar(1.0, -kPi * static_cast<double>(k) * s);
    return a;
}

Eigen::Matrix2d rotation_matrix(double psi) {
    const double c = std::cos(psi);
    const double s = std::sin(psi);
    Eigen::Matrix2d q;
    q << c, -s, s, c;
    return q;
}

Eigen::Matrix2cd depolarization_matrix(double chi, const std::array<double, 4>& alphas) {
    if (!(chi >= 0.0)) throw InvalidArgument("depolarization_matrix: chi must be >= 0");
    const double leak = std::sqrt(chi);
    Eigen::Matrix2cd x;
    x << std::polar(1.0, alphas[0]), leak * std::polar(1.0, alphas[1]),
        leak * std::polar(1.0, alphas[2]), std::polar(1.0, alphas[3]);
    return std::sqrt(1.0 / (1.0 + chi)) * x;
}

Eigen::Matrix2d antenna_gain_matrix(double chi_ant, AntennaGainForm form) {
    if (!(chi_ant >= 0.0)) throw InvalidArgument("antenna gain: chi_ant must be >= 0");
    const double g_co = 1.0 / (1.0 + chi_ant);
    const double g_x = chi_ant / (1.0 + chi_ant);
    Eigen::Matrix2d j;
    if (form == AntennaGainForm::printed)
        j << g_co, g_x, g_x, -g_x;
    else
        j << g_co, g_x, g_x, g_co;
    return j;
}

RMatrix antenna_gain_blockdiag(std::size_t n, double chi_ant, AntennaGainForm form) {
    if (n == 0) throw InvalidArgument("antenna_gain_blockdiag: antenna count must be >= 1");
    const Eigen::Matrix2d j = antenna_gain_matrix(chi_ant, form);
    const auto dim = static_cast<Eigen::Index>(2 * n);
    RMatrix out = RMatrix::Zero(dim, dim);
    for (Eigen::Index k = 0; k < static_cast<Eigen::Index>(n); ++k)
        out.block<2, 2>(2 * k, 2 * k) = j;
    return out;
}

std::vector<PathParams> sample_paths(const ChannelConfig& config, Rng& rng) {
    config.validate();
    const double psi = config.psi_mode == PsiMode::fixed ? config.psi_value
                                                         : uniform(rng, 0.0, kHalfPi);
    const double gain_scale =
        config.path_gain_normalization == PathGainNormalization::sqrt_paths
            ? 1.0 / std::sqrt(static_cast<double>(config.n_paths))
            : 1.0;
    std::vector<PathParams> paths(config.n_paths);
    for (auto& p : paths) {
        p.beta = gain_scale * complex_normal(rng);
        p.aoa = uniform(rng, -kHalfPi, kHalfPi);
        p.aod = uniform(rng, -kHalfPi, kHalfPi);
        p.alpha_hh = uniform(rng, 0.0, kPi);
        p.alpha_hv = uniform(rng, 0.0, kPi);
        p.alpha_vh = uniform(rng, 0.0, kPi);
        p.alpha_vv = uniform(rng, 0.0, kPi);
        p.psi = psi;
    }
    return paths;
}

DepolarizedChannel assemble_channel(std::vector<PathParams> paths, const ChannelConfig& config) {
    config.validate();
    if (paths.empty()) throw InvalidArgument("assemble_channel: at least one path required");
    const auto nr = static_cast<Eigen::Index>(config.n_rx);
    const auto nt = static_cast<Eigen::Index>(config.n_tx);
    const Eigen::Matrix2d j = antenna_gain_matrix(config.chi_ant, config.antenna_gain);

    CMatrix h = CMatrix::Zero(2 * nr, 2 * nt);
    for (const auto& p : paths) {
        const CVector a_r = steering_vector(config.n_rx, p.aoa);
        const CVector a_t = steering_vector(config.n_tx, p.aod);
        const Eigen::Matrix2cd x =
            depolarization_matrix(config.chi, {p.alpha_hh, p.alpha_hv, p.alpha_vh, p.alpha_vv});
        // Block (i, k) of J_r^T ((beta a_r a_t^T) kron (Q X)) J_t.
        const Eigen::Matrix2cd core = j.transpose().cast<cplx>() *
                                      (rotation_matrix(p.psi).cast<cplx>() * x) * j.cast<cplx>();
        for (Eigen::Index i = 0; i < nr; ++i)
            for (Eigen::Index k = 0; k < nt; ++k)
                h.block<2, 2>(2 * i, 2 * k) += (p.beta * a_r(i) * a_t(k)) * core;
    }
    if (!h.allFinite()) throw NumericFault("assemble_channel: non-finite channel entry");
    return DepolarizedChannel{std::move(h), std::move(paths), config, 0};
}

DepolarizedChannel generate_channel(const ChannelConfig& config, std::uint64_t seed) {
    Rng rng(seed);
    auto channel = assemble_channel(sample_paths(config, rng), config);
    channel.seed = seed;
    return channel;
}

DepolarizedChannel experiment_channel(const ChannelConfig& config, std::uint64_t base_seed,
                                      std::uint64_t index) {
    return generate_channel(config, derive_seed(base_seed, Stream::channel, index));
}

// ---------------------------------------------------------------------------
// JSON

namespace {

const char* psi_mode_name(PsiMode m) { return m == PsiMode::fixed ? "fixed" : "uniform"; }

}  // namespace

Json to_json(const ChannelConfig& c) {
    Json j;
    j["n_tx"] = c.n_tx;
    j["n_rx"] = c.n_rx;
    j["n_paths"] = c.n_paths;
    j["chi"] = c.chi;
    j["chi_ant"] = c.chi_ant;
    j["psi_mode"] = psi_mode_name(c.psi_mode);
    j["psi_value"] = c.psi_value;
    j["path_gain_normalization"] =
        c.path_gain_normalization == PathGainNormalization::none ? "none" : "sqrt_paths";
    j["antenna_gain"] = c.antenna_gain == AntennaGainForm::printed ? "printed" : "symmetric";
    return j;
}

ChannelConfig channel_config_from_json(const Json& j) {
    ChannelConfig c;
    c.n_tx = j.at("n_tx").get<std::size_t>();
    c.n_rx = j.at("n_rx").get<std::size_t>();
    c.n_paths = j.at("n_paths").get<std::size_t>();
    c.chi = j.at("chi").get<double>();
    c.chi_ant = j.at("chi_ant").get<double>();
    c.psi_mode = j.at("psi_mode").get<std::string>() == "fixed" ? PsiMode::fixed : PsiMode::uniform;
    c.psi_value = j.at("psi_value").get<double>();
    c.path_gain_normalization = j.at("path_gain_normalization").get<std::string>() == "none"
                                    ? PathGainNormalization::none
                                    : PathGainNormalization::sqrt_paths;
    c.antenna_gain = j.at("antenna_gain").get<std::string>() == "printed"
                         ? AntennaGainForm::printed
                         : AntennaGainForm::symmetric;
    return c;
}

Json to_json(const PathParams& p) {
    return Json{{"beta", {p.beta.real(), p.beta.imag()}},
                {"aoa", p.aoa},
                {"aod", p.aod},
                {"alpha_hh", p.alpha_hh},
                {"alpha_hv", p.alpha_hv},
                {"alpha_vh", p.alpha_vh},
                {"alpha_vv", p.alpha_vv},
                {"psi", p.psi}};
}

PathParams path_params_from_json(const Json& j) {
    PathParams p;
    const auto& b = j.at("beta");
    p.beta = {b.at(0).get<double>(), b.at(1).get<double>()};
    p.aoa = j.at("aoa").get<double>();
    p.aod = j.at("aod").get<double>();
    p.alpha_hh = j.at("alpha_hh").get<double>();
    p.alpha_hv = j.at("alpha_hv").get<double>();
    p.alpha_vh = j.at("alpha_vh").get<double>();
    p.alpha_vv = j.at("alpha_vv").get<double>();
    p.psi = j.at("psi").get<double>();
    return p;
}

Json complex_matrix_to_json(const CMatrix& m) {
    Json rows = Json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        Json row = Json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back({m(r, c).real(), m(r, c).imag()});
        rows.push_back(std::move(row));
    }
    return rows;
}

CMatrix complex_matrix_from_json(const Json& j) {
    const auto rows = static_cast<Eigen::Index>(j.size());
    const auto cols = rows == 0 ? Eigen::Index{0} : static_cast<Eigen::Index>(j.at(0).size());
    CMatrix m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        const auto& row = j.at(static_cast<std::size_t>(r));
        if (static_cast<Eigen::Index>(row.size()) != cols)
            throw IntegrityError("complex matrix: ragged rows");
        for (Eigen::Index c = 0; c < cols; ++c) {
            const auto& e = row.at(static_cast<std::size_t>(c));
            m(r, c) = {e.at(0).get<double>(), e.at(1).get<double>()};
        }
    }
    return m;
}

void write_channel_corpus(const std::filesystem::path& path,
                          const std::vector<DepolarizedChannel>& channels, bool include_matrix) {
    Json doc;
    doc["schema"] = kChannelCorpusSchema;
    Json records = Json::array();
    for (const auto& ch : channels) {
        Json rec;
        rec["seed"] = ch.seed;
        rec["config"] = to_json(ch.config);
        Json paths = Json::array();
        for (const auto& p : ch.paths) paths.push_back(to_json(p));
        rec["paths"] = std::move(paths);
        if (include_matrix) rec["matrix"] = complex_matrix_to_json(ch.matrix);
        records.push_back(std::move(rec));
    }
    doc["records"] = std::move(records);
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << doc.dump(1) << '\n';
}

std::vector<DepolarizedChannel> read_channel_corpus(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read " + path.string());
    Json doc;
    try {
        doc = Json::parse(in);
    } catch (const Json::parse_error& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
    if (!doc.contains("schema") || doc["schema"] != kChannelCorpusSchema)
        throw UnsupportedVersion("channel corpus: expected schema " +
                                 std::string(kChannelCorpusSchema));
    std::vector<DepolarizedChannel> out;
    for (const auto& rec : doc.at("records")) {
        const auto config = channel_config_from_json(rec.at("config"));
        std::vector<PathParams> paths;
        for (const auto& p : rec.at("paths")) paths.push_back(path_params_from_json(p));
        auto ch = assemble_channel(std::move(paths), config);
        ch.seed = rec.at("seed").get<std::uint64_t>();
        if (rec.contains("matrix")) {
            const CMatrix stored = complex_matrix_from_json(rec["matrix"]);
            if (stored.rows() != ch.matrix.rows() || stored.cols() != ch.matrix.cols())
                throw IntegrityError("channel corpus: stored matrix shape mismatch");
            if ((stored - ch.matrix).cwiseAbs().maxCoeff() > 1e-12)
                throw IntegrityError("channel corpus: stored matrix disagrees with its paths");
        }
        out.push_back(std::move(ch));
    }
    return out;
}

}  // namespace prba
