#include <filesystem>

#include "helpers.hpp"
#include "prba/serialization.hpp"

using namespace prba;

TEST_CASE("steering vector closed form") {
    auto a = steering_vector(4, 0.0);
    for (int k = 0; k < 4; ++k) CHECK(std::abs(a(k) - cplx(1, 0)) < 1e-15);

    auto b = steering_vector(2, kHalfPi);
    CHECK(std::abs(b(0) - cplx(1, 0)) < 1e-15);
    CHECK(std::abs(b(1) - cplx(-1, 0)) < 1e-15);

    // exp(-j pi k sin 0.3), evaluated separately
    auto c = steering_vector(3, 0.3);
    CHECK(std::abs(c(1) - cplx(0.5991125175028562, -0.8006648433466963)) < 1e-12);
    CHECK(std::abs(c(2) - cplx(-0.28212838274277957, -0.9593766599469385)) < 1e-12);

    CHECK_THROWS_AS(steering_vector(0, 0.1), InvalidArgument);
}

TEST_CASE("steering entries have unit modulus") {
    Rng rng(11);
    for (int t = 0; t < 50; ++t) {
        const double phi = uniform(rng, -kHalfPi, kHalfPi);
        auto a = steering_vector(1 + t % 17, phi);
        for (Eigen::Index k = 0; k < a.size(); ++k) CHECK(std::abs(std::abs(a(k)) - 1.0) < 1e-12);
    }
}

TEST_CASE("rotation matrix") {
    CHECK((rotation_matrix(0.0) - Eigen::Matrix2d::Identity()).norm() < 1e-15);
    Eigen::Matrix2d q;
    q << 0, -1, 1, 0;
    CHECK((rotation_matrix(kHalfPi) - q).norm() < 1e-15);
    CHECK(std::abs(rotation_matrix(0.7).determinant() - 1.0) < 1e-12);
    CHECK(rotation_matrix(0.7)(0, 1) == doctest::Approx(-std::sin(0.7)).epsilon(1e-15));

    Rng rng(3);
    for (int t = 0; t < 100; ++t) {
        auto r = rotation_matrix(uniform(rng, -10, 10));
        CHECK((r.transpose() * r - Eigen::Matrix2d::Identity()).norm() < 1e-12);
        CHECK(std::abs(r.determinant() - 1.0) < 1e-12);
    }
}

TEST_CASE("depolarization matrix") {
    auto x0 = depolarization_matrix(0.0, {0, 0, 0, 0});
    CHECK((x0 - Eigen::Matrix2cd::Identity()).norm() < 1e-15);

    auto x = depolarization_matrix(0.2, {0, 0, 0, 0});
    CHECK(std::abs(x(0, 0) - 0.9128709291752769) < 1e-12);
    CHECK(std::abs(x(0, 1) - 0.408248290463863) < 1e-12);
    CHECK(std::abs(x(1, 0) - 0.408248290463863) < 1e-12);

    Rng rng(5);
    for (int t = 0; t < 100; ++t) {
        const double chi = uniform(rng, 0, 3);
        std::array<double, 4> alphas{};
        for (auto& a : alphas) a = uniform(rng, 0, kPi);
        CHECK(std::abs(depolarization_matrix(chi, alphas).squaredNorm() - 2.0) < 1e-12);
    }
    CHECK_THROWS_AS(depolarization_matrix(-0.1, {0, 0, 0, 0}), InvalidArgument);
}

TEST_CASE("antenna gain block diagonal") {
    auto j1 = antenna_gain_blockdiag(1, 0.0);
    CHECK(j1(0, 0) == 1.0);
    CHECK(j1(0, 1) == 0.0);
    CHECK(j1(1, 0) == 0.0);
    CHECK(j1(1, 1) == 0.0);

    auto j2 = antenna_gain_blockdiag(2, 0.3);
    for (int b = 0; b < 2; ++b) {
        CHECK(j2(2 * b, 2 * b) == doctest::Approx(0.7692307692307692).epsilon(1e-12));
        CHECK(j2(2 * b, 2 * b + 1) == doctest::Approx(0.23076923076923075).epsilon(1e-12));
        CHECK(j2(2 * b + 1, 2 * b) == doctest::Approx(0.23076923076923075).epsilon(1e-12));
        CHECK(j2(2 * b + 1, 2 * b + 1) == doctest::Approx(-0.23076923076923075).epsilon(1e-12));
    }
    CHECK(j2(0, 2) == 0.0);
    CHECK(j2(3, 0) == 0.0);

    auto js = antenna_gain_blockdiag(1, 0.3, AntennaGainForm::symmetric);
    CHECK(js(1, 1) == doctest::Approx(0.7692307692307692));

    for (std::size_t n = 1; n < 7; ++n) {
        auto j = antenna_gain_blockdiag(n, 0.4);
        CHECK((j.array() != 0.0).count() <= static_cast<Eigen::Index>(4 * n));
    }
    CHECK_THROWS_AS(antenna_gain_blockdiag(0, 0.3), InvalidArgument);
}

TEST_CASE("sample_paths replay and moments") {
    ChannelConfig c = testing::small_config(2, 2, 1);
    Rng a(42), b(42);
    auto pa = sample_paths(c, a);
    auto pb = sample_paths(c, b);
    REQUIRE(pa.size() == 1);
    CHECK(pa[0].beta == pb[0].beta);
    CHECK(pa[0].aoa == pb[0].aoa);
    CHECK(pa[0].alpha_vv == pb[0].alpha_vv);
    CHECK(pa[0].psi == pb[0].psi);

    Rng rng(7);
    double beta2 = 0.0, alpha = 0.0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
        auto p = sample_paths(c, rng)[0];
        beta2 += std::norm(p.beta);
        alpha += p.alpha_hh;
        CHECK(p.alpha_hh >= 0.0);
        CHECK(p.alpha_hh < kPi);
        CHECK(std::abs(p.aoa) <= kHalfPi);
        CHECK(std::abs(p.aod) <= kHalfPi);
        CHECK(p.psi >= 0.0);
        CHECK(p.psi < kHalfPi);
    }
    CHECK(std::abs(beta2 / n - 1.0) < 0.02);
    CHECK(std::abs(alpha / n - kHalfPi) < 0.01);
}

TEST_CASE("path gain normalization divides by sqrt(P)") {
    ChannelConfig c = testing::small_config(1, 1, 4);
    c.path_gain_normalization = PathGainNormalization::sqrt_paths;
    Rng rng(9);
    double total = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i)
        for (const auto& p : sample_paths(c, rng)) total += std::norm(p.beta);
    CHECK(std::abs(total / n - 1.0) < 0.03);
}

namespace {

// Entry (2i+a, 2k+b) of sum_p J^T (beta a_r a_t^T (x) Q X) J, evaluated
// one scalar at a time.
CMatrix naive_channel(const std::vector<PathParams>& paths, const ChannelConfig& c) {
    CMatrix h = CMatrix::Zero(2 * c.n_rx, 2 * c.n_tx);
    const double gc = 1.0 / (1.0 + c.chi_ant), gx = c.chi_ant / (1.0 + c.chi_ant);
    const double j[2][2] = {{gc, gx}, {gx, c.antenna_gain == AntennaGainForm::printed ? -gx : gc}};
    for (const auto& p : paths) {
        const double s = std::sqrt(1.0 / (1.0 + c.chi));
        const cplx x[2][2] = {{s * std::polar(1.0, p.alpha_hh), s * std::sqrt(c.chi) * std::polar(1.0, p.alpha_hv)},
                              {s * std::sqrt(c.chi) * std::polar(1.0, p.alpha_vh), s * std::polar(1.0, p.alpha_vv)}};
        const double q[2][2] = {{std::cos(p.psi), -std::sin(p.psi)}, {std::sin(p.psi), std::cos(p.psi)}};
        cplx qx[2][2];
        for (int r = 0; r < 2; ++r)
            for (int t = 0; t < 2; ++t) qx[r][t] = q[r][0] * x[0][t] + q[r][1] * x[1][t];
        for (std::size_t i = 0; i < c.n_rx; ++i)
            for (std::size_t k = 0; k < c.n_tx; ++k) {
                const cplx ar = std::exp(cplx(0, -kPi * i * std::sin(p.aoa)));
                const cplx at = std::exp(cplx(0, -kPi * k * std::sin(p.aod)));
                for (int a = 0; a < 2; ++a)
                    for (int b = 0; b < 2; ++b) {
                        cplx acc = 0;
                        for (int cc = 0; cc < 2; ++cc)
                            for (int d = 0; d < 2; ++d) acc += j[cc][a] * qx[cc][d] * j[d][b];
                        h(2 * i + a, 2 * k + b) += p.beta * ar * at * acc;
                    }
            }
    }
    return h;
}

}  // namespace

TEST_CASE("assemble_channel trivial collapse") {
    ChannelConfig c = testing::small_config(1, 1, 1);
    c.chi = 0.0;
    c.chi_ant = 0.0;
    PathParams p;
    auto h = assemble_channel({p}, c).matrix;
    CHECK(std::abs(h(0, 0) - cplx(1, 0)) < 1e-15);
    CHECK(std::abs(h(0, 1)) < 1e-15);
    CHECK(std::abs(h(1, 0)) < 1e-15);
    CHECK(std::abs(h(1, 1)) < 1e-15);
}

TEST_CASE("assemble_channel is linear in beta") {
    ChannelConfig c = testing::small_config(3, 2, 2);
    Rng rng(1);
    auto paths = sample_paths(c, rng);
    auto h1 = assemble_channel(paths, c).matrix;
    for (auto& p : paths) p.beta *= 2.0;
    auto h2 = assemble_channel(paths, c).matrix;
    CHECK((h2 - 2.0 * h1).norm() < 1e-12);
}

TEST_CASE("assemble_channel matches the naive sum") {
    Rng rng(2024);
    for (std::size_t nt = 1; nt <= 3; ++nt)
        for (std::size_t nr = 1; nr <= 3; ++nr)
            for (std::size_t p = 1; p <= 3; ++p)
                for (auto form : {AntennaGainForm::printed, AntennaGainForm::symmetric}) {
                    ChannelConfig c = testing::small_config(nt, nr, p);
                    c.antenna_gain = form;
                    auto paths = sample_paths(c, rng);
                    auto h = assemble_channel(paths, c).matrix;
                    REQUIRE(h.rows() == static_cast<Eigen::Index>(2 * nr));
                    REQUIRE(h.cols() == static_cast<Eigen::Index>(2 * nt));
                    CHECK((h - naive_channel(paths, c)).cwiseAbs().maxCoeff() < 1e-12);
                }
}

TEST_CASE("channel generation is seeded") {
    ChannelConfig c = testing::small_config(4, 3, 2);
    auto a = generate_channel(c, 5);
    auto b = generate_channel(c, 5);
    auto d = generate_channel(c, 6);
    CHECK(a.matrix == b.matrix);
    CHECK(a.matrix != d.matrix);
    CHECK(a.matrix.allFinite());
}

TEST_CASE("config validation") {
    ChannelConfig c;
    c.n_tx = 0;
    CHECK_THROWS_AS(c.validate(), ValidationError);
    c = ChannelConfig{};
    c.chi = -0.5;
    CHECK_THROWS_AS(c.validate(), ValidationError);
}

TEST_CASE("channel corpus round trip") {
    ChannelConfig c = testing::small_config(3, 2, 2);
    std::vector<DepolarizedChannel> chans;
    for (int i = 0; i < 4; ++i) chans.push_back(experiment_channel(c, 77, i));
    auto path = std::filesystem::temp_directory_path() / "prba_corpus_test.json";
    write_channel_corpus(path, chans, true);
    auto back = read_channel_corpus(path);
    REQUIRE(back.size() == chans.size());
    for (std::size_t i = 0; i < chans.size(); ++i) {
        CHECK(back[i].seed == chans[i].seed);
        CHECK((back[i].matrix - chans[i].matrix).norm() < 1e-12);
    }
    std::filesystem::remove(path);
}
