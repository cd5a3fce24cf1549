#include "prba/polarization.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace prba {

void validate_angles(const PolarizationAngles& angles, const char* what) {
    for (Eigen::Index k = 0; k < angles.size(); ++k) {
        const double t = angles(k);
        if (!(t >= 0.0 && t <= kHalfPi))
            throw InvalidArgument(std::string(what) + ": angle " + std::to_string(k) + " = " +
                                  std::to_string(t) + " outside [0, pi/2]");
    }
}

void validate_beamformer(const CVector& w, const char* what) {
    const double norm = w.norm();
    if (!(std::abs(norm - 1.0) <= 1e-9))
        throw InvalidArgument(std::string(what) + ": norm " + std::to_string(norm) + " != 1");
}

RMatrix polarization_matrix(const PolarizationAngles& angles) {
    validate_angles(angles);
    const Eigen::Index n = angles.size();
    RMatrix p = RMatrix::Zero(2 * n, n);
    for (Eigen::Index k = 0; k < n; ++k) {
        p(2 * k, k) = std::cos(angles(k));
        p(2 * k + 1, k) = std::sin(angles(k));
    }
    return p;
}

CMatrix effective_channel(const CMatrix& h_dp, const RMatrix& p_rx, const RMatrix& p_tx) {
    if (h_dp.rows() != p_rx.rows() || h_dp.cols() != p_tx.rows())
        throw InvalidArgument("effective_channel: dimension mismatch");
    return p_rx.transpose().cast<cplx>() * h_dp * p_tx.cast<cplx>();
}

CMatrix effective_channel(const CMatrix& h_dp, const PolarizationAngles& angles_tx,
                          const PolarizationAngles& angles_rx) {
    return effective_channel(h_dp, polarization_matrix(angles_rx), polarization_matrix(angles_tx));
}

double beamforming_gain(const CMatrix& h_dp, const PolarizationAngles& angles_tx,
                        const PolarizationAngles& angles_rx, const CVector& w_tx,
                        const CVector& w_rx) {
    validate_beamformer(w_tx, "w_tx");
    validate_beamformer(w_rx, "w_rx");
    const CMatrix h_eff = effective_channel(h_dp, angles_tx, angles_rx);
    if (h_eff.cols() != w_tx.size() || h_eff.rows() != w_rx.size())
        throw InvalidArgument("beamforming_gain: beamformer length mismatch");
    return std::norm(w_rx.dot(h_eff * w_tx));  // dot() conjugates its left side
}

namespace {

void fix_phase(CVector& v) {
    const double scale = v.cwiseAbs().maxCoeff();
    for (Eigen::Index k = 0; k < v.size(); ++k) {
        if (std::abs(v(k)) > 1e-12 * scale) {
            v *= std::conj(v(k)) / std::abs(v(k));
            v(k) = std::abs(v(k));
            return;
        }
    }
}

}  // namespace

SvdBeams svd_beamformers(const CMatrix& h_eff) {
    if (h_eff.size() == 0 || !h_eff.allFinite())
        throw InvalidArgument("svd_beamformers: matrix must be finite and nonempty");
    if (h_eff.cwiseAbs().maxCoeff() == 0.0)
        throw DegenerateInput("svd_beamformers: all-zero matrix");
    Eigen::JacobiSVD<CMatrix> svd(h_eff, Eigen::ComputeThinU | Eigen::ComputeThinV);
    SvdBeams out;
    out.w_rx = svd.matrixU().col(0);
    out.w_tx = svd.matrixV().col(0);
    out.w_rx.normalize();
    out.w_tx.normalize();
    fix_phase(out.w_rx);
    fix_phase(out.w_tx);
    const auto& s = svd.singularValues();
    out.sigma_max = s(0);
    out.degenerate = s.size() > 1 && (s(0) - s(1)) <= 1e-12 * s(0);
    return out;
}

double largest_singular_value_squared(const CMatrix& h) {
    if (h.rows() == 1 || h.cols() == 1) return h.squaredNorm();
    if (h.rows() == 2 && h.cols() == 2) {
        const double fro = h.squaredNorm();
        const double det = std::norm(h(0, 0) * h(1, 1) - h(0, 1) * h(1, 0));
        return 0.5 * (fro + std::sqrt(std::max(0.0, fro * fro - 4.0 * det)));
    }
    Eigen::JacobiSVD<CMatrix> svd(h);
    const double s = svd.singularValues()(0);
    return s * s;
}

double best_angle(cplx a, cplx b) {
    // |a cos t + b sin t|^2 = [c s] G [c s]^T with G real symmetric; its
    // maximizer over a period is the principal axis of G.
    const double gaa = std::norm(a);
    const double gbb = std::norm(b);
    const double gab = std::real(std::conj(a) * b);
    auto value = [&](double t) {
        const double c = std::cos(t);
        const double s = std::sin(t);
        return gaa * c * c + gbb * s * s + 2.0 * gab * c * s;
    };
    double axis = 0.5 * std::atan2(2.0 * gab, gaa - gbb);  // in (-pi/2, pi/2]
    if (axis < 0.0) axis += kPi;                             // in [0, pi)
    double best = 0.0;
    double best_value = value(0.0);
    if (axis <= kHalfPi && value(axis) > best_value) {
        best = axis;
        best_value = value(axis);
    }
    if (value(kHalfPi) > best_value) best = kHalfPi;
    return best;
}

namespace {

// With the far side (angles and beamformer) held fixed, the near-side
// objective max_w |sum_k (c_2k cos t_k + c_2k+1 sin t_k) w_k|^2 separates per
// antenna.
PolarizationAngles optimize_side(const CVector& coupling) {
    const Eigen::Index n = coupling.size() / 2;
    PolarizationAngles angles(n);
    for (Eigen::Index k = 0; k < n; ++k) angles(k) = best_angle(coupling(2 * k), coupling(2 * k + 1));
    return angles;
}

}  // namespace

namespace {

IpoResult ipo_from(const CMatrix& h_dp, PolarizationAngles init_tx, PolarizationAngles init_rx,
                   const IpoOptions& options) {
    IpoResult r;
    r.angles_tx = std::move(init_tx);
    r.angles_rx = std::move(init_rx);
    SvdBeams beams = svd_beamformers(effective_channel(h_dp, r.angles_tx, r.angles_rx));
    double current = beams.sigma_max * beams.sigma_max;
    r.objective.push_back(current);

    for (int sweep = 0; sweep < options.max_iter; ++sweep) {
        // Tx side: coupling c = (P_rx w_rx)^H H_dp, length 2 N_t.
        const CVector q_rx = polarization_matrix(r.angles_rx).cast<cplx>() * beams.w_rx;
        const CVector c_tx = (q_rx.adjoint() * h_dp).transpose();
        PolarizationAngles next_tx = optimize_side(c_tx);
        SvdBeams next = svd_beamformers(effective_channel(h_dp, next_tx, r.angles_rx));

        // Rx side: coupling d = conj(H_dp P_tx w_tx), length 2 N_r.
        const CVector d_rx =
            (h_dp * (polarization_matrix(next_tx).cast<cplx>() * next.w_tx)).conjugate();
        PolarizationAngles next_rx = optimize_side(d_rx);
        next = svd_beamformers(effective_channel(h_dp, next_tx, next_rx));
        const double value = next.sigma_max * next.sigma_max;

        r.sweeps = sweep + 1;
        // Ascent holds by construction; a roundoff-level dip is treated as
        // convergence and the previous iterate kept.
        if (value < current) {
            r.objective.push_back(current);
            r.converged = true;
            break;
        }
        const double improvement = value - current;
        r.angles_tx = std::move(next_tx);
        r.angles_rx = std::move(next_rx);
        beams = std::move(next);
        current = value;
        r.objective.push_back(current);
        if (improvement <= options.tol * current) {
            r.converged = true;
            break;
        }
    }
    r.w_tx = beams.w_tx;
    r.w_rx = beams.w_rx;
    r.gain = current;
    return r;
}

}  // namespace

IpoResult ipo_optimize(const CMatrix& h_dp, const IpoOptions& options) {
    if (!(options.tol > 0.0)) throw InvalidArgument("ipo_optimize: tol must be > 0");
    if (options.starts < 1) throw InvalidArgument("ipo_optimize: starts must be >= 1");
    if (h_dp.rows() % 2 != 0 || h_dp.cols() % 2 != 0)
        throw InvalidArgument("ipo_optimize: channel dimensions must be even");
    const Eigen::Index nr = h_dp.rows() / 2;
    const Eigen::Index nt = h_dp.cols() / 2;

    IpoResult best = ipo_from(h_dp, PolarizationAngles::Constant(nt, options.init_angle),
                              PolarizationAngles::Constant(nr, options.init_angle), options);
    Rng rng(options.seed);
    for (int s = 1; s < options.starts; ++s) {
        PolarizationAngles tx(nt), rx(nr);
        for (Eigen::Index k = 0; k < nt; ++k) tx(k) = uniform(rng, 0.0, kHalfPi);
        for (Eigen::Index k = 0; k < nr; ++k) rx(k) = uniform(rng, 0.0, kHalfPi);
        IpoResult r = ipo_from(h_dp, std::move(tx), std::move(rx), options);
        if (r.gain > best.gain) best = std::move(r);
    }
    return best;
}

OracleResult brute_force_polarization_oracle(const CMatrix& h_dp, int grid_points,
                                             std::uint64_t max_evaluations) {
    if (grid_points < 2) throw InvalidArgument("oracle: grid_points must be >= 2");
    const Eigen::Index nr = h_dp.rows() / 2;
    const Eigen::Index nt = h_dp.cols() / 2;
    const auto g = static_cast<std::uint64_t>(grid_points);
    std::uint64_t total = 1;
    for (Eigen::Index k = 0; k < nt + nr; ++k) {
        if (total > max_evaluations / g + 1)
            throw InvalidArgument("oracle: grid exceeds evaluation budget");
        total *= g;
    }
    if (total > max_evaluations) throw InvalidArgument("oracle: grid exceeds evaluation budget");

    std::vector<double> grid(grid_points), cs(grid_points), sn(grid_points);
    for (int j = 0; j < grid_points; ++j) {
        grid[j] = kHalfPi * j / (grid_points - 1);
        cs[j] = std::cos(grid[j]);
        sn[j] = std::sin(grid[j]);
    }

    OracleResult best;
    best.gain = -1.0;
    std::vector<int> idx_tx(nt, 0), idx_rx(nr, 0);
    auto advance = [&](std::vector<int>& idx) {
        for (auto& i : idx) {
            if (++i < grid_points) return true;
            i = 0;
        }
        return false;
    };

    // rows[i][j] = row i of H_eff for rx antenna i at grid angle j, given the
    // current Tx combination.
    std::vector<CMatrix> rows(nr, CMatrix(grid_points, nt));
    CMatrix h_eff(nr, nt);
    do {
        PolarizationAngles a_tx(nt);
        for (Eigen::Index k = 0; k < nt; ++k) a_tx(k) = grid[idx_tx[k]];
        const CMatrix g_mat = h_dp * polarization_matrix(a_tx).cast<cplx>();  // 2 N_r x N_t
        for (Eigen::Index i = 0; i < nr; ++i)
            for (int j = 0; j < grid_points; ++j)
                rows[i].row(j) = cs[j] * g_mat.row(2 * i) + sn[j] * g_mat.row(2 * i + 1);
        std::fill(idx_rx.begin(), idx_rx.end(), 0);
        do {
            for (Eigen::Index i = 0; i < nr; ++i) h_eff.row(i) = rows[i].row(idx_rx[i]);
            const double value = largest_singular_value_squared(h_eff);
            ++best.evaluations;
            if (value > best.gain) {
                best.gain = value;
                best.angles_tx = a_tx;
                best.angles_rx.resize(nr);
                for (Eigen::Index i = 0; i < nr; ++i) best.angles_rx(i) = grid[idx_rx[i]];
            }
        } while (advance(idx_rx));
    } while (advance(idx_tx));
    return best;
}

}  // namespace prba
