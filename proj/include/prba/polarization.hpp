#pragma once

#include <cstdint>
#include <vector>

#include "prba/channel.hpp"
#include "prba/common.hpp"

namespace prba {

// Per-antenna polarization angles, each in [0, pi/2].
using PolarizationAngles = RVector;

void validate_angles(const PolarizationAngles& angles, const char* what = "angles");
void validate_beamformer(const CVector& w, const char* what = "beamformer");

// blkdiag([cos t_0; sin t_0], ..., [cos t_{N-1}; sin t_{N-1}]), shape 2N x N.
RMatrix polarization_matrix(const PolarizationAngles& angles);

// P_rx^T H_dp P_tx.
CMatrix effective_channel(const CMatrix& h_dp, const RMatrix& p_rx, const RMatrix& p_tx);
CMatrix effective_channel(const CMatrix& h_dp, const PolarizationAngles& angles_tx,
                          const PolarizationAngles& angles_rx);

// |w_rx^H P_rx^T H_dp P_tx w_tx|^2. Beamformers must be unit norm (1e-9).
double beamforming_gain(const CMatrix& h_dp, const PolarizationAngles& angles_tx,
                        const PolarizationAngles& angles_rx, const CVector& w_tx,
                        const CVector& w_rx);

struct SvdBeams {
    CVector w_tx;  // leading right singular vector
    CVector w_rx;  // leading left singular vector
    double sigma_max = 0.0;
    bool degenerate = false;  // sigma_1 == sigma_2 within 1e-12 relative
};

// The first entry of each vector with modulus above 1e-12 * max is made real
// nonnegative.
SvdBeams svd_beamformers(const CMatrix& h_eff);

// sigma_max(H)^2; closed forms for vectors and 2x2 matrices.
double largest_singular_value_squared(const CMatrix& h);

struct IpoOptions {
    double tol = 1e-12;      // relative improvement per sweep
    int max_iter = 500;      // sweeps
    double init_angle = kPi / 4.0;
    // Start 0 uses init_angle everywhere; the others draw uniform angles
    // from a stream seeded by `seed`. The best run is returned.
    int starts = 16;
    std::uint64_t seed = 0;
};

struct IpoResult {
    PolarizationAngles angles_tx;
    PolarizationAngles angles_rx;
    CVector w_tx;
    CVector w_rx;
    double gain = 0.0;
    bool converged = false;
    int sweeps = 0;
    std::vector<double> objective;  // sigma_max^2 after init and after every sweep of the returned run
};

// Alternating coordinate ascent over the two angle sets with SVD beamformer
// refreshes after each side update, optionally restarted from several
// initial points.
IpoResult ipo_optimize(const CMatrix& h_dp, const IpoOptions& options = {});

// Maximizes |a cos t + b sin t|^2 over t in [0, pi/2].
double best_angle(cplx a, cplx b);

struct OracleResult {
    PolarizationAngles angles_tx;
    PolarizationAngles angles_rx;
    double gain = 0.0;
    std::uint64_t evaluations = 0;
};

inline constexpr std::uint64_t kDefaultOracleBudget = 10'000'000;

// Exhaustive search over a uniform angle grid {0, ..., pi/2} with
// `grid_points` values per antenna and SVD beamformers at every grid point.
OracleResult brute_force_polarization_oracle(const CMatrix& h_dp, int grid_points,
                                             std::uint64_t max_evaluations = kDefaultOracleBudget);

}  // namespace prba
