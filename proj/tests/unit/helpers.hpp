#pragma once

#include "doctest.h"
#include "prba/channel.hpp"
#include "prba/random.hpp"

namespace testing {

inline prba::CMatrix random_cmatrix(prba::Rng& rng, Eigen::Index rows, Eigen::Index cols) {
    prba::CMatrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = prba::complex_normal(rng);
    return m;
}

inline prba::CVector random_unit(prba::Rng& rng, Eigen::Index n) {
    prba::CVector v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = prba::complex_normal(rng);
    return v / v.norm();
}

inline prba::RVector random_angles(prba::Rng& rng, Eigen::Index n) {
    prba::RVector a(n);
    for (Eigen::Index i = 0; i < n; ++i) a(i) = prba::uniform(rng, 0.0, prba::kHalfPi);
    return a;
}

inline prba::ChannelConfig small_config(std::size_t n_tx, std::size_t n_rx, std::size_t paths) {
    prba::ChannelConfig c;
    c.n_tx = n_tx;
    c.n_rx = n_rx;
    c.n_paths = paths;
    return c;
}

inline double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300});
}

}  // namespace testing
