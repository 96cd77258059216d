#pragma once

#include <cmath>
#include <complex>
#include <vector>

#include "magloop/rational_tf.hpp"
#include "magloop/rng.hpp"

namespace testutil {

/// The fitted plant model used throughout:
///   1.6e4 (8e5 - s) / (s^2 + 4.1e5 s + 4e9)
inline magloop::RationalTF fitted_plant() {
    return magloop::RationalTF({1.28e10, -1.6e4}, {4.0e9, 4.1e5, 1.0});
}

inline magloop::RationalTF integrator() { return magloop::RationalTF({1.0}, {0.0, 1.0}); }

inline double rel_err(double got, double want) {
    return std::abs(got - want) / std::max(1e-300, std::abs(want));
}

inline double rel_err(std::complex<double> got, std::complex<double> want) {
    return std::abs(got - want) / std::max(1e-300, std::abs(want));
}

/// Random stable transfer function with the requested pole count and
/// between 0 and max_rhp_zeros right-half-plane zeros.
inline magloop::RationalTF random_stable_tf(magloop::Rng& rng, int n_poles, int n_zeros,
                                            int max_rhp_zeros = 0) {
    using namespace magloop;
    auto rand_log = [&](double lo, double hi) {
        return lo * std::exp(rng.uniform01() * std::log(hi / lo));
    };
    PoleZeroGain pzg;
    int np = 0;
    while (np < n_poles) {
        if (n_poles - np >= 2 && rng.uniform01() < 0.4) {
            const double im = rand_log(1.0, 1e6);
            // damping ratio floor keeps resonances representable in
            // coefficient form without catastrophic sensitivity
            const double re = -std::max(rand_log(1.0, 1e6), 0.1 * im);
            pzg.poles.emplace_back(re, im);
            pzg.poles.emplace_back(re, -im);
            np += 2;
        } else {
            pzg.poles.emplace_back(-rand_log(1.0, 1e6), 0.0);
            np += 1;
        }
    }
    int rhp_budget = max_rhp_zeros;
    int nz = 0;
    while (nz < n_zeros) {
        const bool rhp = rhp_budget > 0 && rng.uniform01() < 0.5;
        const double sign = rhp ? 1.0 : -1.0;
        if (n_zeros - nz >= 2 && rng.uniform01() < 0.3) {
            const double im = rand_log(1.0, 1e6);
            const double re = sign * std::max(rand_log(1.0, 1e6), 0.1 * im);
            pzg.zeros.emplace_back(re, im);
            pzg.zeros.emplace_back(re, -im);
            nz += 2;
            if (rhp) rhp_budget -= 2;
        } else {
            pzg.zeros.emplace_back(sign * rand_log(1.0, 1e6), 0.0);
            nz += 1;
            if (rhp) rhp_budget -= 1;
        }
    }
    pzg.gain = (rng.uniform01() < 0.5 ? -1.0 : 1.0) * rand_log(1e-3, 1e3);
    return to_rational_tf(pzg);
}

} // namespace testutil
