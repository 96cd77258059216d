#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "magloop/errors.hpp"
#include "magloop/rational_tf.hpp"

namespace magloop {

/// Split of a stable plant into a minimum-phase part and a unit-magnitude
/// all-pass part carrying the excess phase of right-half-plane zeros.
struct Factorization {
    RationalTF minimum_phase;
    RationalTF all_pass;
};

enum class SignConvention { tracking_minus, paper_plus };

struct ControllerDesign {
    RationalTF weight;       // bandwidth weight W
    RationalTF q_param;      // Q = W / P_mp
    RationalTF controller;   // C
    RationalTF closed_loop;  // T = CP/(1+CP)
    SignConvention convention = SignConvention::tracking_minus;
    bool closed_loop_stable = false;
};

struct StabilityMargins {
    double gain_margin_db = std::numeric_limits<double>::infinity();
    double phase_margin_deg = 0.0;
    double crossover_rad_s = 0.0;
};

/// Reflect every right-half-plane zero of a stable plant into the left half
/// plane and collect the matching first-order all-pass factors
/// (z - s)/(conj(z) + s), arranged into real-coefficient sections.
inline Factorization factor_minphase_allpass(const RationalTF& p) {
    if (is_stable(p) != Stability::stable)
        throw UnstablePlant("factorization requires a strictly stable plant");

    const PoleZeroGain pzg = poles_zeros(p);

    std::vector<Complex> mp_zeros;
    std::vector<Complex> rhp;
    int real_rhp_count = 0;
    for (const Complex& z : pzg.zeros) {
        if (std::abs(z.real()) <= 1e-9 * std::abs(z))
            throw ZeroOnImaginaryAxis("zero at " + std::to_string(z.real()) + "+" +
                                      std::to_string(z.imag()) + "j cannot be reflected");
        if (z.real() > 0.0) {
            rhp.push_back(z);
            mp_zeros.push_back(-std::conj(z));
            if (z.imag() == 0.0) ++real_rhp_count;
        } else {
            mp_zeros.push_back(z);
        }
    }

    // Each real reflected zero flips the sign of the factored-form gain;
    // conjugate pairs do not.
    const double mp_gain = pzg.gain * ((real_rhp_count % 2 == 0) ? 1.0 : -1.0);

    Factorization f;
    f.minimum_phase = RationalTF(poly::scale(poly::from_roots(mp_zeros), mp_gain), p.den);

    std::vector<double> ap_num{1.0}, ap_den{1.0};
    std::vector<bool> used(rhp.size(), false);
    for (std::size_t i = 0; i < rhp.size(); ++i) {
        if (used[i]) continue;
        const Complex z = rhp[i];
        if (z.imag() == 0.0) {
            ap_num = poly::multiply(ap_num, {z.real(), -1.0});
            ap_den = poly::multiply(ap_den, {z.real(), 1.0});
            used[i] = true;
        } else {
            // conjugate partner
            std::size_t partner = i;
            for (std::size_t j = i + 1; j < rhp.size(); ++j) {
                if (!used[j] && std::abs(rhp[j] - std::conj(z)) <= 1e-9 * (1.0 + std::abs(z))) {
                    partner = j;
                    break;
                }
            }
            if (partner == i) throw std::logic_error("unpaired complex zero in all-pass build");
            used[i] = used[partner] = true;
            const double a = z.real(), m = std::norm(z);
            ap_num = poly::multiply(ap_num, {m, -2.0 * a, 1.0});
            ap_den = poly::multiply(ap_den, {m, 2.0 * a, 1.0});
        }
    }
    f.all_pass = RationalTF(ap_num, ap_den);
    return f;
}

/// Single-pole low-pass weight, W(s) = wc/(s + wc), W(0) = 1.
inline RationalTF butterworth1(double fc_hz) {
    if (!(fc_hz > 0.0)) throw std::invalid_argument("corner frequency must be positive");
    const double wc = 2.0 * M_PI * fc_hz;
    return RationalTF({wc}, {wc, 1.0});
}

/// T = CP/(1+CP) by exact polynomial arithmetic.
inline RationalTF closed_loop_T(const RationalTF& c, const RationalTF& p) {
    return tf_combine(c, p, CombineOp::unity_feedback);
}

/// Weighted-Q loop shaping: Q = W/P_mp, then C = Q/(1 - PQ) under the
/// default tracking_minus convention (closed loop T = PQ = W * P_ap), or
/// C = Q/(1 + PQ) under paper_plus (T = PQ/(1+2PQ), kept for comparison;
/// it neither tracks at DC nor yields a stable loop for the nominal plant).
inline ControllerDesign synthesize_controller(const RationalTF& p, const RationalTF& w,
                                              SignConvention convention = SignConvention::tracking_minus) {
    const Factorization f = factor_minphase_allpass(p);

    const int w_reldeg = w.relative_degree();
    const int mp_reldeg = f.minimum_phase.relative_degree();
    if (w_reldeg < mp_reldeg)
        throw ImproperQ("weight relative degree " + std::to_string(w_reldeg) +
                        " is below the minimum-phase plant relative degree " + std::to_string(mp_reldeg));

    ControllerDesign design;
    design.weight = w;
    design.convention = convention;
    design.q_param = divide(w, f.minimum_phase);

    const RationalTF pq = p * design.q_param;
    const RationalTF one = RationalTF::constant(1.0);
    RationalTF denom = (convention == SignConvention::tracking_minus) ? (one - pq) : (one + pq);
    // PQ = W * P_ap has unit DC gain by construction, so under tracking_minus
    // the constant term of 1 - PQ vanishes algebraically. Flush the rounding
    // residue so the controller carries an exact integrator pole; that pole is
    // what makes DC tracking independent of plant gain.
    if (std::abs(denom.num[0]) <= 1e-9 * std::abs(denom.den[0])) denom.num[0] = 0.0;
    design.controller = divide(design.q_param, denom);
    design.closed_loop = closed_loop_T(design.controller, p);
    design.closed_loop_stable = is_stable(design.closed_loop) != Stability::unstable;

    if (convention == SignConvention::tracking_minus && !design.closed_loop_stable)
        throw UnstableClosedLoop("closed loop has right-half-plane poles");
    return design;
}

/// Worst-case |1 - T(jw)| over a 500-point log grid spanning the band.
inline double tracking_error_norm(const RationalTF& t, double omega_lo, double omega_hi) {
    if (!(omega_lo > 0.0) || !(omega_hi > omega_lo))
        throw std::invalid_argument("band must satisfy 0 < omega_lo < omega_hi");
    double sup = 0.0;
    for (double w : log_grid(omega_lo, omega_hi, 500))
        sup = std::max(sup, std::abs(Complex(1.0) - tf_evaluate(t, w)));
    return sup;
}

namespace detail {

/// Refine a bracketed crossing of fn (sign change between lo and hi) by
/// bisection on log frequency, to 1e-6 relative.
template <typename Fn>
double bisect_log(Fn&& fn, double lo, double hi) {
    double flo = fn(lo);
    for (int it = 0; it < 80 && (hi - lo) > 1e-6 * lo; ++it) {
        const double mid = std::sqrt(lo * hi);
        const double fmid = fn(mid);
        if ((flo <= 0.0) == (fmid <= 0.0)) {
            lo = mid;
            flo = fmid;
        } else {
            hi = mid;
        }
    }
    return std::sqrt(lo * hi);
}

} // namespace detail

/// Gain and phase margins from a scan over [1, 1e8] rad/s (2000 log points,
/// bisection refinement). Reports the worst margin when several crossings
/// exist; gain margin is +inf when the phase never reaches -180 degrees.
inline StabilityMargins stability_margins(const RationalTF& l) {
    const auto grid = log_grid(1.0, 1e8, 2000);
    const FrequencyResponse fr = bode(l, grid);

    StabilityMargins m;
    bool found_unity = false;
    double worst_pm = std::numeric_limits<double>::infinity();

    auto mag_minus_1 = [&](double w) { return std::abs(tf_evaluate(l, w)) - 1.0; };

    for (std::size_t i = 1; i < fr.size(); ++i) {
        const double g0 = std::abs(fr.value[i - 1]) - 1.0;
        const double g1 = std::abs(fr.value[i]) - 1.0;
        const bool touches = g0 == 0.0; // crossing exactly on a grid point
        if (!touches && g0 * g1 >= 0.0) continue;
        {
            const double wc = touches ? grid[i - 1] : detail::bisect_log(mag_minus_1, grid[i - 1], grid[i]);
            // continue the unwrapped phase from the nearest grid point
            const double phase = detail::unwrap_step(l, grid[i - 1], fr.phase_rad[i - 1], wc);
            const double pm = 180.0 + phase * 180.0 / M_PI;
            if (!found_unity || pm < worst_pm) {
                worst_pm = pm;
                m.crossover_rad_s = wc;
            }
            found_unity = true;
        }
    }
    if (!found_unity) throw NoCrossover("|L| never crosses unity on [1, 1e8] rad/s");
    m.phase_margin_deg = worst_pm;

    double worst_gm = std::numeric_limits<double>::infinity();
    for (std::size_t i = 1; i < fr.size(); ++i) {
        // phase crossings of -180 deg (any odd multiple counts against margin)
        const double p0 = fr.phase_rad[i - 1] + M_PI;
        const double p1 = fr.phase_rad[i] + M_PI;
        if ((p0 <= 0.0) != (p1 <= 0.0)) {
            auto phase_plus_180 = [&](double w) {
                return detail::unwrap_step(l, grid[i - 1], fr.phase_rad[i - 1], w) + M_PI;
            };
            const double w180 = detail::bisect_log(phase_plus_180, grid[i - 1], grid[i]);
            const double gm = -20.0 * std::log10(std::abs(tf_evaluate(l, w180)));
            worst_gm = std::min(worst_gm, gm);
        }
    }
    m.gain_margin_db = worst_gm;
    return m;
}

} // namespace magloop
