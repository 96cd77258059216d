#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <limits>
#include <vector>

#include <Eigen/Dense>

#include "magloop/errors.hpp"

namespace magloop {

using Complex = std::complex<double>;

namespace poly {

/// Polynomials are coefficient vectors in ascending powers of s.

inline int degree(const std::vector<double>& p) { return static_cast<int>(p.size()) - 1; }

inline double max_abs_coeff(const std::vector<double>& p) {
    double m = 0.0;
    for (double c : p) m = std::max(m, std::abs(c));
    return m;
}

/// Drop exactly-zero leading coefficients so the degree is meaningful.
/// Coefficients of a polynomial with widely spread roots legitimately span
/// many orders of magnitude, so no relative threshold is applied here.
inline std::vector<double> trim(std::vector<double> p) {
    while (p.size() > 1 && p.back() == 0.0) p.pop_back();
    if (p.empty()) p.push_back(0.0);
    return p;
}

inline bool is_zero(const std::vector<double>& p) {
    for (double c : p)
        if (c != 0.0) return false;
    return true;
}

inline std::vector<double> multiply(const std::vector<double>& a, const std::vector<double>& b) {
    std::vector<double> out(a.size() + b.size() - 1, 0.0);
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < b.size(); ++j) out[i + j] += a[i] * b[j];
    return out;
}

/// Coefficient-wise sum. Entries that cancel down to rounding noise of
/// their contributions are flushed to exact zero so they cannot masquerade
/// as genuine higher-degree terms.
inline std::vector<double> add(const std::vector<double>& a, const std::vector<double>& b) {
    std::vector<double> out(std::max(a.size(), b.size()), 0.0);
    std::vector<double> mag(out.size(), 0.0);
    for (std::size_t i = 0; i < a.size(); ++i) {
        out[i] += a[i];
        mag[i] += std::abs(a[i]);
    }
    for (std::size_t i = 0; i < b.size(); ++i) {
        out[i] += b[i];
        mag[i] += std::abs(b[i]);
    }
    constexpr double eps_flush = 64.0 * std::numeric_limits<double>::epsilon();
    for (std::size_t i = 0; i < out.size(); ++i)
        if (std::abs(out[i]) <= eps_flush * mag[i]) out[i] = 0.0;
    return out;
}

inline std::vector<double> scale(std::vector<double> p, double k) {
    for (double& c : p) c *= k;
    return p;
}

template <typename Scalar>
Scalar evaluate(const std::vector<double>& p, Scalar s) {
    Scalar acc{};
    for (auto it = p.rbegin(); it != p.rend(); ++it) acc = acc * s + Scalar(*it);
    return acc;
}

inline Complex derivative_at(const std::vector<double>& p, Complex s) {
    Complex acc{};
    for (int k = degree(p); k >= 1; --k) acc = acc * s + Complex(p[k] * k);
    return acc;
}

/// All roots. Closed form through degree 2, companion-matrix eigenvalues
/// above that (with variable scaling and one round of Newton polish).
/// Complex roots come back in conjugate pairs.
inline std::vector<Complex> roots(const std::vector<double>& p_in) {
    std::vector<double> p = trim(p_in);

    // Roots at the origin are structural (zero constant terms); peel them
    // off exactly before numeric root finding.
    std::vector<Complex> zero_roots;
    while (degree(p) >= 1 && p[0] == 0.0) {
        zero_roots.emplace_back(0.0, 0.0);
        p.erase(p.begin());
    }
    if (!zero_roots.empty()) {
        auto rest = roots(p);
        rest.insert(rest.end(), zero_roots.begin(), zero_roots.end());
        return rest;
    }

    const int n = degree(p);
    if (n <= 0) return {};
    if (n == 1) return {Complex(-p[0] / p[1], 0.0)};
    if (n == 2) {
        const double a = p[2], b = p[1], c = p[0];
        const double disc = b * b - 4.0 * a * c;
        if (disc >= 0.0) {
            // q-form avoids cancellation between -b and the square root
            const double sq = std::sqrt(disc);
            const double q = -0.5 * (b + (b >= 0.0 ? sq : -sq));
            double r1 = q / a;
            double r2 = (q != 0.0) ? c / q : -b / a - r1;
            return {Complex(r1, 0.0), Complex(r2, 0.0)};
        }
        const double re = -b / (2.0 * a);
        const double im = std::sqrt(-disc) / (2.0 * a);
        return {Complex(re, im), Complex(re, -im)};
    }

    // Scale s = alpha*x so the companion matrix is reasonably balanced.
    double alpha = 0.0;
    for (int k = 0; k < n; ++k) {
        if (p[k] != 0.0)
            alpha = std::max(alpha, std::pow(std::abs(p[k] / p[n]), 1.0 / (n - k)));
    }
    if (alpha == 0.0) alpha = 1.0;

    std::vector<double> monic(n + 1);
    double apow = 1.0;
    for (int k = n; k >= 0; --k) {
        monic[k] = p[k] / p[n] / apow;
        apow *= alpha;
    }
    // monic[k] = p[k] alpha^{k-n} / p[n]; scaled roots are O(1)

    Eigen::MatrixXd companion = Eigen::MatrixXd::Zero(n, n);
    for (int i = 1; i < n; ++i) companion(i, i - 1) = 1.0;
    for (int i = 0; i < n; ++i) companion(i, n - 1) = -monic[i];
    Eigen::EigenSolver<Eigen::MatrixXd> solver(companion, /*computeEigenvectors=*/false);

    std::vector<Complex> out(n);
    for (int i = 0; i < n; ++i) out[i] = solver.eigenvalues()(i) * alpha;

    // Aberth-Ehrlich refinement on the original coefficients. The companion
    // eigenvalues lose accuracy when roots span many decades; simultaneous
    // iteration recovers clustered roots that plain Newton cannot separate.
    // Starts are nudged off exact conjugate symmetry so a real pair that the
    // eigensolver reported as complex can split back onto the axis.
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] *= 1.0 + 1e-6 * static_cast<double>(i + 1) / static_cast<double>(n);
    for (int sweep = 0; sweep < 200; ++sweep) {
        double worst = 0.0;
        for (std::size_t i = 0; i < out.size(); ++i) {
            const Complex f = evaluate(p, out[i]);
            const Complex df = derivative_at(p, out[i]);
            if (std::abs(df) == 0.0) continue;
            const Complex w = f / df;
            Complex s{};
            for (std::size_t j = 0; j < out.size(); ++j)
                if (j != i) s += 1.0 / (out[i] - out[j]);
            const Complex denom = Complex(1.0) - w * s;
            const Complex delta = (std::abs(denom) > 1e-30) ? w / denom : w;
            out[i] -= delta;
            worst = std::max(worst, std::abs(delta) / (1.0 + std::abs(out[i])));
        }
        if (worst < 4.0 * std::numeric_limits<double>::epsilon()) break;
    }

    // Enforce exact conjugate symmetry by re-pairing.
    std::vector<Complex> paired;
    std::vector<bool> used(out.size(), false);
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (used[i]) continue;
        const Complex z = out[i];
        if (std::abs(z.imag()) <= 1e-9 * (1.0 + std::abs(z))) {
            paired.emplace_back(z.real(), 0.0);
            used[i] = true;
            continue;
        }
        std::size_t best = i;
        double best_d = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < out.size(); ++j) {
            if (j == i || used[j]) continue;
            const double d = std::abs(out[j] - std::conj(z));
            if (d < best_d) {
                best_d = d;
                best = j;
            }
        }
        if (best != i) {
            const double re = 0.5 * (z.real() + out[best].real());
            const double im = 0.5 * (std::abs(z.imag()) + std::abs(out[best].imag()));
            paired.emplace_back(re, im);
            paired.emplace_back(re, -im);
            used[i] = used[best] = true;
        } else {
            paired.push_back(z); // no partner found; keep as-is
            used[i] = true;
        }
    }
    return paired;
}

/// Real-coefficient polynomial from a conjugate-closed root multiset.
inline std::vector<double> from_roots(const std::vector<Complex>& rs) {
    std::vector<double> p{1.0};
    std::vector<bool> used(rs.size(), false);
    for (std::size_t i = 0; i < rs.size(); ++i) {
        if (used[i]) continue;
        const Complex z = rs[i];
        if (std::abs(z.imag()) <= 1e-9 * (1.0 + std::abs(z))) {
            p = multiply(p, {-z.real() + 0.0, 1.0}); // +0.0 canonicalizes -0.0
            used[i] = true;
            continue;
        }
        std::size_t best = i;
        double best_d = std::numeric_limits<double>::infinity();
        for (std::size_t j = i + 1; j < rs.size(); ++j) {
            if (used[j]) continue;
            const double d = std::abs(rs[j] - std::conj(z));
            if (d < best_d) {
                best_d = d;
                best = j;
            }
        }
        if (best == i) throw std::invalid_argument("roots are not closed under conjugation");
        used[i] = used[best] = true;
        const double re = 0.5 * (z.real() + rs[best].real());
        const double im = 0.5 * (std::abs(z.imag()) + std::abs(rs[best].imag()));
        p = multiply(p, {re * re + im * im, -2.0 * re, 1.0});
    }
    return p;
}

} // namespace poly

/// Real-coefficient rational function of the Laplace variable s.
/// Coefficients ascend in degree; the denominator is normalized monic.
struct RationalTF {
    static constexpr int kMaxDegree = 10;

    std::vector<double> num{0.0};
    std::vector<double> den{1.0};

    RationalTF() = default;

    RationalTF(std::vector<double> numerator, std::vector<double> denominator)
        : num(poly::trim(std::move(numerator))), den(poly::trim(std::move(denominator))) {
        if (poly::is_zero(den)) throw std::invalid_argument("denominator is the zero polynomial");
        for (double c : num)
            if (!std::isfinite(c)) throw std::invalid_argument("non-finite numerator coefficient");
        for (double c : den)
            if (!std::isfinite(c)) throw std::invalid_argument("non-finite denominator coefficient");
        if (poly::degree(num) > kMaxDegree || poly::degree(den) > kMaxDegree)
            throw DegreeOverflow("transfer function degree exceeds " + std::to_string(kMaxDegree));
        const double lead = den.back();
        for (double& c : den) c /= lead;
        for (double& c : num) c /= lead;
        if (poly::is_zero(num)) num = {0.0};
    }

    static RationalTF constant(double k) { return RationalTF({k}, {1.0}); }

    int num_degree() const { return poly::degree(num); }
    int den_degree() const { return poly::degree(den); }
    int relative_degree() const { return den_degree() - num_degree(); }
    bool is_proper() const { return num_degree() <= den_degree(); }
    bool is_strictly_proper() const { return num_degree() < den_degree(); }
};

/// Zeros/poles/gain view of a RationalTF. gain multiplies the monic
/// factored numerator, i.e. tf = gain * prod(s - z_i) / prod(s - p_i).
struct PoleZeroGain {
    std::vector<Complex> zeros;
    std::vector<Complex> poles;
    double gain = 0.0;
};

enum class Stability { stable, marginal, unstable };

/// Sink for cancellation events in tf arithmetic; null means silent.
inline std::function<void(const Complex&)>& cancellation_sink() {
    static std::function<void(const Complex&)> sink;
    return sink;
}

inline Complex tf_evaluate(const RationalTF& tf, double omega) {
    if (!std::isfinite(omega)) throw std::invalid_argument("omega must be finite");
    const Complex s(0.0, omega);
    const Complex d = poly::evaluate(tf.den, s);
    if (std::abs(d) < 1e-300) throw EvaluationAtPole("denominator vanishes at omega = " + std::to_string(omega));
    return poly::evaluate(tf.num, s) / d;
}

inline PoleZeroGain poles_zeros(const RationalTF& tf) {
    PoleZeroGain pzg;
    pzg.poles = poly::roots(tf.den);
    if (!poly::is_zero(tf.num)) {
        pzg.zeros = poly::roots(tf.num);
        pzg.gain = poly::trim(tf.num).back(); // den is monic
    }
    return pzg;
}

inline RationalTF to_rational_tf(const PoleZeroGain& pzg) {
    return RationalTF(poly::scale(poly::from_roots(pzg.zeros), pzg.gain), poly::from_roots(pzg.poles));
}

namespace detail {

/// Cancel numerator/denominator roots that coincide within rel_tol.
/// Exact coefficient arithmetic is preserved whenever nothing cancels.
inline RationalTF reduce(std::vector<double> num, std::vector<double> den, double rel_tol = 1e-7) {
    num = poly::trim(std::move(num));
    den = poly::trim(std::move(den));
    if (poly::is_zero(num)) return RationalTF({0.0}, std::move(den));
    if (poly::degree(num) == 0 || poly::degree(den) == 0) return RationalTF(std::move(num), std::move(den));

    auto zs = poly::roots(num);
    auto ps = poly::roots(den);
    double root_scale = 0.0;
    for (const auto& z : zs) root_scale = std::max(root_scale, std::abs(z));
    for (const auto& p : ps) root_scale = std::max(root_scale, std::abs(p));

    std::vector<bool> z_cut(zs.size(), false), p_cut(ps.size(), false);
    bool cancelled = false;
    for (std::size_t i = 0; i < zs.size(); ++i) {
        std::size_t best = ps.size();
        double best_d = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < ps.size(); ++j) {
            if (p_cut[j]) continue;
            const double d = std::abs(zs[i] - ps[j]);
            if (d < best_d) {
                best_d = d;
                best = j;
            }
        }
        if (best == ps.size()) break;
        const double scale = std::max({std::abs(zs[i]), std::abs(ps[best]), rel_tol * root_scale});
        if (best_d <= rel_tol * scale) {
            z_cut[i] = true;
            p_cut[best] = true;
            cancelled = true;
            if (cancellation_sink()) cancellation_sink()(zs[i]);
        }
    }
    if (!cancelled) return RationalTF(std::move(num), std::move(den));

    std::vector<Complex> z_keep, p_keep;
    for (std::size_t i = 0; i < zs.size(); ++i)
        if (!z_cut[i]) z_keep.push_back(zs[i]);
    for (std::size_t j = 0; j < ps.size(); ++j)
        if (!p_cut[j]) p_keep.push_back(ps[j]);

    const double num_gain = poly::trim(num).back();
    const double den_gain = poly::trim(den).back();
    std::vector<double> new_num = poly::scale(poly::from_roots(z_keep), num_gain);
    std::vector<double> new_den = poly::scale(poly::from_roots(p_keep), den_gain);

    // Rebuilding from computed roots costs a few ulps; restore the DC ratio
    // encoded exactly in the raw coefficients (integral-action loops depend
    // on the constant terms matching bit-for-bit).
    if (num[0] != 0.0 && den[0] != 0.0 && new_num[0] != 0.0 && new_den[0] != 0.0) {
        const double target = (num[0] / den[0]) * new_den[0];
        if (std::abs(target - new_num[0]) < 1e-9 * std::abs(target)) new_num[0] = target;
    }
    return RationalTF(std::move(new_num), std::move(new_den));
}

} // namespace detail

inline RationalTF operator*(const RationalTF& a, const RationalTF& b) {
    return detail::reduce(poly::multiply(a.num, b.num), poly::multiply(a.den, b.den));
}

inline RationalTF operator*(double k, const RationalTF& a) {
    return RationalTF(poly::scale(a.num, k), a.den);
}

inline RationalTF operator+(const RationalTF& a, const RationalTF& b) {
    return detail::reduce(poly::add(poly::multiply(a.num, b.den), poly::multiply(b.num, a.den)),
                          poly::multiply(a.den, b.den));
}

inline RationalTF operator-(const RationalTF& a, const RationalTF& b) {
    return detail::reduce(poly::add(poly::multiply(a.num, b.den), poly::scale(poly::multiply(b.num, a.den), -1.0)),
                          poly::multiply(a.den, b.den));
}

inline RationalTF divide(const RationalTF& a, const RationalTF& b) {
    if (poly::is_zero(b.num)) throw std::invalid_argument("division by a zero transfer function");
    return detail::reduce(poly::multiply(a.num, b.den), poly::multiply(a.den, b.num));
}

/// L / (1 + L) without forming the sum explicitly.
inline RationalTF unity_feedback(const RationalTF& l) {
    return detail::reduce(l.num, poly::add(l.den, l.num));
}

enum class CombineOp { multiply, add, unity_feedback };

/// unity_feedback forms a*b/(1 + a*b).
inline RationalTF tf_combine(const RationalTF& a, const RationalTF& b, CombineOp op) {
    switch (op) {
        case CombineOp::multiply: return a * b;
        case CombineOp::add: return a + b;
        case CombineOp::unity_feedback:
            return detail::reduce(poly::multiply(a.num, b.num),
                                  poly::add(poly::multiply(a.den, b.den), poly::multiply(a.num, b.num)));
    }
    throw std::logic_error("unreachable");
}

inline Stability is_stable(const RationalTF& tf) {
    bool any_marginal = false;
    for (const Complex& p : poly::roots(tf.den)) {
        const double tol = 1e-9 * std::max(1.0, std::abs(p));
        if (p.real() > tol) return Stability::unstable;
        if (p.real() >= -tol) any_marginal = true;
    }
    return any_marginal ? Stability::marginal : Stability::stable;
}

/// Sampled complex response over an angular-frequency grid, with the
/// continuously-unwrapped phase alongside.
struct FrequencyResponse {
    std::vector<double> omega;
    std::vector<Complex> value;
    std::vector<double> phase_rad; // unwrapped

    std::size_t size() const { return omega.size(); }
};

namespace detail {

/// Asymptotic phase of tf as omega -> 0+: the argument of the lowest-order
/// coefficient ratio plus 90 deg per net differentiator order.
inline double dc_limit_phase(const RationalTF& tf) {
    std::size_t k = 0, l = 0;
    while (k < tf.num.size() && tf.num[k] == 0.0) ++k;
    while (l < tf.den.size() && tf.den[l] == 0.0) ++l;
    if (k == tf.num.size()) return 0.0; // zero numerator
    const double ratio = tf.num[k] / tf.den[l];
    const double base = (ratio < 0.0) ? M_PI : 0.0;
    return base + (static_cast<double>(k) - static_cast<double>(l)) * M_PI / 2.0;
}

inline double principal_near(double phase, double reference) {
    const double two_pi = 2.0 * M_PI;
    double adjusted = phase + two_pi * std::round((reference - phase) / two_pi);
    return adjusted;
}

/// Unwrapped phase at target, continuing from (omega_prev, phase_prev).
/// Subdivides geometrically whenever the phase step is ambiguous.
inline double unwrap_step(const RationalTF& tf, double omega_prev, double phase_prev, double omega,
                          int depth = 0) {
    const double raw = std::arg(tf_evaluate(tf, omega));
    const double candidate = principal_near(raw, phase_prev);
    if (std::abs(candidate - phase_prev) <= M_PI / 2.0 || depth >= 48 ||
        omega - omega_prev <= 1e-12 * std::max(1.0, omega)) {
        return candidate;
    }
    const double lo = std::max(omega_prev, 1e-300);
    const double mid = (omega_prev > 0.0) ? std::sqrt(lo * omega) : 0.5 * (omega_prev + omega);
    const double phase_mid = unwrap_step(tf, omega_prev, phase_prev, mid, depth + 1);
    return unwrap_step(tf, mid, phase_mid, omega, depth + 1);
}

/// Walk the phase up from the DC asymptote to omega_start.
inline double unwrapped_phase_at(const RationalTF& tf, double omega_start) {
    double feature = omega_start;
    for (const auto& r : poly::roots(tf.num))
        if (std::abs(r) > 1e-12) feature = std::min(feature, std::abs(r));
    for (const auto& r : poly::roots(tf.den))
        if (std::abs(r) > 1e-12) feature = std::min(feature, std::abs(r));

    if (omega_start == 0.0) return dc_limit_phase(tf);
    double omega = std::min(omega_start, feature) * 1e-3;
    double phase = dc_limit_phase(tf);
    while (omega < omega_start) {
        const double next = std::min(omega_start, omega * 1.5);
        phase = unwrap_step(tf, omega, phase, next);
        omega = next;
    }
    return phase;
}

} // namespace detail

/// Pointwise response over the grid with the phase unwrapped continuously
/// from the omega -> 0 asymptote.
inline FrequencyResponse bode(const RationalTF& tf, const std::vector<double>& grid) {
    if (grid.empty()) throw std::invalid_argument("empty frequency grid");
    for (std::size_t i = 0; i < grid.size(); ++i) {
        if (grid[i] < 0.0 || !std::isfinite(grid[i])) throw std::invalid_argument("grid must be nonnegative");
        if (i > 0 && grid[i] <= grid[i - 1]) throw std::invalid_argument("grid must be strictly increasing");
    }
    FrequencyResponse fr;
    fr.omega = grid;
    fr.value.resize(grid.size());
    fr.phase_rad.resize(grid.size());

    double phase = detail::unwrapped_phase_at(tf, grid.front());
    fr.value[0] = tf_evaluate(tf, grid.front());
    if (grid.front() > 0.0) phase = detail::principal_near(std::arg(fr.value[0]), phase);
    fr.phase_rad[0] = phase;
    for (std::size_t i = 1; i < grid.size(); ++i) {
        fr.value[i] = tf_evaluate(tf, grid[i]);
        phase = detail::unwrap_step(tf, grid[i - 1], phase, grid[i]);
        fr.phase_rad[i] = phase;
    }
    return fr;
}

inline std::vector<double> log_grid(double omega_lo, double omega_hi, std::size_t n) {
    if (!(omega_lo > 0.0) || !(omega_hi > omega_lo) || n < 2)
        throw std::invalid_argument("bad log grid parameters");
    std::vector<double> g(n);
    const double step = std::log(omega_hi / omega_lo) / static_cast<double>(n - 1);
    for (std::size_t i = 0; i < n; ++i) g[i] = omega_lo * std::exp(step * static_cast<double>(i));
    g.front() = omega_lo;
    g.back() = omega_hi;
    return g;
}

} // namespace magloop
