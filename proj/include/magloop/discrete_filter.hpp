#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <vector>

#include "magloop/errors.hpp"
#include "magloop/rational_tf.hpp"

namespace magloop {

/// One second-order section, direct form II transposed.
struct BiquadSection {
    double b0 = 0.0, b1 = 0.0, b2 = 0.0;
    double a1 = 0.0, a2 = 0.0; // denominator 1 + a1 z^-1 + a2 z^-2
    double s1 = 0.0, s2 = 0.0;

    double step(double x) {
        const double y = b0 * x + s1;
        s1 = b1 * x - a1 * y + s2;
        s2 = b2 * x - a2 * y;
        return y;
    }

    void reset() { s1 = s2 = 0.0; }
};

/// Cascade of second-order sections realizing a discretized controller.
class DiscreteFilter {
  public:
    DiscreteFilter() = default;
    DiscreteFilter(std::vector<BiquadSection> sections, double sample_rate)
        : sections_(std::move(sections)), sample_rate_(sample_rate) {}

    double step(double x) {
        for (auto& s : sections_) x = s.step(x);
        return x;
    }

    void reset() {
        for (auto& s : sections_) s.reset();
    }

    double sample_rate() const { return sample_rate_; }
    const std::vector<BiquadSection>& sections() const { return sections_; }

    /// Response of the cascade at z = exp(j w / fs).
    Complex frequency_response(double omega) const {
        const Complex z = std::exp(Complex(0.0, omega / sample_rate_));
        const Complex zi = 1.0 / z;
        Complex h(1.0, 0.0);
        for (const auto& s : sections_) {
            h *= (s.b0 + s.b1 * zi + s.b2 * zi * zi) / (1.0 + s.a1 * zi + s.a2 * zi * zi);
        }
        return h;
    }

  private:
    std::vector<BiquadSection> sections_;
    double sample_rate_ = 0.0;
};

namespace detail {

/// Pair a conjugate-closed root list into quadratic (or linear) factors,
/// ordered with the largest-magnitude roots first.
inline std::vector<std::vector<Complex>> pair_roots(std::vector<Complex> roots) {
    std::vector<std::vector<Complex>> groups;
    std::vector<bool> used(roots.size(), false);
    // complex pairs first
    for (std::size_t i = 0; i < roots.size(); ++i) {
        if (used[i] || roots[i].imag() == 0.0) continue;
        for (std::size_t j = i + 1; j < roots.size(); ++j) {
            if (!used[j] && std::abs(roots[j] - std::conj(roots[i])) <= 1e-9 * (1.0 + std::abs(roots[i]))) {
                groups.push_back({roots[i], roots[j]});
                used[i] = used[j] = true;
                break;
            }
        }
    }
    // then real roots, two at a time
    std::vector<Complex> reals;
    for (std::size_t i = 0; i < roots.size(); ++i)
        if (!used[i]) reals.push_back(roots[i]);
    std::sort(reals.begin(), reals.end(),
              [](const Complex& a, const Complex& b) { return std::abs(a) > std::abs(b); });
    for (std::size_t i = 0; i + 1 < reals.size(); i += 2) groups.push_back({reals[i], reals[i + 1]});
    if (reals.size() % 2 == 1) groups.push_back({reals.back()});
    std::sort(groups.begin(), groups.end(), [](const auto& a, const auto& b) {
        auto mag = [](const std::vector<Complex>& g) {
            double m = 0.0;
            for (const auto& r : g) m = std::max(m, std::abs(r));
            return m;
        };
        return mag(a) > mag(b);
    });
    return groups;
}

} // namespace detail

/// Bilinear (trapezoidal) discretization with optional frequency prewarping.
/// Continuous poles and zeros map root-by-root through z = (k + s)/(k - s);
/// the result is exactly C(k (z-1)/(z+1)) as a rational function, factored
/// into second-order sections. The frequency axis is warped by
/// w_c = k tan(w T/2), exact at DC (and at prewarp_at when given), so the
/// response error at w grows like the local log-log slope of |C| times
/// tan(x)/x - 1, x = w T / 2. At w = 2 pi fs/10 the warp is 3.4%.
inline DiscreteFilter discretize_bilinear(const RationalTF& c, double sample_rate,
                                          double prewarp_at = 0.0) {
    if (!(sample_rate > 0.0)) throw std::invalid_argument("sample rate must be positive");
    if (!c.is_proper()) throw std::invalid_argument("controller must be proper");
    if (prewarp_at < 0.0 || prewarp_at >= M_PI * sample_rate)
        throw std::invalid_argument("prewarp frequency must lie below pi * sample_rate");

    const double T = 1.0 / sample_rate;
    const double k = (prewarp_at > 0.0) ? prewarp_at / std::tan(prewarp_at * T / 2.0) : 2.0 / T;

    const Stability source_stability = is_stable(c);
    const PoleZeroGain pzg = poles_zeros(c);

    auto map_root = [&](const Complex& s) { return (k + s) / (k - s); };

    std::vector<Complex> zzeros, zpoles;
    for (const auto& z : pzg.zeros) zzeros.push_back(map_root(z));
    for (const auto& p : pzg.poles) zpoles.push_back(map_root(p));
    // relative-degree zeros land at the Nyquist point z = -1
    const int reldeg = c.relative_degree();
    for (int i = 0; i < reldeg; ++i) zzeros.emplace_back(-1.0, 0.0);

    if (source_stability != Stability::unstable) {
        for (const auto& zp : zpoles)
            if (std::abs(zp) > 1.0 + 1e-9)
                throw UnstableDiscretization("mapped pole outside the unit circle");
    }

    // overall gain from a real-axis match: H(z_m) = C(sigma) at s = sigma
    double sigma = (prewarp_at > 0.0) ? prewarp_at : 0.1 * k;
    double gain = 0.0;
    for (int attempt = 0; attempt < 8; ++attempt, sigma *= 1.7) {
        const double zm = (k + sigma) / (k - sigma);
        const double c_here = poly::evaluate(c.num, sigma) / poly::evaluate(c.den, sigma);
        double hn = 1.0, hd = 1.0;
        for (const auto& z : zzeros) hn *= (zm - z).real();
        for (const auto& p : zpoles) hd *= (zm - p).real();
        if (std::isfinite(c_here) && std::abs(hn) > 1e-280 && std::abs(hd) > 1e-280 && c_here != 0.0) {
            gain = c_here * hd / hn;
            break;
        }
    }
    if (gain == 0.0 && !poly::is_zero(c.num))
        throw std::invalid_argument("could not normalize discretized gain");

    std::vector<BiquadSection> sections;
    auto zero_groups = detail::pair_roots(zzeros);
    auto pole_groups = detail::pair_roots(zpoles);
    const std::size_t n_sections = std::max(zero_groups.size(), pole_groups.size());
    for (std::size_t i = 0; i < n_sections; ++i) {
        BiquadSection s;
        if (i < zero_groups.size()) {
            const auto& g = zero_groups[i];
            if (g.size() == 2) {
                s.b0 = 1.0;
                s.b1 = -(g[0] + g[1]).real();
                s.b2 = (g[0] * g[1]).real();
            } else {
                s.b0 = 1.0;
                s.b1 = -g[0].real();
            }
        } else {
            s.b0 = 1.0;
        }
        if (i < pole_groups.size()) {
            const auto& g = pole_groups[i];
            if (g.size() == 2) {
                s.a1 = -(g[0] + g[1]).real();
                s.a2 = (g[0] * g[1]).real();
            } else {
                s.a1 = -g[0].real();
            }
        }
        sections.push_back(s);
    }
    if (sections.empty()) {
        BiquadSection ident;
        ident.b0 = 1.0;
        sections.push_back(ident);
    }
    sections.front().b0 *= gain;
    sections.front().b1 *= gain;
    sections.front().b2 *= gain;
    return DiscreteFilter(std::move(sections), sample_rate);
}

} // namespace magloop
