#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "magloop/discrete_filter.hpp"
#include "magloop/loopshape.hpp"
#include "helpers.hpp"

using namespace magloop;
using testutil::rel_err;

namespace {

RationalTF paper_controller() {
    return synthesize_controller(testutil::fitted_plant(), butterworth1(1e6)).controller;
}

struct FidelityReport {
    double max_mag_err = 0.0;
    double max_phase_err_deg = 0.0;
};

FidelityReport compare_to_continuous(const DiscreteFilter& filt, const RationalTF& c, double w_lo,
                                     double w_hi) {
    FidelityReport r;
    for (double w : log_grid(w_lo, w_hi, 400)) {
        const Complex hd = filt.frequency_response(w);
        const Complex hc = tf_evaluate(c, w);
        r.max_mag_err = std::max(r.max_mag_err, std::abs(std::abs(hd) / std::abs(hc) - 1.0));
        r.max_phase_err_deg =
            std::max(r.max_phase_err_deg, std::abs(std::arg(hd / hc)) * 180.0 / M_PI);
    }
    return r;
}

} // namespace

TEST_CASE("pure gain") {
    auto filt = discretize_bilinear(RationalTF::constant(2.5), 1e6);
    REQUIRE(filt.sections().size() == 1);
    CHECK(filt.sections()[0].b0 == doctest::Approx(2.5));
    CHECK(filt.sections()[0].b1 == 0.0);
    CHECK(filt.sections()[0].a1 == 0.0);
    CHECK(filt.step(3.0) == doctest::Approx(7.5));
}

TEST_CASE("integrator becomes the trapezoid accumulator") {
    const double fs = 1e6;
    auto filt = discretize_bilinear(testutil::integrator(), fs);
    // constant input 1: trapezoid rule accumulates T/2, 3T/2, 5T/2, ...
    double y = 0.0;
    for (int i = 0; i < 10; ++i) y = filt.step(1.0);
    CHECK(y == doctest::Approx((10.0 - 0.5) / fs).epsilon(1e-12));
    // slope 1 per second of simulated time
    double y2 = 0.0;
    for (int i = 0; i < 1000000; ++i) y2 = filt.step(1.0);
    CHECK(y2 == doctest::Approx(y + 1.0).epsilon(1e-9));
}

TEST_CASE("zero state gives zero output, reset restores it") {
    auto filt = discretize_bilinear(paper_controller(), 5e6);
    DiscreteFilter copy = filt;
    for (int i = 0; i < 8; ++i) CHECK(copy.step(0.0) == 0.0);
    copy.step(1.0);
    copy.reset();
    CHECK(copy.step(0.0) == 0.0);
}

TEST_CASE("stable sections for a marginal source") {
    auto filt = discretize_bilinear(paper_controller(), 5e6);
    for (const auto& s : filt.sections()) {
        // poles of 1 + a1 z^-1 + a2 z^-2 inside or on the unit circle
        const Complex disc = std::sqrt(Complex(s.a1 * s.a1 - 4.0 * s.a2, 0.0));
        const Complex p1 = (-s.a1 + disc) / 2.0;
        const Complex p2 = (-s.a1 - disc) / 2.0;
        CHECK(std::abs(p1) <= 1.0 + 1e-9);
        CHECK(std::abs(p2) <= 1.0 + 1e-9);
    }
}

TEST_CASE("frequency response fidelity of the paper controller") {
    auto c = paper_controller();

    SUBCASE("at 5 MHz the warp costs about 2.7% in magnitude at fs/10") {
        auto filt = discretize_bilinear(c, 5e6);
        auto r = compare_to_continuous(filt, c, 2.0 * M_PI * 10.0, 2.0 * M_PI * 5e5);
        // bilinear maps H(e^{jwT}) = C(j k tan(wT/2)) exactly; at fs/10 the
        // frequency warp is 3.4% and |C| has log-log slope near 0.9 there
        CHECK(r.max_mag_err < 0.035);
        CHECK(r.max_mag_err > 0.02);
        CHECK(r.max_phase_err_deg < 1.0);
    }

    SUBCASE("at 50 MHz the response is within 1% and 1 degree up to fs/10") {
        auto filt = discretize_bilinear(c, 5e7);
        auto r = compare_to_continuous(filt, c, 2.0 * M_PI * 10.0, 2.0 * M_PI * 5e6);
        CHECK(r.max_mag_err < 0.01);
        CHECK(r.max_phase_err_deg < 1.0);
    }

    SUBCASE("prewarp pins the response at the chosen frequency") {
        const double w_pin = 4.2579e5;
        auto filt = discretize_bilinear(c, 5e6, w_pin);
        CHECK(rel_err(std::abs(filt.frequency_response(w_pin)), std::abs(tf_evaluate(c, w_pin))) < 1e-9);
    }
}

TEST_CASE("step response matches the exact bilinear map") {
    // H(z) = C(k (z-1)/(z+1)) exactly: spot-check on a lag compensator
    RationalTF c({2.0, 1.0}, {5.0, 1.0});
    const double fs = 100.0;
    auto filt = discretize_bilinear(c, fs);
    const double k = 2.0 * fs;
    for (double w : {1.0, 5.0, 20.0, 60.0, 200.0}) {
        const double wc = k * std::tan(w / (2.0 * fs));
        CHECK(rel_err(filt.frequency_response(w), tf_evaluate(c, wc)) < 1e-12);
    }
}

TEST_CASE("validation") {
    CHECK_THROWS_AS(discretize_bilinear(testutil::integrator(), -1.0), std::invalid_argument);
    CHECK_THROWS_AS(discretize_bilinear(RationalTF({0.0, 0.0, 1.0}, {1.0}), 1e6),
                    std::invalid_argument); // improper
    CHECK_THROWS_AS(discretize_bilinear(testutil::integrator(), 1e6, 4e6), std::invalid_argument);
}
