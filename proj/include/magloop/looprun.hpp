#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "magloop/discrete_filter.hpp"
#include "magloop/errors.hpp"
#include "magloop/hash.hpp"
#include "magloop/loopshape.hpp"
#include "magloop/physics.hpp"
#include "magloop/waveform.hpp"

namespace magloop {

/// Full experiment description: physics, applied field, controller, timing.
struct Scenario {
    PhysParams params = PhysParams::nominal();
    double n_atoms = 1e9;
    FieldWaveform waveform = FieldWaveform::constant(0.0);
    std::optional<ControllerDesign> controller;
    double reference = 0.0;      // setpoint r(t) in volts
    double duration = 5e-3;      // s
    double sample_rate = 5e6;    // Hz
    double feedback_on_at = 0.0; // s; controller held at zero state before
    std::uint64_t seed = 0;
    int replicates = 1;
    double prewarp_at = 0.0;     // rad/s, controller discretization

    void validate() const {
        params.validate();
        if (!(n_atoms > 0.0)) throw std::invalid_argument("n_atoms must be positive");
        if (!(duration > 0.0)) throw std::invalid_argument("duration must be positive");
        if (!(sample_rate > 0.0)) throw std::invalid_argument("sample_rate must be positive");
        if (duration * sample_rate > 1e8) throw std::invalid_argument("more than 1e8 samples requested");
        if (params.spin_model != SpinModel::linear && 1.0 / sample_rate > 1e-6)
            throw std::invalid_argument("spin simulation needs sample_rate >= 1 MHz");
        if (controller) {
            // the weight corner sets the fastest controller dynamics
            double corner = 0.0;
            for (const auto& p : poly::roots(controller->weight.den)) corner = std::max(corner, std::abs(p));
            if (sample_rate < 2.5 * corner / (2.0 * M_PI))
                throw std::invalid_argument("sample_rate below 2.5x the weight corner frequency");
        }
        if (replicates < 1) throw std::invalid_argument("replicates must be >= 1");
    }

    std::uint64_t content_hash() const {
        char buf[640];
        std::snprintf(buf, sizeof buf, "%a|%a|%a|%a|%a|%a|%a|%a|%a|%d|%a|%a|%d|%llu|%d|%d|%a|%a|%a|%llu|%d",
                      params.gamma, params.t2, params.meas_gain, params.noise_psd, params.beta,
                      params.n_nominal, n_atoms, duration, sample_rate,
                      static_cast<int>(params.spin_model), feedback_on_at, reference,
                      controller ? 1 : 0, static_cast<unsigned long long>(seed), replicates,
                      static_cast<int>(waveform.kind()), waveform.amplitude(), waveform.frequency_hz(),
                      waveform.start_s(), static_cast<unsigned long long>(waveform.seed()),
                      waveform.n_tones());
        return fnv1a64(buf);
    }
};

/// Time series produced by a closed- or open-loop run.
struct LoopRecord {
    std::vector<double> t;      // s
    std::vector<double> b_true; // G
    std::vector<double> y;      // V
    std::vector<double> u;      // V
    std::vector<double> b_c;    // G
    std::vector<double> b_est;  // G
    std::uint64_t seed = 0;
    std::uint64_t scenario_hash = 0;
    SignConvention convention = SignConvention::tracking_minus;
};

/// Raised when the simulated spin leaves its physical bound; carries the
/// partial record so callers can flush diagnostics.
struct NumericalDivergence : std::runtime_error {
    NumericalDivergence(const std::string& what, LoopRecord partial_record)
        : std::runtime_error(what), partial(std::move(partial_record)) {}
    LoopRecord partial;
};

namespace detail {

/// Atomic stage as its literal linear transfer function: exact
/// zero-order-hold stepping of gamma*4n/(s + atomic_pole), output in
/// hbar units of Fz.
struct LinearAtomicStage {
    double pole;
    double gain; // gamma * 4 * n
    double state = 0.0;

    double step(double b_total, double dt) {
        const double e = std::exp(-pole * dt);
        state = e * state + gain * b_total * (1.0 - e) / pole;
        return state;
    }
};

} // namespace detail

/// Single-rate closed-loop run. Per sample: advance the spin under
/// b_true + b_c, read the polarimeter, filter e = r - y through the
/// discretized controller (held at zero state before feedback_on_at), drive
/// the coil supply, and log b_est = -b_c.
inline LoopRecord run_closed_loop(const Scenario& scenario, int replicate = 0) {
    scenario.validate();
    if (!scenario.controller) throw std::invalid_argument("closed-loop run needs a controller");

    const double dt = 1.0 / scenario.sample_rate;
    const auto n_samples = static_cast<std::size_t>(std::llround(scenario.duration * scenario.sample_rate));

    DiscreteFilter filter =
        discretize_bilinear(scenario.controller->controller, scenario.sample_rate, scenario.prewarp_at);
    ActuatorModel actuator(canonical_actuator(scenario.params));

    Rng rng(scenario.seed + static_cast<std::uint64_t>(replicate));

    LoopRecord rec;
    rec.seed = scenario.seed + static_cast<std::uint64_t>(replicate);
    rec.scenario_hash = scenario.content_hash();
    rec.convention = scenario.controller->convention;
    rec.t.reserve(n_samples);
    rec.b_true.reserve(n_samples);
    rec.y.reserve(n_samples);
    rec.u.reserve(n_samples);
    rec.b_c.reserve(n_samples);
    rec.b_est.reserve(n_samples);

    BlochState spin = BlochState::polarized(scenario.n_atoms);
    detail::LinearAtomicStage linear{scenario.params.split.atomic_pole_rad_s,
                                     scenario.params.gamma * 4.0 * scenario.n_atoms};
    const double fz_bound = (scenario.params.spin_model == SpinModel::linear ? 1e3 : (1.0 + 1e-9)) *
                            spin.polarized_magnitude();

    double b_c = 0.0;
    for (std::size_t i = 0; i < n_samples; ++i) {
        const double t = static_cast<double>(i) * dt;
        const double b_true = scenario.waveform(t);
        const double b_total = b_true + b_c;

        double y = 0.0;
        switch (scenario.params.spin_model) {
            case SpinModel::isotropic_t2:
                spin = bloch_step(spin, b_total, dt, scenario.params);
                y = measure_sample(spin, dt, scenario.params, rng);
                break;
            case SpinModel::pumped:
                spin = bloch_step_pumped(spin, b_total, dt, scenario.params);
                y = measure_sample(spin, dt, scenario.params, rng);
                break;
            case SpinModel::linear:
                spin.fz = linear.step(b_total, dt);
                y = measure_sample(spin, dt, scenario.params, rng);
                break;
        }

        double u = 0.0;
        if (t >= scenario.feedback_on_at) u = filter.step(scenario.reference - y);
        b_c = actuator_step(actuator, u, dt);

        rec.t.push_back(t);
        rec.b_true.push_back(b_true);
        rec.y.push_back(y);
        rec.u.push_back(u);
        rec.b_c.push_back(b_c);
        rec.b_est.push_back(-b_c);

        if (!(std::abs(spin.fz) <= fz_bound)) {
            char msg[128];
            std::snprintf(msg, sizeof msg, "spin diverged at t = %.6g s (|Fz| = %.3g, bound %.3g)", t,
                          std::abs(spin.fz), fz_bound);
            throw NumericalDivergence(msg, std::move(rec));
        }
    }
    return rec;
}

/// Record a run with no feedback (controller output forced to zero).
inline LoopRecord run_free(const Scenario& scenario, int replicate = 0) {
    Scenario s = scenario;
    s.controller.reset();
    s.validate();
    const double dt = 1.0 / s.sample_rate;
    const auto n_samples = static_cast<std::size_t>(std::llround(s.duration * s.sample_rate));
    Rng rng(s.seed + static_cast<std::uint64_t>(replicate));
    LoopRecord rec;
    rec.seed = s.seed + static_cast<std::uint64_t>(replicate);
    rec.scenario_hash = s.content_hash();
    BlochState spin = BlochState::polarized(s.n_atoms);
    detail::LinearAtomicStage linear{s.params.split.atomic_pole_rad_s, s.params.gamma * 4.0 * s.n_atoms};
    for (std::size_t i = 0; i < n_samples; ++i) {
        const double t = static_cast<double>(i) * dt;
        const double b_true = s.waveform(t);
        double y = 0.0;
        switch (s.params.spin_model) {
            case SpinModel::isotropic_t2:
                spin = bloch_step(spin, b_true, dt, s.params);
                y = measure_sample(spin, dt, s.params, rng);
                break;
            case SpinModel::pumped:
                spin = bloch_step_pumped(spin, b_true, dt, s.params);
                y = measure_sample(spin, dt, s.params, rng);
                break;
            case SpinModel::linear:
                spin.fz = linear.step(b_true, dt);
                y = measure_sample(spin, dt, s.params, rng);
                break;
        }
        rec.t.push_back(t);
        rec.b_true.push_back(b_true);
        rec.y.push_back(y);
        rec.u.push_back(0.0);
        rec.b_c.push_back(0.0);
        rec.b_est.push_back(0.0);
    }
    return rec;
}

/// Open-loop constant-field estimator: least-squares slope of the
/// reconstructed Fz(t) = y/meas_gain over the fit window, divided by
/// gamma * 4 * assumed_n. Valid only in the small-angle regime; the
/// self-consistency guard rejects windows where the estimated rotation
/// angle exceeds 0.3 rad.
inline double run_open_loop(const Scenario& scenario, double assumed_n, double fit_window) {
    if (scenario.controller) throw std::invalid_argument("open-loop estimator takes no controller");
    if (!(assumed_n > 0.0)) throw std::invalid_argument("assumed_n must be positive");
    if (!(fit_window > 0.0) || fit_window > scenario.duration)
        throw std::invalid_argument("fit window must lie inside the run");

    Scenario s = scenario;
    s.duration = fit_window;
    const LoopRecord rec = run_free(s);

    const std::size_t n = rec.t.size();
    if (n < 3) throw std::invalid_argument("fit window holds fewer than 3 samples");
    double t_mean = 0.0, f_mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        t_mean += rec.t[i];
        f_mean += rec.y[i];
    }
    t_mean /= static_cast<double>(n);
    f_mean /= static_cast<double>(n);
    double stt = 0.0, stf = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dt_i = rec.t[i] - t_mean;
        stt += dt_i * dt_i;
        stf += dt_i * (rec.y[i] - f_mean);
    }
    const double fz_slope = (stf / stt) / scenario.params.meas_gain;
    const double b_est = fz_slope / (scenario.params.gamma * 4.0 * assumed_n);

    if (scenario.params.gamma * std::abs(b_est) * fit_window > 0.3)
        throw WindowTooLong("estimated rotation angle exceeds the small-angle regime");
    return b_est;
}

/// Ensemble error statistics per the time-averaged squared-mismatch
/// seminorm. The raw seminorm has units of G^2; the rooted per-record
/// value (RMS, in G) is what gets averaged and reported.
struct EstimationError {
    double rms_g = 0.0;          // ensemble mean of per-record RMS
    double std_g = 0.0;          // ensemble standard deviation of the RMS
    double mean_square_g2 = 0.0; // ensemble mean of the raw seminorm
    std::vector<double> per_record_rms_g;
};

inline EstimationError estimation_error(const std::vector<LoopRecord>& records,
                                        double t_lo = -std::numeric_limits<double>::infinity(),
                                        double t_hi = std::numeric_limits<double>::infinity()) {
    if (records.empty()) throw std::invalid_argument("need at least one record");
    for (const auto& r : records) {
        if (r.t.size() != records.front().t.size() || r.t.front() != records.front().t.front() ||
            r.t.back() != records.front().t.back())
            throw GridMismatch("records use different time grids");
    }

    EstimationError out;
    for (const auto& r : records) {
        double integral = 0.0, span = 0.0;
        for (std::size_t i = 1; i < r.t.size(); ++i) {
            if (r.t[i - 1] < t_lo || r.t[i] > t_hi) continue;
            const double e0 = r.b_true[i - 1] - r.b_est[i - 1];
            const double e1 = r.b_true[i] - r.b_est[i];
            const double h = r.t[i] - r.t[i - 1];
            integral += 0.5 * (e0 * e0 + e1 * e1) * h;
            span += h;
        }
        if (span == 0.0) throw std::invalid_argument("error window contains no samples");
        const double mean_square = integral / span;
        out.mean_square_g2 += mean_square;
        out.per_record_rms_g.push_back(std::sqrt(mean_square));
    }
    const auto n = static_cast<double>(records.size());
    out.mean_square_g2 /= n;
    for (double v : out.per_record_rms_g) out.rms_g += v;
    out.rms_g /= n;
    double var = 0.0;
    for (double v : out.per_record_rms_g) var += (v - out.rms_g) * (v - out.rms_g);
    out.std_g = records.size() > 1 ? std::sqrt(var / (n - 1.0)) : 0.0;
    return out;
}

} // namespace magloop
