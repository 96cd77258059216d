#pragma once

#include <atomic>
#include <cmath>
#include <complex>
#include <thread>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "magloop/errors.hpp"
#include "magloop/looprun.hpp"

namespace magloop {

/// Swept-sine measurement plan. Each point is an independent mini-run: the
/// spin state is re-prepared, the drive settles, then the complex ratio y/u
/// is extracted by single-bin Fourier projection over an integer number of
/// cycles. The per-point sample rate is chosen as an integer number of
/// samples per cycle so the projection has no leakage.
struct SweepPlan {
    std::vector<double> frequencies_hz;
    double drive_amplitude_v = 0.0;
    int settle_cycles = 2;
    int measure_cycles = 4;
    bool reset_between_points = true;
    double min_settle_time_s = 1.5e-3; // ~15 time constants of the fitted atomic pole
    int min_samples_per_cycle = 2000;  // keeps hold-lag and tagging phase errors ~0.1 deg

    void validate() const {
        if (frequencies_hz.empty()) throw std::invalid_argument("empty frequency list");
        for (std::size_t i = 0; i < frequencies_hz.size(); ++i) {
            if (!(frequencies_hz[i] > 0.0)) throw std::invalid_argument("frequencies must be positive");
            if (i > 0 && frequencies_hz[i] <= frequencies_hz[i - 1])
                throw std::invalid_argument("frequencies must increase");
        }
        if (measure_cycles < 4) throw std::invalid_argument("need at least 4 measurement cycles");
        if (!(drive_amplitude_v > 0.0)) throw std::invalid_argument("drive amplitude must be positive");
    }
};

struct SweepResult {
    FrequencyResponse response;
    std::vector<double> coherence; // per point, in [0, 1]
};

/// Log-spaced plan over [f_lo, f_hi] with the drive sized from the plant
/// model: 2% of the polarized magnitude at the softest point of the band,
/// which leaves room for the factor-2 startup transient under the 5% guard.
inline SweepPlan default_identification_plan(const PhysParams& params, double n_atoms,
                                             double f_lo_hz = 100.0, double f_hi_hz = 3e5,
                                             int points = 40) {
    SweepPlan plan;
    const RationalTF plant = effective_plant(params, n_atoms);
    double softest = 0.0;
    for (double w : log_grid(2.0 * M_PI * f_lo_hz, 2.0 * M_PI * f_hi_hz, points)) {
        plan.frequencies_hz.push_back(w / (2.0 * M_PI));
        softest = std::max(softest, std::abs(tf_evaluate(plant, w)) / params.meas_gain);
    }
    plan.drive_amplitude_v = 0.02 * 4.0 * n_atoms / softest;
    return plan;
}

/// Swept-sine identification of the simulated plant, drive voltage to
/// photocurrent. The guard rejects drives that push |Fz| beyond 5% of the
/// polarized magnitude (outside the linear regime).
inline SweepResult swept_sine(const Scenario& scenario, const SweepPlan& plan) {
    plan.validate();
    scenario.params.validate();

    SweepResult result;
    result.response.omega.reserve(plan.frequencies_hz.size());
    result.response.value.reserve(plan.frequencies_hz.size());

    BlochState persistent = BlochState::polarized(scenario.n_atoms);
    detail::LinearAtomicStage persistent_linear{scenario.params.split.atomic_pole_rad_s,
                                                scenario.params.gamma * 4.0 * scenario.n_atoms};

    for (std::size_t pt = 0; pt < plan.frequencies_hz.size(); ++pt) {
        const double f = plan.frequencies_hz[pt];
        const double w = 2.0 * M_PI * f;
        // integer samples per cycle; at least min_samples_per_cycle and
        // fine enough for the spin stepper (dt <= 1e-6)
        const int spc = std::max(plan.min_samples_per_cycle, static_cast<int>(std::ceil(1e6 / f)));
        const double dt = 1.0 / (f * spc);
        const int settle_samples =
            std::max(plan.settle_cycles * spc,
                     static_cast<int>(std::ceil(plan.min_settle_time_s * f)) * spc);
        const int measure_samples = plan.measure_cycles * spc;

        ActuatorModel actuator(canonical_actuator(scenario.params));
        BlochState spin = plan.reset_between_points ? BlochState::polarized(scenario.n_atoms) : persistent;
        detail::LinearAtomicStage linear = persistent_linear;
        if (plan.reset_between_points) linear.state = 0.0;

        Rng rng(scenario.seed + 7919 * pt);
        const double fz_limit = 0.05 * spin.polarized_magnitude();

        // per-cycle sub-bins for the coherence estimate
        Complex y_bin{}, u_bin{};
        std::vector<Complex> y_cycles(plan.measure_cycles), u_cycles(plan.measure_cycles);

        for (int i = 0; i < settle_samples + measure_samples; ++i) {
            const double t = static_cast<double>(i) * dt;
            // exogenous drive: u is held over [t, t+dt), no loop latency
            const double u = plan.drive_amplitude_v * std::sin(w * t);
            const double b_c = actuator_step(actuator, u, dt);
            double y = 0.0;
            switch (scenario.params.spin_model) {
                case SpinModel::isotropic_t2:
                    spin = bloch_step(spin, b_c, dt, scenario.params);
                    y = measure_sample(spin, dt, scenario.params, rng);
                    break;
                case SpinModel::pumped:
                    spin = bloch_step_pumped(spin, b_c, dt, scenario.params);
                    y = measure_sample(spin, dt, scenario.params, rng);
                    break;
                case SpinModel::linear:
                    spin.fz = linear.step(b_c, dt);
                    y = measure_sample(spin, dt, scenario.params, rng);
                    break;
            }
            if (std::abs(spin.fz) > fz_limit)
                throw NonlinearRegime("drive pushed |Fz| beyond 5% of the polarized magnitude");
            if (i >= settle_samples) {
                const int k = i - settle_samples;
                // y is sampled at the end of the step; the held u is centered
                // half a step in - phase-consistent tags avoid a spurious lag
                const Complex ey = std::exp(Complex(0.0, -w * (t + dt)));
                const Complex eu = std::exp(Complex(0.0, -w * (t + 0.5 * dt)));
                y_bin += y * ey;
                u_bin += u * eu;
                const int cycle = k / spc;
                y_cycles[cycle] += y * ey;
                u_cycles[cycle] += u * eu;
            }
        }
        if (std::abs(u_bin) == 0.0) throw std::invalid_argument("degenerate drive projection");

        result.response.omega.push_back(w);
        result.response.value.push_back(y_bin / u_bin);

        Complex cross{};
        double pyy = 0.0, puu = 0.0;
        for (int c = 0; c < plan.measure_cycles; ++c) {
            cross += y_cycles[c] * std::conj(u_cycles[c]);
            pyy += std::norm(y_cycles[c]);
            puu += std::norm(u_cycles[c]);
        }
        const double coh = (pyy > 0.0 && puu > 0.0) ? std::norm(cross) / (pyy * puu) : 0.0;
        result.coherence.push_back(std::min(1.0, std::max(0.0, coh)));

        persistent = spin;
        persistent_linear = linear;
    }

    // unwrapped phase from the measured points
    result.response.phase_rad.resize(result.response.size());
    double prev = std::arg(result.response.value.front());
    result.response.phase_rad[0] = prev;
    for (std::size_t i = 1; i < result.response.size(); ++i) {
        double ph = std::arg(result.response.value[i]);
        ph += 2.0 * M_PI * std::round((prev - ph) / (2.0 * M_PI));
        result.response.phase_rad[i] = ph;
        prev = ph;
    }
    return result;
}

/// Rational fit of a sampled frequency response: weighted linear least
/// squares in the Levy formulation, iteratively reweighted by the previous
/// denominator (Sanathanan-Koerner), 10 iterations or a 1e-9 relative
/// coefficient change. Frequencies and response values are normalized
/// internally; the caller sees coefficients in natural units.
inline RationalTF fit_rational(const FrequencyResponse& response, int n_zeros, int n_poles) {
    if (n_poles < n_zeros) throw std::invalid_argument("need n_poles >= n_zeros");
    const std::size_t m = response.size();
    const int n_unknowns = (n_zeros + 1) + n_poles; // denominator monic
    if (static_cast<int>(m) < 2 * (n_zeros + n_poles + 1))
        throw std::invalid_argument("need at least 2(n_zeros + n_poles + 1) points");

    // scale normalization: geometric-mean frequency, median response magnitude
    double log_acc = 0.0;
    std::size_t n_pos = 0;
    for (double w : response.omega)
        if (w > 0.0) {
            log_acc += std::log(w);
            ++n_pos;
        }
    const double w_scale = n_pos ? std::exp(log_acc / static_cast<double>(n_pos)) : 1.0;
    std::vector<double> mags;
    for (const auto& v : response.value) mags.push_back(std::abs(v));
    std::nth_element(mags.begin(), mags.begin() + mags.size() / 2, mags.end());
    const double h_scale = std::max(mags[mags.size() / 2], 1e-300);

    std::vector<double> den_prev(n_poles + 1, 0.0);
    den_prev.back() = 1.0;
    std::vector<double> num_scaled(n_zeros + 1, 0.0), den_scaled(n_poles + 1, 0.0);

    for (int iteration = 0; iteration < 10; ++iteration) {
        Eigen::MatrixXd a(2 * m, n_unknowns);
        Eigen::VectorXd rhs(2 * m);
        for (std::size_t i = 0; i < m; ++i) {
            const Complex s(0.0, response.omega[i] / w_scale);
            const Complex h = response.value[i] / h_scale;
            // Sanathanan-Koerner reweighting plus a relative-error factor so
            // points where the response is small still carry their share
            const double weight =
                1.0 / std::max(1e-12, std::abs(poly::evaluate(den_prev, s)) * std::max(std::abs(h), 1e-9));
            // residual: N(s) - h * (s^np + sum d_k s^k); monic term moves to the rhs
            Complex spow(1.0, 0.0);
            std::vector<Complex> powers(std::max(n_zeros, n_poles) + 1);
            for (int k = 0; k <= std::max(n_zeros, n_poles); ++k) {
                powers[k] = spow;
                spow *= s;
            }
            for (int k = 0; k <= n_zeros; ++k) {
                a(2 * i, k) = weight * powers[k].real();
                a(2 * i + 1, k) = weight * powers[k].imag();
            }
            for (int k = 0; k < n_poles; ++k) {
                const Complex coeff = -h * powers[k];
                a(2 * i, n_zeros + 1 + k) = weight * coeff.real();
                a(2 * i + 1, n_zeros + 1 + k) = weight * coeff.imag();
            }
            const Complex b = h * powers[n_poles]; // monic denominator term
            rhs(2 * i) = weight * b.real();
            rhs(2 * i + 1) = weight * b.imag();
        }

        Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
        const double cond =
            svd.singularValues()(0) / std::max(svd.singularValues()(svd.singularValues().size() - 1), 1e-300);
        if (cond > 1e12) throw IllConditioned("normal-equation condition number exceeds 1e12");
        Eigen::VectorXd x = svd.solve(rhs);

        for (int k = 0; k <= n_zeros; ++k) num_scaled[k] = x(k);
        for (int k = 0; k < n_poles; ++k) den_scaled[k] = x(n_zeros + 1 + k);
        den_scaled[n_poles] = 1.0;

        double change = 0.0, norm = 0.0;
        for (int k = 0; k <= n_poles; ++k) {
            change += std::abs(den_scaled[k] - den_prev[k]);
            norm += std::abs(den_scaled[k]);
        }
        den_prev = den_scaled;
        if (change <= 1e-9 * norm) break;
    }

    // undo the scale normalization: s = s_true / w_scale, h = h_true / h_scale
    std::vector<double> num(n_zeros + 1), den(n_poles + 1);
    for (int k = 0; k <= n_zeros; ++k) num[k] = num_scaled[k] * h_scale / std::pow(w_scale, k);
    for (int k = 0; k <= n_poles; ++k) den[k] = den_scaled[k] / std::pow(w_scale, k);
    return RationalTF(num, den);
}

/// One row of the robustness experiment table.
struct SweepRow {
    double n_atoms = 0.0;
    double closed_rms_mean_g = 0.0;
    double closed_rms_std_g = 0.0;
    double open_rms_mean_g = 0.0;
    double open_rms_std_g = 0.0;
    int diverged = 0;
};

/// Robustness experiment: a single controller (the one in `base`,
/// synthesized at the nominal atom number) is reused for every atom number.
/// For each n, `replicates` closed-loop runs with fresh seeds are scored by
/// the estimation-error seminorm over [rms_t_lo, rms_t_hi], and the
/// open-loop estimator runs with assumed_n fixed at params.n_nominal.
/// Cells execute in parallel; the table order is deterministic.
inline std::vector<SweepRow> robustness_sweep(const Scenario& base, const std::vector<double>& atom_numbers,
                                              int replicates, double rms_t_lo, double rms_t_hi,
                                              double open_fit_window = 2e-6, int jobs = 0) {
    if (atom_numbers.empty()) throw std::invalid_argument("empty atom-number list");
    if (replicates < 1) throw std::invalid_argument("replicates must be >= 1");
    if (!base.controller) throw std::invalid_argument("robustness sweep needs a controller");

    struct Cell {
        double closed_rms = 0.0;
        double open_err = 0.0;
        bool diverged = false;
    };
    const std::size_t n_cells = atom_numbers.size() * static_cast<std::size_t>(replicates);
    std::vector<Cell> cells(n_cells);

    // open-loop leg: constant field at the step amplitude, short window
    const double b_amp = base.waveform.amplitude();

    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        for (;;) {
            const std::size_t idx = next.fetch_add(1);
            if (idx >= n_cells) return;
            const std::size_t ni = idx / static_cast<std::size_t>(replicates);
            const int rep = static_cast<int>(idx % static_cast<std::size_t>(replicates));
            Scenario sc = base;
            sc.n_atoms = atom_numbers[ni];
            sc.seed = base.seed + 1000003ULL * ni;
            Cell& cell = cells[idx];
            try {
                const LoopRecord rec = run_closed_loop(sc, rep);
                cell.closed_rms = estimation_error({rec}, rms_t_lo, rms_t_hi).rms_g;
            } catch (const NumericalDivergence&) {
                cell.diverged = true;
            }
            Scenario open_sc = base;
            open_sc.controller.reset();
            open_sc.n_atoms = atom_numbers[ni];
            open_sc.params.spin_model = SpinModel::isotropic_t2;
            open_sc.waveform = FieldWaveform::constant(b_amp);
            open_sc.duration = 2.0 * open_fit_window;
            open_sc.seed = base.seed + 1000003ULL * ni + 17ULL * static_cast<std::uint64_t>(rep);
            try {
                const double b_est = run_open_loop(open_sc, base.params.n_nominal, open_fit_window);
                cell.open_err = std::abs(b_amp - b_est);
            } catch (const WindowTooLong&) {
                cell.diverged = true;
            }
        }
    };

    int n_threads = jobs > 0 ? jobs : static_cast<int>(std::thread::hardware_concurrency());
    n_threads = std::max(1, std::min<int>(n_threads, static_cast<int>(n_cells)));
    std::vector<std::thread> pool;
    for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();

    std::vector<SweepRow> table;
    for (std::size_t ni = 0; ni < atom_numbers.size(); ++ni) {
        SweepRow row;
        row.n_atoms = atom_numbers[ni];
        std::vector<double> closed, open;
        for (int rep = 0; rep < replicates; ++rep) {
            const Cell& cell = cells[ni * static_cast<std::size_t>(replicates) + rep];
            if (cell.diverged) {
                ++row.diverged;
                continue;
            }
            closed.push_back(cell.closed_rms);
            open.push_back(cell.open_err);
        }
        auto mean_std = [](const std::vector<double>& v, double& mean, double& std_out) {
            mean = 0.0;
            std_out = 0.0;
            if (v.empty()) return;
            for (double x : v) mean += x;
            mean /= static_cast<double>(v.size());
            if (v.size() > 1) {
                for (double x : v) std_out += (x - mean) * (x - mean);
                std_out = std::sqrt(std_out / static_cast<double>(v.size() - 1));
            }
        };
        mean_std(closed, row.closed_rms_mean_g, row.closed_rms_std_g);
        mean_std(open, row.open_rms_mean_g, row.open_rms_std_g);
        table.push_back(row);
    }
    return table;
}

} // namespace magloop
