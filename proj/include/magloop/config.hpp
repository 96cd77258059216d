#pragma once

#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "magloop/errors.hpp"
#include "magloop/io.hpp"
#include "magloop/looprun.hpp"
#include "magloop/sysid.hpp"

namespace magloop {

/// Parsed run configuration. Parsing is strict: unknown keys are rejected
/// and every physical quantity carries its unit in the key name.
struct Config {
    PhysParams physics = PhysParams::nominal();
    double n_atoms = 1e9;

    enum class PlantMode { derive_from_physics, explicit_tf };
    PlantMode plant_mode = PlantMode::derive_from_physics;
    RationalTF explicit_plant;

    double controller_fc_hz = 1e6;
    SignConvention convention = SignConvention::tracking_minus;

    FieldWaveform waveform = FieldWaveform::step(0.05, 0.5e-3);

    enum class RunMode { closed, open };
    RunMode run_mode = RunMode::closed;
    double duration_s = 5e-3;
    double sample_rate_hz = 5e6;
    double feedback_on_s = 1e-3;
    std::uint64_t seed = 1;
    int replicates = 1;
    double assumed_n = 1e9;
    double fit_window_s = 2e-6;
    double rms_window_lo_s = 0.0;
    double rms_window_hi_s = std::numeric_limits<double>::infinity();

    double identify_f_start_hz = 100.0;
    double identify_f_stop_hz = 3e5;
    int identify_points = 40;
    double identify_drive_v = 0.0; // 0 = auto from the plant model
    int identify_settle_cycles = 2;
    int identify_measure_cycles = 4;
    double identify_min_settle_s = 1.5e-3;
    int identify_min_samples_per_cycle = 2000;
    int identify_n_zeros = 1;
    int identify_n_poles = 2;

    std::vector<double> sweep_atom_numbers{1e6, 1e7, 1e8, 1e9};
    int sweep_replicates = 100;

    std::string output_directory = "out";
    std::vector<std::string> output_formats{"csv", "json"};

    std::uint64_t content_hash = 0;

    RationalTF plant() const {
        return plant_mode == PlantMode::explicit_tf ? explicit_plant : effective_plant(physics, n_atoms);
    }

    ControllerDesign design() const {
        // controller synthesis always targets the nominal-atom-number plant
        const RationalTF nominal_plant = plant_mode == PlantMode::explicit_tf
                                             ? explicit_plant
                                             : effective_plant(physics, physics.n_nominal);
        return synthesize_controller(nominal_plant, butterworth1(controller_fc_hz), convention);
    }

    Scenario scenario() const {
        Scenario sc;
        sc.params = physics;
        sc.n_atoms = n_atoms;
        sc.waveform = waveform;
        sc.duration = duration_s;
        sc.sample_rate = sample_rate_hz;
        sc.feedback_on_at = feedback_on_s;
        sc.seed = seed;
        sc.replicates = replicates;
        return sc;
    }

    SweepPlan identification_plan() const {
        SweepPlan plan = default_identification_plan(physics, n_atoms, identify_f_start_hz,
                                                     identify_f_stop_hz, identify_points);
        if (identify_drive_v > 0.0) plan.drive_amplitude_v = identify_drive_v;
        plan.settle_cycles = identify_settle_cycles;
        plan.measure_cycles = identify_measure_cycles;
        plan.min_settle_time_s = identify_min_settle_s;
        plan.min_samples_per_cycle = identify_min_samples_per_cycle;
        return plan;
    }

    static Config parse(const json& doc);
    static Config parse_text(const std::string& text);
};

namespace detail {

inline void require_keys(const json& obj, const std::string& section,
                         const std::set<std::string>& allowed) {
    if (!obj.is_object()) throw ConfigError("section '" + section + "' must be an object");
    for (const auto& item : obj.items()) {
        if (!allowed.count(item.key()))
            throw ConfigError("unknown key '" + section + "." + item.key() + "'");
    }
}

inline double num_at(const json& obj, const std::string& section, const std::string& key,
                     double fallback) {
    if (!obj.contains(key)) return fallback;
    if (!obj.at(key).is_number()) throw ConfigError("key '" + section + "." + key + "' must be a number");
    return obj.at(key).get<double>();
}

} // namespace detail

inline Config Config::parse(const json& doc) {
    detail::require_keys(doc, "(top level)",
                         {"physics", "plant", "controller", "waveform", "run", "identify", "sweep",
                          "output"});
    Config cfg;

    if (doc.contains("physics")) {
        const auto& p = doc.at("physics");
        detail::require_keys(p, "physics",
                             {"gamma_rad_per_s_per_g", "t2_ms", "meas_gain_v_per_hbar",
                              "noise_psd_v2_per_hz", "beta_g_per_v", "n_nominal", "n_atoms",
                              "spin_model", "atomic_pole_rad_s", "actuator_pole_rad_s",
                              "actuator_zero_rad_s"});
        cfg.physics.gamma = detail::num_at(p, "physics", "gamma_rad_per_s_per_g", cfg.physics.gamma);
        cfg.physics.t2 = detail::num_at(p, "physics", "t2_ms", cfg.physics.t2 * 1e3) * 1e-3;
        cfg.physics.noise_psd = detail::num_at(p, "physics", "noise_psd_v2_per_hz", cfg.physics.noise_psd);
        cfg.physics.beta = detail::num_at(p, "physics", "beta_g_per_v", cfg.physics.beta);
        cfg.physics.n_nominal = detail::num_at(p, "physics", "n_nominal", cfg.physics.n_nominal);
        cfg.physics.split.atomic_pole_rad_s =
            detail::num_at(p, "physics", "atomic_pole_rad_s", cfg.physics.split.atomic_pole_rad_s);
        cfg.physics.split.actuator_pole_rad_s =
            detail::num_at(p, "physics", "actuator_pole_rad_s", cfg.physics.split.actuator_pole_rad_s);
        cfg.physics.split.actuator_zero_rad_s =
            detail::num_at(p, "physics", "actuator_zero_rad_s", cfg.physics.split.actuator_zero_rad_s);
        // recompute the composite optical gain unless explicitly pinned
        cfg.physics.meas_gain = 2.0 * kFittedPlantGain /
                                (cfg.physics.beta * cfg.physics.gamma * 4.0 * cfg.physics.n_nominal);
        cfg.physics.meas_gain = detail::num_at(p, "physics", "meas_gain_v_per_hbar", cfg.physics.meas_gain);
        cfg.n_atoms = detail::num_at(p, "physics", "n_atoms", cfg.physics.n_nominal);
        if (p.contains("spin_model")) {
            const std::string m = p.at("spin_model").get<std::string>();
            if (m == "isotropic")
                cfg.physics.spin_model = SpinModel::isotropic_t2;
            else if (m == "pumped")
                cfg.physics.spin_model = SpinModel::pumped;
            else if (m == "linear")
                cfg.physics.spin_model = SpinModel::linear;
            else
                throw ConfigError("physics.spin_model must be isotropic, pumped, or linear");
        }
        cfg.physics.validate();
    }

    if (doc.contains("plant")) {
        const auto& p = doc.at("plant");
        detail::require_keys(p, "plant", {"mode", "num", "den"});
        const std::string mode = p.contains("mode") ? p.at("mode").get<std::string>() : "derive_from_physics";
        if (mode == "derive_from_physics") {
            cfg.plant_mode = PlantMode::derive_from_physics;
        } else if (mode == "explicit") {
            cfg.plant_mode = PlantMode::explicit_tf;
            if (!p.contains("num") || !p.contains("den"))
                throw ConfigError("plant.mode 'explicit' needs plant.num and plant.den");
            cfg.explicit_plant =
                RationalTF(p.at("num").get<std::vector<double>>(), p.at("den").get<std::vector<double>>());
        } else {
            throw ConfigError("plant.mode must be 'derive_from_physics' or 'explicit'");
        }
    }

    if (doc.contains("controller")) {
        const auto& c = doc.at("controller");
        detail::require_keys(c, "controller", {"fc_hz", "convention"});
        cfg.controller_fc_hz = detail::num_at(c, "controller", "fc_hz", cfg.controller_fc_hz);
        if (c.contains("convention")) {
            const std::string conv = c.at("convention").get<std::string>();
            if (conv == "tracking_minus")
                cfg.convention = SignConvention::tracking_minus;
            else if (conv == "paper_plus")
                cfg.convention = SignConvention::paper_plus;
            else
                throw ConfigError("controller.convention must be tracking_minus or paper_plus");
        }
    }

    if (doc.contains("waveform")) {
        const auto& w = doc.at("waveform");
        detail::require_keys(w, "waveform",
                             {"kind", "amplitude_g", "start_ms", "frequency_hz", "rms_g",
                              "bandwidth_hz", "seed", "n_tones", "sample_dt_ms", "samples_g"});
        const std::string kind = w.contains("kind") ? w.at("kind").get<std::string>() : "step";
        if (kind == "constant") {
            cfg.waveform = FieldWaveform::constant(detail::num_at(w, "waveform", "amplitude_g", 0.0));
        } else if (kind == "step") {
            cfg.waveform = FieldWaveform::step(detail::num_at(w, "waveform", "amplitude_g", 0.05),
                                               detail::num_at(w, "waveform", "start_ms", 0.5) * 1e-3);
        } else if (kind == "sinusoid") {
            cfg.waveform = FieldWaveform::sinusoid(detail::num_at(w, "waveform", "amplitude_g", 0.02),
                                                   detail::num_at(w, "waveform", "frequency_hz", 5e3),
                                                   detail::num_at(w, "waveform", "start_ms", 0.0) * 1e-3);
        } else if (kind == "bandlimited_noise") {
            cfg.waveform = FieldWaveform::bandlimited_noise(
                detail::num_at(w, "waveform", "rms_g", 0.02),
                detail::num_at(w, "waveform", "bandwidth_hz", 5e3),
                static_cast<std::uint64_t>(detail::num_at(w, "waveform", "seed", 0.0)),
                static_cast<int>(detail::num_at(w, "waveform", "n_tones", 64.0)));
        } else if (kind == "samples") {
            if (!w.contains("samples_g")) throw ConfigError("waveform.samples_g required for kind 'samples'");
            cfg.waveform =
                FieldWaveform::from_samples(detail::num_at(w, "waveform", "sample_dt_ms", 1.0) * 1e-3,
                                            w.at("samples_g").get<std::vector<double>>());
        } else {
            throw ConfigError("waveform.kind '" + kind + "' is not recognized");
        }
    }

    if (doc.contains("run")) {
        const auto& r = doc.at("run");
        detail::require_keys(r, "run",
                             {"mode", "duration_ms", "sample_rate_hz", "feedback_on_ms", "seed",
                              "replicates", "assumed_n", "fit_window_us", "rms_window_ms"});
        if (r.contains("mode")) {
            const std::string mode = r.at("mode").get<std::string>();
            if (mode == "closed")
                cfg.run_mode = RunMode::closed;
            else if (mode == "open")
                cfg.run_mode = RunMode::open;
            else
                throw ConfigError("run.mode must be 'closed' or 'open'");
        }
        cfg.duration_s = detail::num_at(r, "run", "duration_ms", cfg.duration_s * 1e3) * 1e-3;
        cfg.sample_rate_hz = detail::num_at(r, "run", "sample_rate_hz", cfg.sample_rate_hz);
        cfg.feedback_on_s = detail::num_at(r, "run", "feedback_on_ms", cfg.feedback_on_s * 1e3) * 1e-3;
        cfg.seed = static_cast<std::uint64_t>(detail::num_at(r, "run", "seed", 1.0));
        cfg.replicates = static_cast<int>(detail::num_at(r, "run", "replicates", 1.0));
        cfg.assumed_n = detail::num_at(r, "run", "assumed_n", cfg.assumed_n);
        cfg.fit_window_s = detail::num_at(r, "run", "fit_window_us", cfg.fit_window_s * 1e6) * 1e-6;
        if (r.contains("rms_window_ms")) {
            const auto window = r.at("rms_window_ms").get<std::vector<double>>();
            if (window.size() != 2) throw ConfigError("run.rms_window_ms must be [lo, hi]");
            cfg.rms_window_lo_s = window[0] * 1e-3;
            cfg.rms_window_hi_s = window[1] * 1e-3;
        }
        if (!(cfg.duration_s > 0.0)) throw ConfigError("run.duration_ms must be positive");
    }

    if (doc.contains("identify")) {
        const auto& idn = doc.at("identify");
        detail::require_keys(idn, "identify",
                             {"f_start_hz", "f_stop_hz", "points", "drive_v", "settle_cycles",
                              "measure_cycles", "min_settle_time_ms", "min_samples_per_cycle",
                              "n_zeros", "n_poles"});
        cfg.identify_f_start_hz = detail::num_at(idn, "identify", "f_start_hz", cfg.identify_f_start_hz);
        cfg.identify_f_stop_hz = detail::num_at(idn, "identify", "f_stop_hz", cfg.identify_f_stop_hz);
        cfg.identify_points = static_cast<int>(detail::num_at(idn, "identify", "points", 40.0));
        cfg.identify_drive_v = detail::num_at(idn, "identify", "drive_v", 0.0);
        cfg.identify_settle_cycles = static_cast<int>(detail::num_at(idn, "identify", "settle_cycles", 2.0));
        cfg.identify_measure_cycles =
            static_cast<int>(detail::num_at(idn, "identify", "measure_cycles", 4.0));
        cfg.identify_min_settle_s =
            detail::num_at(idn, "identify", "min_settle_time_ms", cfg.identify_min_settle_s * 1e3) * 1e-3;
        cfg.identify_min_samples_per_cycle =
            static_cast<int>(detail::num_at(idn, "identify", "min_samples_per_cycle", 2000.0));
        cfg.identify_n_zeros = static_cast<int>(detail::num_at(idn, "identify", "n_zeros", 1.0));
        cfg.identify_n_poles = static_cast<int>(detail::num_at(idn, "identify", "n_poles", 2.0));
    }

    if (doc.contains("sweep")) {
        const auto& s = doc.at("sweep");
        detail::require_keys(s, "sweep", {"atom_numbers", "replicates"});
        if (s.contains("atom_numbers")) {
            cfg.sweep_atom_numbers = s.at("atom_numbers").get<std::vector<double>>();
            if (cfg.sweep_atom_numbers.empty()) throw ConfigError("sweep.atom_numbers must not be empty");
        }
        cfg.sweep_replicates = static_cast<int>(detail::num_at(s, "sweep", "replicates", 100.0));
    }

    if (doc.contains("output")) {
        const auto& o = doc.at("output");
        detail::require_keys(o, "output", {"directory", "formats"});
        if (o.contains("directory")) cfg.output_directory = o.at("directory").get<std::string>();
        if (o.contains("formats")) cfg.output_formats = o.at("formats").get<std::vector<std::string>>();
    }

    cfg.content_hash = fnv1a64(doc.dump());
    return cfg;
}

inline Config Config::parse_text(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    return parse(doc);
}

} // namespace magloop
