// Command-line front end: controller synthesis, closed/open-loop
// magnetometry simulation, swept-sine identification, and the atom-number
// robustness sweep. Numerical work lives in the library; this file only
// parses configuration, dispatches, and writes artifacts.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "magloop/config.hpp"
#include "magloop/io.hpp"
#include "magloop/looprun.hpp"
#include "magloop/sysid.hpp"

namespace fs = std::filesystem;
using namespace magloop;

namespace {

struct CliOptions {
    std::string config_path;
    std::string out_dir;
    std::optional<std::uint64_t> seed;
    int jobs = 0;
};

Config load_config(const CliOptions& opt) {
    Config cfg;
    if (!opt.config_path.empty()) {
        std::ifstream in(opt.config_path);
        if (!in) throw ConfigError("cannot read config file " + opt.config_path);
        std::stringstream ss;
        ss << in.rdbuf();
        cfg = Config::parse_text(ss.str());
    } else {
        cfg = Config::parse(json::object());
    }
    if (!opt.out_dir.empty()) cfg.output_directory = opt.out_dir;
    if (opt.seed) cfg.seed = *opt.seed;
    return cfg;
}

void write_with_meta(const Config& cfg, const std::string& name, const std::string& content,
                     std::uint64_t scenario_hash = 0, const char* convention = nullptr) {
    const fs::path dir(cfg.output_directory);
    fs::create_directories(dir);
    io::write_file((dir / name).string(), content);
    io::write_file((dir / (name + ".meta.json")).string(),
                   io::meta_json(cfg.content_hash, cfg.seed, convention, scenario_hash).dump(2) + "\n");
}

std::vector<double> bode_grid() { return log_grid(2.0 * M_PI * 10.0, 2.0 * M_PI * 1e7, 200); }

int cmd_synthesize(const Config& cfg) {
    ControllerDesign design;
    try {
        design = cfg.design();
    } catch (const std::exception& e) {
        std::cerr << "synthesis failed: " << e.what() << "\n";
        std::cout << json{{"command", "synthesize"}, {"error", e.what()}}.dump() << "\n";
        return 2;
    }
    if (!design.closed_loop_stable)
        std::cerr << "warning: closed loop is unstable under the " << io::convention_name(design.convention)
                  << " convention; T(0) = " << tf_evaluate(design.closed_loop, 0.0).real() << "\n";

    const RationalTF plant = cfg.plant();
    StabilityMargins margins{};
    bool have_margins = false;
    try {
        margins = stability_margins(design.controller * plant);
        have_margins = true;
    } catch (const NoCrossover&) {
    }

    write_with_meta(cfg, "controller_design.json",
                    io::design_to_json(design, have_margins ? &margins : nullptr).dump(2) + "\n");
    write_with_meta(cfg, "plant_bode.csv", io::frequency_response_csv(bode(plant, bode_grid())));
    write_with_meta(cfg, "controller_bode.csv",
                    io::frequency_response_csv(bode(design.controller, bode_grid())));
    write_with_meta(cfg, "closed_loop_bode.csv",
                    io::frequency_response_csv(bode(design.closed_loop, bode_grid())));

    // usable tracking band: largest frequency below which |1 - T| <= 0.1
    double tracking_band_hz = 0.0;
    for (double w : log_grid(2.0 * M_PI * 1.0, 2.0 * M_PI * 1e7, 600)) {
        if (std::abs(Complex(1.0) - tf_evaluate(design.closed_loop, w)) <= 0.1)
            tracking_band_hz = w / (2.0 * M_PI);
        else if (tracking_band_hz > 0.0)
            break;
    }
    double t_minus3db_hz = 0.0;
    for (double w : log_grid(2.0 * M_PI * 1.0, 2.0 * M_PI * 1e7, 600)) {
        if (std::abs(tf_evaluate(design.closed_loop, w)) >= 1.0 / std::sqrt(2.0))
            t_minus3db_hz = w / (2.0 * M_PI);
        else if (t_minus3db_hz > 0.0)
            break;
    }

    json summary{{"command", "synthesize"},
                 {"config_hash", cfg.content_hash},
                 {"convention", io::convention_name(design.convention)},
                 {"closed_loop_stable", design.closed_loop_stable},
                 {"t_dc", tf_evaluate(design.closed_loop, 0.0).real()},
                 {"tracking_band_hz", tracking_band_hz},
                 {"t_minus3db_hz", t_minus3db_hz}};
    if (have_margins) {
        summary["crossover_hz"] = margins.crossover_rad_s / (2.0 * M_PI);
        summary["phase_margin_deg"] = margins.phase_margin_deg;
        summary["gain_margin_db"] = margins.gain_margin_db;
    }
    std::cout << summary.dump() << "\n";
    return 0;
}

int cmd_simulate(const Config& cfg) {
    Scenario sc = cfg.scenario();

    if (cfg.run_mode == Config::RunMode::open) {
        const double b_est = run_open_loop(sc, cfg.assumed_n, cfg.fit_window_s);
        const LoopRecord rec = run_free(sc);
        write_with_meta(cfg, "loop_record.csv", io::loop_record_csv(rec), rec.scenario_hash);
        std::cout << json{{"command", "simulate"},
                          {"mode", "open"},
                          {"config_hash", cfg.content_hash},
                          {"b_est_g", b_est},
                          {"assumed_n", cfg.assumed_n},
                          {"fit_window_s", cfg.fit_window_s}}
                         .dump()
                  << "\n";
        return 0;
    }

    sc.controller = cfg.design();
    std::vector<LoopRecord> records;
    try {
        for (int rep = 0; rep < cfg.replicates; ++rep) records.push_back(run_closed_loop(sc, rep));
    } catch (const NumericalDivergence& e) {
        std::cerr << "run diverged: " << e.what() << "\n";
        write_with_meta(cfg, "loop_record.partial.csv", io::loop_record_csv(e.partial),
                        e.partial.scenario_hash, io::convention_name(sc.controller->convention));
        std::cout << json{{"command", "simulate"}, {"error", e.what()}, {"config_hash", cfg.content_hash}}
                         .dump()
                  << "\n";
        return 3;
    }

    const LoopRecord& rec = records.front();
    write_with_meta(cfg, "loop_record.csv", io::loop_record_csv(rec), rec.scenario_hash,
                    io::convention_name(sc.controller->convention));

    const auto err = estimation_error(records, cfg.rms_window_lo_s, cfg.rms_window_hi_s);
    // settle time: last instant the estimate is more than 1% from its final value
    double settle_s = 0.0;
    const double b_final = rec.b_est.back();
    if (std::abs(b_final) > 0.0) {
        for (std::size_t i = 0; i < rec.t.size(); ++i) {
            if (std::abs(rec.b_est[i] - b_final) > 0.01 * std::abs(b_final)) settle_s = rec.t[i];
        }
    }
    std::cout << json{{"command", "simulate"},
                      {"mode", "closed"},
                      {"config_hash", cfg.content_hash},
                      {"replicates", cfg.replicates},
                      {"rms_error_g", err.rms_g},
                      {"rms_error_std_g", err.std_g},
                      {"mean_square_error_g2", err.mean_square_g2},
                      {"final_estimate_g", b_final},
                      {"settle_time_s", settle_s}}
                     .dump()
              << "\n";
    return 0;
}

int cmd_identify(const Config& cfg) {
    Scenario sc = cfg.scenario();
    const SweepPlan plan = cfg.identification_plan();
    std::cerr << "sweeping " << plan.frequencies_hz.size() << " points, drive " << plan.drive_amplitude_v
              << " V\n";
    const SweepResult sweep = swept_sine(sc, plan);
    write_with_meta(cfg, "sweep_response.csv", io::frequency_response_csv(sweep.response));

    json summary{{"command", "identify"},
                 {"config_hash", cfg.content_hash},
                 {"points", sweep.response.size()},
                 {"drive_v", plan.drive_amplitude_v}};
    try {
        const RationalTF fit = fit_rational(sweep.response, cfg.identify_n_zeros, cfg.identify_n_poles);
        write_with_meta(cfg, "fitted_model.json", io::tf_to_json(fit).dump(2) + "\n");
        summary["fit"] = io::tf_to_json(fit);
    } catch (const IllConditioned& e) {
        std::cerr << "fit failed: " << e.what() << "\n";
        summary["fit_error"] = e.what();
    }
    double coh_min = 1.0;
    for (double c : sweep.coherence) coh_min = std::min(coh_min, c);
    summary["coherence_min"] = coh_min;
    std::cout << summary.dump() << "\n";
    return 0;
}

int cmd_sweep(const Config& cfg, int jobs) {
    Scenario base = cfg.scenario();
    base.controller = cfg.design();
    const auto table = robustness_sweep(base, cfg.sweep_atom_numbers, cfg.sweep_replicates,
                                        cfg.rms_window_lo_s, cfg.rms_window_hi_s, cfg.fit_window_s, jobs);
    write_with_meta(cfg, "robustness_table.csv", io::sweep_table_csv(table));

    int total_diverged = 0;
    double closed_min = std::numeric_limits<double>::infinity(), closed_max = 0.0;
    double open_min = std::numeric_limits<double>::infinity(), open_max = 0.0;
    for (const auto& row : table) {
        std::cerr << "n = " << row.n_atoms << ": closed " << row.closed_rms_mean_g * 1e3 << " mG, open "
                  << row.open_rms_mean_g * 1e3 << " mG" << (row.diverged ? " (diverged cells)" : "")
                  << "\n";
        total_diverged += row.diverged;
        if (row.diverged < cfg.sweep_replicates) {
            closed_min = std::min(closed_min, row.closed_rms_mean_g);
            closed_max = std::max(closed_max, row.closed_rms_mean_g);
            open_min = std::min(open_min, row.open_rms_mean_g);
            open_max = std::max(open_max, row.open_rms_mean_g);
        }
    }
    const bool all_failed = total_diverged >= cfg.sweep_replicates * static_cast<int>(table.size());
    std::cout << json{{"command", "sweep"},
                      {"config_hash", cfg.content_hash},
                      {"rows", table.size()},
                      {"replicates", cfg.sweep_replicates},
                      {"diverged_cells", total_diverged},
                      {"closed_rms_ratio", closed_max / closed_min},
                      {"open_rms_ratio", open_max / open_min}}
                     .dump()
              << "\n";
    return all_failed ? 4 : 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Closed-loop magnetometry simulation and controller synthesis"};
    app.require_subcommand(1);
    app.fallthrough(); // global flags may follow the subcommand

    CliOptions opt;
    app.add_option("--config", opt.config_path, "JSON configuration file");
    app.add_option("--out", opt.out_dir, "output directory (overrides config)");
    std::uint64_t seed_value = 0;
    auto* seed_opt = app.add_option("--seed", seed_value, "seed override");
    app.add_option("--jobs", opt.jobs, "worker threads for sweeps (default: hardware)");

    auto* synthesize = app.add_subcommand("synthesize", "design the loop-shaping controller");
    auto* simulate = app.add_subcommand("simulate", "run a closed- or open-loop experiment");
    auto* identify = app.add_subcommand("identify", "swept-sine plant identification and rational fit");
    auto* sweep = app.add_subcommand("sweep", "closed/open estimation error vs atom number");

    CLI11_PARSE(app, argc, argv);
    if (seed_opt->count() > 0) opt.seed = seed_value;

    Config cfg;
    try {
        cfg = load_config(opt);
    } catch (const std::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    }

    try {
        if (synthesize->parsed()) return cmd_synthesize(cfg);
        if (simulate->parsed()) return cmd_simulate(cfg);
        if (identify->parsed()) return cmd_identify(cfg);
        if (sweep->parsed()) return cmd_sweep(cfg, opt.jobs);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const std::invalid_argument& e) {
        std::cerr << "invalid configuration: " << e.what() << "\n";
        return 1;
    } catch (const ImproperQ& e) {
        std::cerr << "synthesis error: " << e.what() << "\n";
        return 2;
    } catch (const UnstableClosedLoop& e) {
        std::cerr << "synthesis error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 5;
    }
    return 0;
}
