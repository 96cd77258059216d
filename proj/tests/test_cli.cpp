#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <array>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct RunResult {
    int exit_code = -1;
    std::string stdout_text;
};

RunResult run_cli(const std::string& args) {
    const std::string cmd = std::string(MAGLOOP_CLI_PATH) + " " + args + " 2>/dev/null";
    RunResult r;
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    std::array<char, 4096> buf{};
    while (fgets(buf.data(), buf.size(), pipe)) r.stdout_text += buf.data();
    const int status = pclose(pipe);
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path write_temp_config(const std::string& name, const std::string& text) {
    const fs::path dir = fs::temp_directory_path() / "magloop_cli_test";
    fs::create_directories(dir);
    const fs::path p = dir / name;
    std::ofstream out(p);
    out << text;
    return p;
}

} // namespace

TEST_CASE("synthesize produces the design and Bode files") {
    const fs::path out = fs::temp_directory_path() / "magloop_cli_test" / "synth";
    fs::remove_all(out);
    auto r = run_cli("synthesize --out " + out.string());
    REQUIRE(r.exit_code == 0);
    auto summary = json::parse(r.stdout_text);
    CHECK(summary.at("command") == "synthesize");
    CHECK(summary.at("t_dc").get<double>() == doctest::Approx(1.0));
    CHECK(summary.at("closed_loop_stable") == true);
    // 100 kHz-scale loop crossover
    CHECK(summary.at("crossover_hz").get<double>() > 3e4);
    CHECK(summary.at("crossover_hz").get<double>() < 3e5);
    for (const char* name : {"controller_design.json", "plant_bode.csv", "controller_bode.csv",
                             "closed_loop_bode.csv"}) {
        CHECK(fs::exists(out / name));
        CHECK(fs::exists(out / (std::string(name) + ".meta.json")));
    }
}

TEST_CASE("paper_plus convention emits a design with T(0) = 1/3") {
    const auto cfg = write_temp_config("plus.json", R"({"controller": {"convention": "paper_plus"}})");
    const fs::path out = fs::temp_directory_path() / "magloop_cli_test" / "plus";
    auto r = run_cli("synthesize --config " + cfg.string() + " --out " + out.string());
    REQUIRE(r.exit_code == 0);
    auto summary = json::parse(r.stdout_text);
    CHECK(summary.at("t_dc").get<double>() == doctest::Approx(1.0 / 3.0));
    CHECK(summary.at("closed_loop_stable") == false);
    CHECK(fs::exists(out / "controller_design.json"));
}

TEST_CASE("malformed config key names the key and exits 1") {
    const auto cfg = write_temp_config("bad.json", R"({"physics": {"t2": 11.2}})");
    auto r = run_cli("simulate --config " + cfg.string());
    CHECK(r.exit_code == 1);
}

TEST_CASE("zero duration exits 1") {
    const auto cfg = write_temp_config("zerodur.json", R"({"run": {"duration_ms": 0}})");
    auto r = run_cli("simulate --config " + cfg.string());
    CHECK(r.exit_code == 1);
}

TEST_CASE("step demo config runs and nulls the field") {
    const fs::path out = fs::temp_directory_path() / "magloop_cli_test" / "step";
    fs::remove_all(out);
    const std::string cfg = std::string(MAGLOOP_CONFIG_DIR) + "/fig_step.json";
    auto r = run_cli("simulate --config " + cfg + " --out " + out.string());
    REQUIRE(r.exit_code == 0);
    auto summary = json::parse(r.stdout_text);
    // measurement noise is on in the demo config; the estimate sits on the
    // applied field up to the closed-loop noise floor
    CHECK(summary.at("final_estimate_g").get<double>() == doctest::Approx(0.05).epsilon(5e-3));
    CHECK(fs::exists(out / "loop_record.csv"));
    const std::string csv = slurp(out / "loop_record.csv");
    CHECK(csv.rfind("t,b_true_G,y_V,u_V,b_c_G,b_est_G\n", 0) == 0);
}

TEST_CASE("identical config and seed reproduce identical bytes") {
    const fs::path out_a = fs::temp_directory_path() / "magloop_cli_test" / "det_a";
    const fs::path out_b = fs::temp_directory_path() / "magloop_cli_test" / "det_b";
    fs::remove_all(out_a);
    fs::remove_all(out_b);
    const auto cfg = write_temp_config("det.json", R"({
        "physics": {"spin_model": "pumped"},
        "waveform": {"kind": "bandlimited_noise", "rms_g": 0.01, "bandwidth_hz": 5e3, "seed": 3},
        "run": {"duration_ms": 1.0, "sample_rate_hz": 5e6, "seed": 42}
    })");
    auto ra = run_cli("simulate --config " + cfg.string() + " --out " + out_a.string());
    auto rb = run_cli("simulate --config " + cfg.string() + " --out " + out_b.string());
    REQUIRE(ra.exit_code == 0);
    REQUIRE(rb.exit_code == 0);
    CHECK(ra.stdout_text == rb.stdout_text);
    CHECK(slurp(out_a / "loop_record.csv") == slurp(out_b / "loop_record.csv"));
    CHECK(slurp(out_a / "loop_record.csv.meta.json") == slurp(out_b / "loop_record.csv.meta.json"));
}

TEST_CASE("seed override changes the noise draw") {
    const auto cfg = write_temp_config("seeded.json", R"({
        "run": {"duration_ms": 0.5, "sample_rate_hz": 5e6, "seed": 1}
    })");
    const fs::path out_a = fs::temp_directory_path() / "magloop_cli_test" / "seed_a";
    const fs::path out_b = fs::temp_directory_path() / "magloop_cli_test" / "seed_b";
    auto ra = run_cli("simulate --config " + cfg.string() + " --out " + out_a.string());
    auto rb = run_cli("simulate --config " + cfg.string() + " --seed 99 --out " + out_b.string());
    REQUIRE(ra.exit_code == 0);
    REQUIRE(rb.exit_code == 0);
    CHECK(slurp(out_a / "loop_record.csv") != slurp(out_b / "loop_record.csv"));
}

TEST_CASE("open-loop simulate reports the scalar estimate") {
    const auto cfg = write_temp_config("open.json", R"({
        "physics": {"noise_psd_v2_per_hz": 0.0},
        "waveform": {"kind": "constant", "amplitude_g": 0.05},
        "run": {"mode": "open", "duration_ms": 0.01, "sample_rate_hz": 5e6, "fit_window_us": 2.0, "assumed_n": 1e9}
    })");
    const fs::path out = fs::temp_directory_path() / "magloop_cli_test" / "open";
    auto r = run_cli("simulate --config " + cfg.string() + " --out " + out.string());
    REQUIRE(r.exit_code == 0);
    auto summary = json::parse(r.stdout_text);
    CHECK(summary.at("b_est_g").get<double>() == doctest::Approx(0.05).epsilon(0.01));
}

TEST_CASE("identify emits a fit close to the plant model") {
    const fs::path out = fs::temp_directory_path() / "magloop_cli_test" / "ident";
    fs::remove_all(out);
    const auto cfg = write_temp_config("ident.json", R"({
        "physics": {"spin_model": "pumped", "noise_psd_v2_per_hz": 0.0},
        "identify": {"points": 24},
        "run": {"seed": 5}
    })");
    auto r = run_cli("identify --config " + cfg.string() + " --out " + out.string());
    REQUIRE(r.exit_code == 0);
    auto summary = json::parse(r.stdout_text);
    const auto num = summary.at("fit").at("num").get<std::vector<double>>();
    const auto den = summary.at("fit").at("den").get<std::vector<double>>();
    CHECK(std::abs(-num[1] / 1.6e4 - 1.0) < 0.01);
    CHECK(std::abs(den[1] / 4.1e5 - 1.0) < 0.01);
    CHECK(fs::exists(out / "sweep_response.csv"));
    CHECK(fs::exists(out / "fitted_model.json"));
}

TEST_CASE("sweep writes the robustness table") {
    const fs::path out = fs::temp_directory_path() / "magloop_cli_test" / "sweep";
    fs::remove_all(out);
    const auto cfg = write_temp_config("sweep.json", R"({
        "physics": {"spin_model": "pumped", "noise_psd_v2_per_hz": 0.0},
        "waveform": {"kind": "step", "amplitude_g": 0.05, "start_ms": 1.0},
        "run": {"duration_ms": 6, "sample_rate_hz": 5e6, "feedback_on_ms": 2.5, "seed": 9, "rms_window_ms": [1, 5]},
        "sweep": {"atom_numbers": [1e7, 1e9], "replicates": 2}
    })");
    auto r = run_cli("sweep --config " + cfg.string() + " --out " + out.string() + " --jobs 2");
    REQUIRE(r.exit_code == 0);
    auto summary = json::parse(r.stdout_text);
    CHECK(summary.at("rows").get<int>() == 2);
    CHECK(summary.at("diverged_cells").get<int>() == 0);
    const std::string csv = slurp(out / "robustness_table.csv");
    CHECK(csv.rfind("n_atoms,closed_rms_mean_G,closed_rms_std_G,open_rms_mean_G,open_rms_std_G\n", 0) == 0);
}

TEST_CASE("empty atom-number list exits 1") {
    const auto cfg = write_temp_config("emptysweep.json", R"({"sweep": {"atom_numbers": []}})");
    auto r = run_cli("sweep --config " + cfg.string());
    CHECK(r.exit_code == 1);
}
