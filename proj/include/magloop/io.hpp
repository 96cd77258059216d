#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "magloop/hash.hpp"
#include "magloop/loopshape.hpp"
#include "magloop/looprun.hpp"
#include "magloop/rational_tf.hpp"
#include "magloop/sysid.hpp"

namespace magloop {

using json = nlohmann::json;

namespace io {

/// Shortest representation that round-trips a double exactly.
inline std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << content;
}

inline std::string frequency_response_csv(const FrequencyResponse& fr) {
    std::string s = "omega_rad_s,re,im,mag_db,phase_deg\n";
    for (std::size_t i = 0; i < fr.size(); ++i) {
        const double mag_db = 20.0 * std::log10(std::abs(fr.value[i]));
        const double phase_deg = (i < fr.phase_rad.size() ? fr.phase_rad[i] : std::arg(fr.value[i])) *
                                 180.0 / M_PI;
        s += fmt(fr.omega[i]) + "," + fmt(fr.value[i].real()) + "," + fmt(fr.value[i].imag()) + "," +
             fmt(mag_db) + "," + fmt(phase_deg) + "\n";
    }
    return s;
}

inline std::string loop_record_csv(const LoopRecord& rec) {
    std::string s = "t,b_true_G,y_V,u_V,b_c_G,b_est_G\n";
    s.reserve(s.size() + rec.t.size() * 96);
    for (std::size_t i = 0; i < rec.t.size(); ++i) {
        s += fmt(rec.t[i]) + "," + fmt(rec.b_true[i]) + "," + fmt(rec.y[i]) + "," + fmt(rec.u[i]) +
             "," + fmt(rec.b_c[i]) + "," + fmt(rec.b_est[i]) + "\n";
    }
    return s;
}

inline std::string sweep_table_csv(const std::vector<SweepRow>& table) {
    std::string s = "n_atoms,closed_rms_mean_G,closed_rms_std_G,open_rms_mean_G,open_rms_std_G\n";
    for (const auto& row : table) {
        s += fmt(row.n_atoms) + "," + fmt(row.closed_rms_mean_g) + "," + fmt(row.closed_rms_std_g) +
             "," + fmt(row.open_rms_mean_g) + "," + fmt(row.open_rms_std_g) + "\n";
    }
    return s;
}

inline json tf_to_json(const RationalTF& tf) { return json{{"num", tf.num}, {"den", tf.den}}; }

inline RationalTF tf_from_json(const json& j) {
    if (!j.is_object() || !j.contains("num") || !j.contains("den"))
        throw ConfigError("transfer function JSON needs 'num' and 'den' arrays");
    return RationalTF(j.at("num").get<std::vector<double>>(), j.at("den").get<std::vector<double>>());
}

inline const char* convention_name(SignConvention c) {
    return c == SignConvention::tracking_minus ? "tracking_minus" : "paper_plus";
}

inline json design_to_json(const ControllerDesign& design, const StabilityMargins* margins = nullptr) {
    json j{{"weight", tf_to_json(design.weight)},
           {"q_param", tf_to_json(design.q_param)},
           {"controller", tf_to_json(design.controller)},
           {"closed_loop", tf_to_json(design.closed_loop)},
           {"convention", convention_name(design.convention)},
           {"closed_loop_stable", design.closed_loop_stable}};
    if (margins) {
        j["margins"] = json{{"gain_margin_db", margins->gain_margin_db},
                            {"phase_margin_deg", margins->phase_margin_deg},
                            {"crossover_rad_s", margins->crossover_rad_s}};
    }
    return j;
}

inline ControllerDesign design_from_json(const json& j) {
    ControllerDesign d;
    d.weight = tf_from_json(j.at("weight"));
    d.q_param = tf_from_json(j.at("q_param"));
    d.controller = tf_from_json(j.at("controller"));
    d.closed_loop = tf_from_json(j.at("closed_loop"));
    d.convention = j.at("convention").get<std::string>() == "paper_plus" ? SignConvention::paper_plus
                                                                         : SignConvention::tracking_minus;
    d.closed_loop_stable = j.at("closed_loop_stable").get<bool>();
    return d;
}

/// Sidecar metadata written next to every artifact.
inline json meta_json(std::uint64_t config_hash, std::uint64_t seed, const char* convention = nullptr,
                      std::uint64_t scenario_hash = 0) {
    json j{{"config_hash", config_hash}, {"seed", seed}};
    if (convention) j["controller_convention"] = convention;
    if (scenario_hash) j["scenario_hash"] = scenario_hash;
    return j;
}

} // namespace io

} // namespace magloop
