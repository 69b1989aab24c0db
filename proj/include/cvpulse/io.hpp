// Copyright 2026 The cvpulse Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Scenario files, pulse-record CSV, metadata sidecars and report serialization.
//
// Scenario file (JSON, every key optional, unknown keys rejected):
//
//   {
//     "source": {"kind": "symmetric_mixed", "v": 1.5, "k": 0.94},   // N0 units
//            or {"kind": "pure_nopa", "r": 0.472}                     // or "gain": 1.24
//     "theta_rad": 0.0,                       // relative phase of pulse B
//     "beamsplitter_reflectivity": 0.5,       // power fraction
//     "detector": {
//       "eta_t": 0.93,                        // transmission
//       "eta_h_visibility": 0.88,             // mode-matching visibility, squared internally
//       "eta_d": 0.945,                       // photodiode quantum efficiency
//       "electronic_noise_var_n0": 0.0794,    // N0 units
//       "lo_photons_per_pulse": 2.5e8
//     },
//     "schedule": {"kind": "linear_ramp", "phi_start_rad": 0, "phi_end_rad": 12.566, "pulses": 250000}
//              or {"kind": "constant", "phi_rad": 1.5708, "pulses": 250000},
//     "blocked_arm": "none",                  // none | a | b | signal
//     "block_size": 2500,                     // pulses per variance block
//     "seed": 1,                              // unsigned 64-bit
//     "chunk_size": 65536,                    // pulses per independently seeded RNG chunk
//     "subtract_electronic_noise": false,
//     "output": {"records": "records.csv", "report": "report.json"}
//   }

#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <iomanip>
#include <iostream>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include "cvpulse/analysis.hpp"
#include "cvpulse/errors.hpp"
#include "cvpulse/gaussian.hpp"
#include "cvpulse/pulse_sim.hpp"

namespace cvpulse {

using json = nlohmann::json;

inline constexpr const char *kRecordsHeader = "index,lo_phase_rad,value";
inline constexpr const char *kRecordsFormat = "cvpulse-records-v1";
inline constexpr const char *kReportFormat = "cvpulse-report-v1";

struct ScenarioFile {
    RunConfig run;
    std::size_t block_size = kDefaultBlockSize;
    bool subtract_electronic_noise = false;
    std::string records_path = "records.csv";
    std::string report_path = "report.json";

    void validate() const {
        run.validate();
        if (run.schedule.size() == 0) {
            throw InvalidInput("schedule.pulses must be positive");
        }
        if (block_size < 2) {
            throw InvalidInput("block_size must be >= 2");
        }
        if (records_path.empty() || report_path.empty()) {
            throw InvalidInput("output paths must not be empty");
        }
    }
};

/// Defaults for keys missing from a scenario file: the reference apparatus
/// (eta_T = 0.93, visibility 0.88, eta_D = 0.945, 50/50 recombination), the
/// (V, K) = (1.50, 0.94) source, electronic noise at the 11 dB bound and a
/// 250,000-pulse LO ramp over [0, 4 pi).
inline ScenarioFile default_scenario() {
    ScenarioFile s;
    s.run.source = SymmetricMixed{1.50, 0.94};
    s.run.theta = 0.0;
    s.run.beamsplitter_r = 0.5;
    s.run.detector = DetectorModel{0.93, 0.88, 0.945, kDefaultElectronicNoise, kDefaultLoPhotons};
    s.run.schedule = PhaseSchedule::linear_ramp(0.0, 4.0 * M_PI, 250'000);
    s.run.seed = 1;
    return s;
}

/// Built-in scenario of `reproduce-paper`. Variances are referenced to the
/// measured shot noise, so the electronic noise is already inside them and
/// is set to zero here.
inline ScenarioFile reference_scenario() {
    ScenarioFile s = default_scenario();
    s.run.detector.electronic_noise_var = 0.0;
    s.run.schedule = s.run.schedule.resized(1'000'000);
    s.run.seed = 20040601;
    return s;
}

namespace detail {

inline void reject_unknown_keys(const json &obj, std::initializer_list<const char *> allowed, const std::string &where) {
    if (!obj.is_object()) {
        throw InvalidInput(where + ": expected a JSON object");
    }
    std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto &item : obj.items()) {
        if (!ok.count(item.key())) {
            throw InvalidInput(where + ": unknown key '" + item.key() + "'");
        }
    }
}

inline double read_number(const json &obj, const char *key, double fallback, const std::string &where) {
    if (!obj.contains(key)) {
        return fallback;
    }
    const json &v = obj.at(key);
    if (!v.is_number()) {
        throw InvalidInput(where + "." + key + ": expected a number");
    }
    return v.get<double>();
}

inline std::uint64_t read_unsigned(const json &obj, const char *key, std::uint64_t fallback, const std::string &where) {
    if (!obj.contains(key)) {
        return fallback;
    }
    const json &v = obj.at(key);
    if (!v.is_number_unsigned()) {
        throw InvalidInput(where + "." + key + ": expected a non-negative integer");
    }
    return v.get<std::uint64_t>();
}

inline std::string read_string(const json &obj, const char *key, const std::string &fallback, const std::string &where) {
    if (!obj.contains(key)) {
        return fallback;
    }
    const json &v = obj.at(key);
    if (!v.is_string()) {
        throw InvalidInput(where + "." + key + ": expected a string");
    }
    return v.get<std::string>();
}

inline bool read_bool(const json &obj, const char *key, bool fallback, const std::string &where) {
    if (!obj.contains(key)) {
        return fallback;
    }
    const json &v = obj.at(key);
    if (!v.is_boolean()) {
        throw InvalidInput(where + "." + key + ": expected true or false");
    }
    return v.get<bool>();
}

inline SourceSpec source_from_json(const json &j) {
    const std::string kind = read_string(j, "kind", "", "source");
    if (kind == "pure_nopa") {
        reject_unknown_keys(j, {"kind", "r", "gain"}, "source");
        if (j.contains("r") && j.contains("gain")) {
            throw InvalidInput("source: give either r or gain, not both");
        }
        if (j.contains("gain")) {
            return PureNopa{squeezing_from_gain(read_number(j, "gain", 1.0, "source"))};
        }
        return PureNopa{read_number(j, "r", 0.0, "source")};
    }
    if (kind == "symmetric_mixed") {
        reject_unknown_keys(j, {"kind", "v", "k"}, "source");
        return SymmetricMixed{read_number(j, "v", 1.0, "source"), read_number(j, "k", 0.0, "source")};
    }
    throw InvalidInput("source.kind: expected pure_nopa or symmetric_mixed, got '" + kind + "'");
}

inline PhaseSchedule schedule_from_json(const json &j, const PhaseSchedule &fallback) {
    const std::string kind = read_string(j, "kind", "linear_ramp", "schedule");
    const std::uint64_t pulses = read_unsigned(j, "pulses", fallback.size(), "schedule");
    if (kind == "linear_ramp") {
        reject_unknown_keys(j, {"kind", "phi_start_rad", "phi_end_rad", "pulses"}, "schedule");
        return PhaseSchedule::linear_ramp(read_number(j, "phi_start_rad", 0.0, "schedule"),
                                          read_number(j, "phi_end_rad", 4.0 * M_PI, "schedule"), pulses);
    }
    if (kind == "constant") {
        reject_unknown_keys(j, {"kind", "phi_rad", "pulses"}, "schedule");
        return PhaseSchedule::constant(read_number(j, "phi_rad", 0.0, "schedule"), pulses);
    }
    throw InvalidInput("schedule.kind: expected linear_ramp or constant, got '" + kind + "'");
}

}  // namespace detail

/// Parses and validates a scenario; missing keys take the reference-apparatus defaults.
inline ScenarioFile scenario_from_json(const json &j) {
    using namespace detail;
    reject_unknown_keys(j,
                        {"source", "theta_rad", "beamsplitter_reflectivity", "detector", "schedule", "blocked_arm",
                         "block_size", "seed", "chunk_size", "subtract_electronic_noise", "output"},
                        "scenario");
    ScenarioFile s = default_scenario();
    if (j.contains("source")) {
        s.run.source = source_from_json(j.at("source"));
    }
    s.run.theta = read_number(j, "theta_rad", s.run.theta, "scenario");
    s.run.beamsplitter_r = read_number(j, "beamsplitter_reflectivity", s.run.beamsplitter_r, "scenario");
    if (j.contains("detector")) {
        const json &d = j.at("detector");
        reject_unknown_keys(d, {"eta_t", "eta_h_visibility", "eta_d", "electronic_noise_var_n0", "lo_photons_per_pulse"},
                            "detector");
        auto &det = s.run.detector;
        det.eta_t = read_number(d, "eta_t", det.eta_t, "detector");
        det.eta_h = read_number(d, "eta_h_visibility", det.eta_h, "detector");
        det.eta_d = read_number(d, "eta_d", det.eta_d, "detector");
        det.electronic_noise_var = read_number(d, "electronic_noise_var_n0", det.electronic_noise_var, "detector");
        det.lo_photons_per_pulse = read_number(d, "lo_photons_per_pulse", det.lo_photons_per_pulse, "detector");
    }
    if (j.contains("schedule")) {
        s.run.schedule = schedule_from_json(j.at("schedule"), s.run.schedule);
    }
    s.run.blocked_arm = parse_blocked_arm(read_string(j, "blocked_arm", "none", "scenario"));
    s.block_size = read_unsigned(j, "block_size", s.block_size, "scenario");
    s.run.seed = read_unsigned(j, "seed", s.run.seed, "scenario");
    s.run.chunk_size = read_unsigned(j, "chunk_size", s.run.chunk_size, "scenario");
    s.subtract_electronic_noise = read_bool(j, "subtract_electronic_noise", false, "scenario");
    if (j.contains("output")) {
        const json &o = j.at("output");
        reject_unknown_keys(o, {"records", "report"}, "output");
        s.records_path = read_string(o, "records", s.records_path, "output");
        s.report_path = read_string(o, "report", s.report_path, "output");
    }
    s.validate();
    return s;
}

/// Every field, explicitly, so that the file alone regenerates a run.
inline json scenario_to_json(const ScenarioFile &s) {
    json source;
    if (const auto *p = std::get_if<PureNopa>(&s.run.source)) {
        source = {{"kind", "pure_nopa"}, {"r", p->r}};
    } else {
        const auto &m = std::get<SymmetricMixed>(s.run.source);
        source = {{"kind", "symmetric_mixed"}, {"v", m.v}, {"k", m.k}};
    }
    json schedule;
    if (s.run.schedule.kind() == PhaseSchedule::Kind::linear_ramp) {
        schedule = {{"kind", "linear_ramp"},
                    {"phi_start_rad", s.run.schedule.start()},
                    {"phi_end_rad", s.run.schedule.end()},
                    {"pulses", s.run.schedule.size()}};
    } else {
        schedule = {{"kind", "constant"}, {"phi_rad", s.run.schedule.start()}, {"pulses", s.run.schedule.size()}};
    }
    const auto &d = s.run.detector;
    return {{"source", source},
            {"theta_rad", s.run.theta},
            {"beamsplitter_reflectivity", s.run.beamsplitter_r},
            {"detector",
             {{"eta_t", d.eta_t},
              {"eta_h_visibility", d.eta_h},
              {"eta_d", d.eta_d},
              {"electronic_noise_var_n0", d.electronic_noise_var},
              {"lo_photons_per_pulse", d.lo_photons_per_pulse}}},
            {"schedule", schedule},
            {"blocked_arm", std::string(to_string(s.run.blocked_arm))},
            {"block_size", s.block_size},
            {"seed", s.run.seed},
            {"chunk_size", s.run.chunk_size},
            {"subtract_electronic_noise", s.subtract_electronic_noise},
            {"output", {{"records", s.records_path}, {"report", s.report_path}}}};
}

inline json read_json_file(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    try {
        return json::parse(in);
    } catch (const json::parse_error &e) {
        throw InvalidInput(path.string() + ": " + e.what());
    }
}

inline ScenarioFile load_scenario(const std::filesystem::path &path) {
    try {
        return scenario_from_json(read_json_file(path));
    } catch (const InvalidInput &e) {
        throw InvalidInput(path.string() + ": " + e.what());
    }
}

inline void write_text_file(const std::filesystem::path &path, const std::string &text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot open " + path.string() + " for writing");
    }
    out << text;
    out.flush();
    if (!out) {
        throw IoError("failed writing " + path.string());
    }
}

namespace detail {

/// Shortest representation that parses back to the same double.
inline void append_double(std::string &out, double x) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof(buf), x);
    out.append(buf, res.ptr);
}

}  // namespace detail

inline void write_records_csv(std::ostream &out, const std::vector<PulseRecord> &records) {
    std::string line;
    out << kRecordsHeader << '\n';
    for (const auto &r : records) {
        line.clear();
        line += std::to_string(r.index);
        line += ',';
        detail::append_double(line, r.lo_phase);
        line += ',';
        detail::append_double(line, r.value);
        line += '\n';
        out << line;
    }
}

inline void write_records_csv(const std::filesystem::path &path, const std::vector<PulseRecord> &records) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot open " + path.string() + " for writing");
    }
    write_records_csv(out, records);
    out.flush();
    if (!out) {
        throw IoError("failed writing " + path.string());
    }
}

/// Parses records; malformed content raises InvalidInput naming the line.
inline std::vector<PulseRecord> parse_records_csv(std::istream &in, const std::string &name = "records") {
    std::string line;
    std::size_t line_no = 1;
    if (!std::getline(in, line)) {
        throw InvalidInput(name + ":1: empty file, expected header '" + kRecordsHeader + "'");
    }
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != kRecordsHeader) {
        throw InvalidInput(name + ":1: bad header '" + line + "', expected '" + kRecordsHeader + "'");
    }
    std::vector<PulseRecord> records;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) {
            continue;
        }
        auto fail = [&](const std::string &why) {
            return InvalidInput(name + ":" + std::to_string(line_no) + ": " + why);
        };
        const char *p = line.data();
        const char *end = line.data() + line.size();
        PulseRecord r{};
        auto res = std::from_chars(p, end, r.index);
        if (res.ec != std::errc{} || res.ptr == end || *res.ptr != ',') throw fail("bad index field");
        p = res.ptr + 1;
        res = std::from_chars(p, end, r.lo_phase);
        if (res.ec != std::errc{} || res.ptr == end || *res.ptr != ',') throw fail("bad lo_phase_rad field");
        p = res.ptr + 1;
        res = std::from_chars(p, end, r.value);
        if (res.ec != std::errc{} || res.ptr != end) throw fail("bad value field");
        if (!std::isfinite(r.lo_phase) || !std::isfinite(r.value)) throw fail("non-finite number");
        records.push_back(r);
    }
    if (records.empty()) {
        throw InvalidInput(name + ": no records");
    }
    return records;
}

inline std::vector<PulseRecord> read_records_csv(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    return parse_records_csv(in, path.string());
}

/// Path of the JSON sidecar belonging to a records CSV.
inline std::filesystem::path sidecar_path(const std::filesystem::path &records) {
    std::filesystem::path p = records;
    p.replace_extension(".json");
    return p;
}

inline json records_metadata(const ScenarioFile &scenario, const std::string &records_file) {
    const CovarianceMatrix port = detected_covariance(scenario.run);
    const QuadratureExtremes ext = quadrature_extremes(port, 0);
    const double noise = scenario.run.detector.electronic_noise_var;
    return {{"format", kRecordsFormat},
            {"records_file", records_file},
            {"columns", {"index", "lo_phase_rad", "value"}},
            {"pulses", scenario.run.schedule.size()},
            {"seed", scenario.run.seed},
            {"chunk_size", scenario.run.chunk_size},
            {"efficiency", scenario.run.detector.efficiency()},
            {"analytic",
             {{"detected_variance_min", ext.min_variance + noise},
              {"detected_variance_max", ext.max_variance + noise},
              {"phase_at_min_rad", ext.phase_at_min}}},
            {"scenario", scenario_to_json(scenario)}};
}

inline json scan_to_json(const ScanEstimate &s) {
    return {{"v_min", s.v_min},
            {"v_max", s.v_max},
            {"phase_at_min_rad", s.phase_at_min},
            {"std_error_min", s.std_error_min},
            {"std_error_max", s.std_error_max},
            {"offset", s.offset},
            {"offset_std_error", s.offset_std_error},
            {"amplitude", s.amplitude},
            {"n_blocks", s.n_blocks},
            {"block_size", s.block_size}};
}

inline std::string verdict(const EntanglementReport &r) {
    return r.nonseparable ? "nonseparable" : "separable";
}

inline json report_to_json(const AnalysisResult &a) {
    const EntanglementReport &r = a.report;
    json j = {{"format", kReportFormat},
              {"verdict", verdict(r)},
              {"report",
               {{"corrected_squeezed_variance", r.corrected_squeezed_variance},
                {"corrected_squeezed_std_error", r.corrected_squeezed_std_error},
                {"corrected_v", r.corrected_v},
                {"corrected_v_std_error", r.corrected_v_std_error},
                {"corrected_k", r.corrected_k},
                {"i_ds", r.i_ds},
                {"i_ds_std_error", r.i_ds_std_error},
                {"e_f", r.e_f},
                {"e_f_std_error", r.e_f_std_error},
                {"reid_product", r.reid_product},
                {"efficiency_used", r.efficiency_used},
                {"nonseparable", r.nonseparable}}},
              {"measured",
               {{"squeezed", a.measured.squeezed.value},
                {"squeezed_std_error", a.measured.squeezed.std_error},
                {"antisqueezed", a.measured.antisqueezed.value},
                {"antisqueezed_std_error", a.measured.antisqueezed.std_error}}},
              {"corrections",
               {{"antisqueezed_corrected", a.antisqueezed_corrected},
                {"antisqueezed_predicted_v_plus_k", a.antisqueezed_predicted},
                {"v_from_single_arm", a.v_from_single_arm},
                {"physicality_margin", a.physicality_margin},
                {"physicality_margin_std_error", a.physicality_margin_std_error}}}};
    if (a.measured.single_arm) {
        j["measured"]["single_arm"] = a.measured.single_arm->value;
        j["measured"]["single_arm_std_error"] = a.measured.single_arm->std_error;
    }
    if (a.covariance) {
        json rows = json::array();
        for (Eigen::Index i = 0; i < 4; ++i) {
            json row = json::array();
            for (Eigen::Index k = 0; k < 4; ++k) row.push_back(a.covariance->matrix()(i, k));
            rows.push_back(row);
        }
        j["covariance"] = rows;
    } else {
        j["covariance"] = nullptr;
    }
    return j;
}

/// Aligned human-readable table of an analysis.
inline std::string report_table(const AnalysisResult &a) {
    const EntanglementReport &r = a.report;
    std::ostringstream os;
    os << std::fixed;
    auto row = [&](const std::string &label, double value, double err, const std::string &unit, int digits = 4) {
        os << "  " << std::left << std::setw(34) << label << std::right << std::setw(10) << std::setprecision(digits)
           << value;
        if (err > 0.0) {
            os << " +/- " << std::setw(7) << std::setprecision(digits) << err;
        } else {
            os << "            ";
        }
        os << "  " << unit << '\n';
    };
    os << "measured (no correction)\n";
    row("squeezed variance", a.measured.squeezed.value, a.measured.squeezed.std_error, "N0");
    row("antisqueezed variance", a.measured.antisqueezed.value, a.measured.antisqueezed.std_error, "N0");
    if (a.measured.single_arm) {
        row("single-beam variance", a.measured.single_arm->value, a.measured.single_arm->std_error, "N0");
    }
    os << "corrected for efficiency eta = " << std::setprecision(4) << r.efficiency_used << "\n";
    row("squeezed variance", r.corrected_squeezed_variance, r.corrected_squeezed_std_error, "N0");
    row("V", r.corrected_v, r.corrected_v_std_error, "N0");
    row("K = V - squeezed", r.corrected_k, 0.0, "N0");
    row("antisqueezed (check: V + K)", a.antisqueezed_corrected, 0.0, "N0");
    os << "entanglement\n";
    row("I_DS (separable >= 2)", r.i_ds, r.i_ds_std_error, "N0");
    row("E_F", r.e_f, r.e_f_std_error, "ebit");
    row("Reid-EPR product (EPR < 1)", r.reid_product, 0.0, "N0^2");
    os << "  verdict: " << verdict(r) << '\n';
    if (!a.covariance) {
        os << "  note: point estimate lies outside the physical set within statistical error\n";
    }
    return os.str();
}

}  // namespace cvpulse
