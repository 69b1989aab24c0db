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

// Command implementations behind the `cvpulse` executable.
//
// Exit codes: 0 success, 1 a reproduction or consistency check failed,
// 2 invalid input, 3 I/O failure.

#pragma once

#include <CLI11.hpp>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "cvpulse/analysis.hpp"
#include "cvpulse/entanglement.hpp"
#include "cvpulse/errors.hpp"
#include "cvpulse/io.hpp"
#include "cvpulse/pulse_sim.hpp"

namespace cvpulse {

enum ExitCode : int {
    kExitOk = 0,
    kExitCheckFailed = 1,
    kExitInvalidInput = 2,
    kExitIo = 3,
};

struct CommonOptions {
    std::string scenario;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> pulses;
    std::optional<std::size_t> block_size;
    std::string out_dir;
    bool json = false;
    unsigned threads = 0;
};

namespace detail {

template <typename F>
int guarded(std::ostream &err, F &&body) {
    try {
        return body();
    } catch (const IoError &e) {
        err << "error: " << e.what() << '\n';
        return kExitIo;
    } catch (const std::filesystem::filesystem_error &e) {
        err << "error: " << e.what() << '\n';
        return kExitIo;
    } catch (const SymmetryViolation &e) {
        err << "check failed: " << e.what() << '\n';
        return kExitCheckFailed;
    } catch (const Error &e) {
        err << "error: " << e.what() << '\n';
        return kExitInvalidInput;
    }
}

inline ScenarioFile scenario_with_overrides(const CommonOptions &opts, ScenarioFile base) {
    if (opts.seed) base.run.seed = *opts.seed;
    if (opts.pulses) base.run.schedule = base.run.schedule.resized(*opts.pulses);
    if (opts.block_size) base.block_size = *opts.block_size;
    base.run.threads = opts.threads;
    base.validate();
    return base;
}

inline std::filesystem::path output_dir(const CommonOptions &opts) {
    std::filesystem::path dir = opts.out_dir.empty() ? std::filesystem::path(".") : std::filesystem::path(opts.out_dir);
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) {
        throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
    }
    return dir;
}

inline double sample_variance(const std::vector<PulseRecord> &records) {
    double mean = 0.0, m2 = 0.0;
    std::size_t n = 0;
    for (const auto &r : records) {
        ++n;
        const double d = r.value - mean;
        mean += d / static_cast<double>(n);
        m2 += d * (r.value - mean);
    }
    return n > 1 ? m2 / static_cast<double>(n - 1) : 0.0;
}

inline std::string with_suffix(const std::string &file, const std::string &suffix) {
    std::filesystem::path p(file);
    return (p.parent_path() / (p.stem().string() + suffix + p.extension().string())).string();
}

}  // namespace detail

/// Writes the scenario's pulse records and their metadata sidecar. With
/// `protocol`, writes the three scans of the analysis protocol instead
/// (suffixes _in_phase, _out_of_phase, _single_arm), seeded as in `end_to_end_report`.
inline int cmd_simulate(const CommonOptions &opts, bool protocol, std::ostream &out, std::ostream &err) {
    return detail::guarded(err, [&] {
        const ScenarioFile base = opts.scenario.empty() ? default_scenario() : load_scenario(opts.scenario);
        const ScenarioFile scenario = detail::scenario_with_overrides(opts, base);
        const auto dir = detail::output_dir(opts);

        std::vector<std::pair<std::string, ScenarioFile>> runs;
        if (protocol) {
            if (scenario.run.blocked_arm != BlockedArm::none) {
                throw InvalidInput("--protocol requires blocked_arm = none");
            }
            ScenarioFile in = scenario, opposite = scenario, single = scenario;
            in.run.seed = scan_seed(scenario.run.seed, 0);
            in.records_path = detail::with_suffix(scenario.records_path, "_in_phase");
            opposite.run.theta = scenario.run.theta + M_PI;
            opposite.run.seed = scan_seed(scenario.run.seed, 1);
            opposite.records_path = detail::with_suffix(scenario.records_path, "_out_of_phase");
            single.run.blocked_arm = BlockedArm::b;
            single.run.seed = scan_seed(scenario.run.seed, 2);
            single.records_path = detail::with_suffix(scenario.records_path, "_single_arm");
            runs = {{"in_phase", in}, {"out_of_phase", opposite}, {"single_arm", single}};
        } else {
            runs = {{"records", scenario}};
        }

        json summary = json::array();
        for (const auto &[role, sc] : runs) {
            const auto records = sample_pulses(sc.run);
            const auto csv = dir / sc.records_path;
            write_records_csv(csv, records);
            const json meta = records_metadata(sc, csv.filename().string());
            write_text_file(sidecar_path(csv), meta.dump(2) + "\n");

            json item = {{"role", role},
                         {"records", csv.string()},
                         {"metadata", sidecar_path(csv).string()},
                         {"pulses", records.size()},
                         {"seed", sc.run.seed},
                         {"sample_variance", detail::sample_variance(records)},
                         {"analytic", meta.at("analytic")}};
            if (records.size() >= sc.block_size) {
                const auto blocks = block_variance_trace(records, sc.block_size);
                auto [lo, hi] = std::minmax_element(blocks.begin(), blocks.end(), [](const auto &x, const auto &y) {
                    return x.variance < y.variance;
                });
                item["block_variance_min"] = lo->variance;
                item["block_variance_max"] = hi->variance;
                item["blocks"] = blocks.size();
            }
            summary.push_back(item);
        }
        if (opts.json) {
            out << summary.dump(2) << '\n';
        } else {
            for (const auto &item : summary) {
                out << "wrote " << item["pulses"].get<std::size_t>() << " pulses to "
                    << item["records"].get<std::string>() << " (seed " << item["seed"].get<std::uint64_t>() << ")\n";
                out << std::fixed << std::setprecision(4) << "  sample variance " << item["sample_variance"].get<double>()
                    << " N0; analytic range [" << item["analytic"]["detected_variance_min"].get<double>() << ", "
                    << item["analytic"]["detected_variance_max"].get<double>() << "] N0\n";
            }
        }
        return int{kExitOk};
    });
}

struct AnalyzeInputs {
    std::string records;
    std::string out_of_phase;
    std::string single_arm;
};

/// Reconstructs the source from recorded scans. Settings come from
/// `--scenario`, or else from the scenario embedded in the records' sidecar.
inline int cmd_analyze(const AnalyzeInputs &inputs, const CommonOptions &opts, std::ostream &out, std::ostream &err) {
    return detail::guarded(err, [&] {
        if (inputs.records.empty()) {
            throw InvalidInput("analyze: --records is required");
        }
        const std::filesystem::path records_path(inputs.records);
        json provenance = json::object();
        auto sidecar_of = [&](const std::string &file) -> std::optional<json> {
            const auto side = sidecar_path(file);
            if (!std::filesystem::exists(side)) return std::nullopt;
            return read_json_file(side);
        };

        ScenarioFile scenario;
        if (!opts.scenario.empty()) {
            scenario = load_scenario(opts.scenario);
        } else if (auto meta = sidecar_of(inputs.records)) {
            scenario = scenario_from_json(meta->at("scenario"));
        } else {
            throw InvalidInput("analyze: no --scenario given and no metadata sidecar next to " + inputs.records);
        }
        if (opts.block_size) scenario.block_size = *opts.block_size;
        scenario.validate();

        auto load = [&](const std::string &role, const std::string &file) {
            json entry = {{"file", file}};
            if (auto meta = sidecar_of(file)) {
                entry["seed"] = meta->value("seed", json());
                entry["chunk_size"] = meta->value("chunk_size", json());
                entry["scenario"] = meta->value("scenario", json());
            }
            provenance[role] = entry;
            return read_records_csv(file);
        };
        const auto in_phase = load("in_phase", inputs.records);
        std::optional<std::vector<PulseRecord>> opposite, single;
        if (!inputs.out_of_phase.empty()) opposite = load("out_of_phase", inputs.out_of_phase);
        if (!inputs.single_arm.empty()) single = load("single_arm", inputs.single_arm);

        AnalysisSettings settings = settings_for(scenario.run, scenario.block_size, scenario.subtract_electronic_noise);
        std::vector<ScanEstimate> fits;
        const AnalysisResult result = analyze_scans(in_phase, opposite ? &*opposite : nullptr,
                                                    single ? &*single : nullptr, settings, &fits);

        json report = report_to_json(result);
        report["inputs"] = provenance;
        report["scenario"] = scenario_to_json(scenario);
        json scans = json::array();
        for (const auto &f : fits) scans.push_back(scan_to_json(f));
        report["scans"] = scans;

        if (!opts.out_dir.empty()) {
            const auto dir = detail::output_dir(opts);
            write_text_file(dir / scenario.report_path, report.dump(2) + "\n");
        }
        if (opts.json) {
            out << report.dump(2) << '\n';
        } else {
            out << report_table(result);
        }
        return int{kExitOk};
    });
}

/// One line of the reproduction table.
struct ReproductionCheck {
    std::string name;
    std::string unit;
    double reported;   ///< value quoted for the experiment
    double expected;   ///< reported value, or the analytic prediction when the efficiency is overridden
    double simulated;
    double tolerance;
    bool pass;
};

/// Allowances on top of 4 standard errors. 0.005 is half a unit in the last
/// quoted digit. The antisqueezed value quoted (1.96) sits 0.02 below what the
/// quoted V + K and efficiency imply (1.98), so it gets 0.025.
inline constexpr double kRoundingAllowance = 0.005;
inline constexpr double kAntisqueezedAllowance = 0.025;
inline constexpr double kSingleBeamAllowance = 0.01;
inline constexpr double kDuanSimonAllowance = 0.01;
inline constexpr double kCheckSigma = 4.0;

/// Compares an end-to-end run with the reported experimental numbers.
/// `efficiency_overridden` switches raw (uncorrected) expectations to the
/// analytic prediction for the simulated detector.
inline std::vector<ReproductionCheck> reproduction_checks(const EndToEndResult &run, const RunConfig &config,
                                            bool efficiency_overridden) {
    const AnalysisResult &a = run.analysis;
    const EntanglementReport &r = a.report;
    const double db_per_rel = 10.0 / std::log(10.0);

    double raw_sq = 0.70, raw_anti = 1.96, raw_single = 1.17;
    if (efficiency_overridden) {
        const AnalysisResult analytic = analytic_report(config, settings_for(config, kDefaultBlockSize, false));
        raw_sq = analytic.measured.squeezed.value;
        raw_anti = analytic.measured.antisqueezed.value;
        raw_single = analytic.measured.single_arm->value;
    }
    auto check = [](std::string name, std::string unit, double reported, double expected, double simulated,
                    double tolerance) {
        return ReproductionCheck{std::move(name), std::move(unit), reported, expected, simulated,
                                 tolerance,       std::abs(simulated - expected) <= tolerance};
    };
    const auto &m = a.measured;
    const double sq_se = m.squeezed.std_error;
    const double anti_se = m.antisqueezed.std_error;
    const double single_se = m.single_arm ? m.single_arm->std_error : 0.0;
    const double single = m.single_arm ? m.single_arm->value : std::nan("");

    auto db_allow = [&](double expected, double allowance) {
        return db_per_rel * std::log1p(allowance / expected);
    };
    std::vector<ReproductionCheck> checks;
    checks.push_back(check("squeezed variance (raw)", "N0", 0.70, raw_sq, m.squeezed.value,
                           kRoundingAllowance + kCheckSigma * sq_se));
    checks.push_back(check("antisqueezed variance (raw)", "N0", 1.96, raw_anti, m.antisqueezed.value,
                           kAntisqueezedAllowance + kCheckSigma * anti_se));
    checks.push_back(check("squeezed variance (corrected)", "N0", 0.56, 0.56, r.corrected_squeezed_variance,
                           kRoundingAllowance + kCheckSigma * r.corrected_squeezed_std_error));
    checks.push_back(check("single-beam variance (raw)", "N0", 1.17, raw_single, single,
                           kSingleBeamAllowance + kCheckSigma * single_se));
    checks.push_back(check("I_DS", "N0", 1.12, 1.12, r.i_ds, kDuanSimonAllowance + kCheckSigma * r.i_ds_std_error));
    checks.push_back(check("E_F", "ebit", 0.44, 0.44, r.e_f, kRoundingAllowance + kCheckSigma * r.e_f_std_error));
    checks.push_back(check("squeezing (raw)", "dB", -1.55, variance_to_db(raw_sq), variance_to_db(m.squeezed.value),
                           kRoundingAllowance + kCheckSigma * db_per_rel * sq_se / m.squeezed.value));
    checks.push_back(check("antisqueezing (raw)", "dB", 2.92, variance_to_db(raw_anti),
                           variance_to_db(m.antisqueezed.value),
                           db_allow(raw_anti, kAntisqueezedAllowance) +
                               kCheckSigma * db_per_rel * anti_se / m.antisqueezed.value));
    checks.push_back(check("squeezing (corrected)", "dB", -2.52, variance_to_db(0.56),
                           variance_to_db(r.corrected_squeezed_variance),
                           kRoundingAllowance + kCheckSigma * db_per_rel * r.corrected_squeezed_std_error /
                                                    r.corrected_squeezed_variance));
    if (!efficiency_overridden) {
        // quoted dB values are compared directly, not through the rounded variances
        checks[6].expected = -1.55;
        checks[7].expected = 2.92;
        checks[8].expected = -2.52;
        for (std::size_t i = 6; i < 9; ++i) {
            checks[i].pass = std::abs(checks[i].simulated - checks[i].expected) <= checks[i].tolerance;
        }
    }
    return checks;
}

inline std::string checks_table(const std::vector<ReproductionCheck> &checks) {
    std::ostringstream os;
    os << std::fixed;
    os << "  " << std::left << std::setw(32) << "quantity" << std::right << std::setw(9) << "reported" << std::setw(11)
       << "expected" << std::setw(11) << "simulated" << std::setw(10) << "tol" << "  unit  result\n";
    for (const auto &c : checks) {
        os << "  " << std::left << std::setw(32) << c.name << std::right << std::setprecision(2) << std::setw(9)
           << c.reported << std::setprecision(4) << std::setw(11) << c.expected << std::setw(11) << c.simulated
           << std::setw(10) << c.tolerance << "  " << std::left << std::setw(5) << c.unit << " "
           << (c.pass ? "PASS" : "FAIL") << '\n';
    }
    return os.str();
}

struct ReproduceOptions {
    std::optional<double> efficiency;
    std::size_t pulses = 1'000'000;
};

/// Runs the built-in reference scenario through the three-scan protocol and
/// compares every reported number. Exit 1 if any check fails.
inline int cmd_reproduce_paper(const CommonOptions &opts, const ReproduceOptions &repro, std::ostream &out,
                               std::ostream &err) {
    return detail::guarded(err, [&] {
        ScenarioFile scenario = reference_scenario();
        if (repro.efficiency) {
            scenario.run.detector = DetectorModel::with_efficiency(*repro.efficiency, 0.0);
        }
        CommonOptions o = opts;
        if (!o.pulses) o.pulses = repro.pulses;
        scenario = detail::scenario_with_overrides(o, scenario);
        const std::size_t pulses = scenario.run.schedule.size();

        const EndToEndResult run = end_to_end_report(scenario.run, pulses, scenario.block_size, false);
        const auto checks = reproduction_checks(run, scenario.run, repro.efficiency.has_value());
        const bool all_pass = std::all_of(checks.begin(), checks.end(), [](const auto &c) { return c.pass; });

        json j = report_to_json(run.analysis);
        j["scenario"] = scenario_to_json(scenario);
        j["pulses_per_scan"] = pulses;
        j["seeds"] = {{"in_phase", run.seed_in_phase},
                      {"out_of_phase", run.seed_out_of_phase},
                      {"single_arm", run.seed_single_arm}};
        j["scans"] = {scan_to_json(run.in_phase), scan_to_json(run.out_of_phase), scan_to_json(run.single_arm)};
        json jc = json::array();
        for (const auto &c : checks) {
            jc.push_back({{"name", c.name},
                          {"unit", c.unit},
                          {"reported", c.reported},
                          {"expected", c.expected},
                          {"simulated", c.simulated},
                          {"tolerance", c.tolerance},
                          {"pass", c.pass}});
        }
        j["checks"] = jc;
        j["all_pass"] = all_pass;

        if (!opts.out_dir.empty()) {
            const auto dir = detail::output_dir(opts);
            write_text_file(dir / "reproduce.json", j.dump(2) + "\n");
        }
        if (opts.json) {
            out << j.dump(2) << '\n';
        } else {
            out << "reference scenario: (V, K) = (1.50, 0.94), eta = " << std::fixed << std::setprecision(4)
                << scenario.run.detector.efficiency() << ", " << pulses << " pulses per scan, seed "
                << scenario.run.seed << "\n\n";
            out << report_table(run.analysis) << '\n';
            out << checks_table(checks);
            out << (all_pass ? "all checks passed\n" : "SOME CHECKS FAILED\n");
        }
        return all_pass ? int{kExitOk} : int{kExitCheckFailed};
    });
}

struct ThetaScanRow {
    double theta;
    double v_min;
    double v_max;
    double phase_at_min;
    double expected_phase_at_min;
    std::optional<ScanEstimate> fitted;
};

/// Ellipse of the detected port for `points` relative phases in [0, 2 pi):
/// constant extremes, minimum moving by theta / 2. With `pulses` > 0 each
/// point is also simulated and fitted.
inline std::vector<ThetaScanRow> theta_scan(const ScenarioFile &scenario, std::size_t points, std::size_t pulses) {
    if (points == 0) {
        throw InvalidInput("scan-theta: need at least one point");
    }
    RunConfig config = scenario.run;
    config.blocked_arm = BlockedArm::none;
    config.theta = 0.0;
    const double phase0 = quadrature_extremes(detected_covariance(config), 0).phase_at_min;
    std::vector<ThetaScanRow> rows;
    for (std::size_t j = 0; j < points; ++j) {
        config.theta = 2.0 * M_PI * static_cast<double>(j) / static_cast<double>(points);
        const QuadratureExtremes ext = quadrature_extremes(detected_covariance(config), 0);
        const double noise = config.detector.electronic_noise_var;
        const double expected = std::fmod(phase0 + 0.5 * config.theta, M_PI);
        ThetaScanRow row{config.theta, ext.min_variance + noise, ext.max_variance + noise, ext.phase_at_min, expected,
                         std::nullopt};
        if (pulses > 0) {
            RunConfig sim = config;
            sim.schedule = config.schedule.resized(pulses);
            sim.seed = derive_seed(scenario.run.seed, 100 + j);
            ScanFitOptions fit;
            fit.block_size = scenario.block_size;
            row.fitted = fit_phase_scan(sample_pulses(sim), fit);
        }
        rows.push_back(row);
    }
    return rows;
}

inline int cmd_scan_theta(const CommonOptions &opts, std::size_t points, std::ostream &out, std::ostream &err) {
    return detail::guarded(err, [&] {
        const ScenarioFile base = opts.scenario.empty() ? reference_scenario() : load_scenario(opts.scenario);
        CommonOptions o = opts;
        const std::size_t pulses = o.pulses.value_or(0);
        o.pulses.reset();
        const ScenarioFile scenario = detail::scenario_with_overrides(o, base);
        const auto rows = theta_scan(scenario, points, pulses);

        std::ostringstream csv;
        csv << "theta_rad,v_min,v_max,phase_at_min_rad,expected_phase_at_min_rad";
        if (pulses > 0) csv << ",fitted_v_min,fitted_v_max,fitted_phase_at_min_rad";
        csv << '\n';
        json j = json::array();
        for (const auto &r : rows) {
            std::string line;
            for (double x : {r.theta, r.v_min, r.v_max, r.phase_at_min, r.expected_phase_at_min}) {
                if (!line.empty()) line += ',';
                detail::append_double(line, x);
            }
            json item = {{"theta_rad", r.theta},
                         {"v_min", r.v_min},
                         {"v_max", r.v_max},
                         {"phase_at_min_rad", r.phase_at_min},
                         {"expected_phase_at_min_rad", r.expected_phase_at_min}};
            if (r.fitted) {
                for (double x : {r.fitted->v_min, r.fitted->v_max, r.fitted->phase_at_min}) {
                    line += ',';
                    detail::append_double(line, x);
                }
                item["fitted"] = scan_to_json(*r.fitted);
            }
            csv << line << '\n';
            j.push_back(item);
        }
        if (!opts.out_dir.empty()) {
            const auto dir = detail::output_dir(opts);
            write_text_file(dir / "theta_scan.csv", csv.str());
        }
        if (opts.json) {
            out << j.dump(2) << '\n';
        } else {
            out << csv.str();
        }
        return int{kExitOk};
    });
}

/// Full command line: `cvpulse <simulate|analyze|reproduce-paper|scan-theta> [flags]`.
inline int run_cli(int argc, const char *const *argv, std::ostream &out, std::ostream &err) {
    CLI::App app{"Time-domain simulation and analysis of pulsed quadrature entanglement", "cvpulse"};
    app.require_subcommand(1);

    CommonOptions opts;
    auto add_common = [&](CLI::App *sub) {
        sub->add_option("--scenario", opts.scenario, "Scenario file (JSON)");
        sub->add_option("--seed", opts.seed, "Override the RNG seed (unsigned 64-bit)");
        sub->add_option("--pulses", opts.pulses, "Override the number of pulses")->check(CLI::PositiveNumber);
        sub->add_option("--block-size", opts.block_size, "Pulses per variance block (default 2500)")
            ->check(CLI::Range(std::size_t{2}, std::numeric_limits<std::size_t>::max()));
        sub->add_option("--out", opts.out_dir, "Output directory");
        sub->add_flag("--json", opts.json, "Print JSON instead of a text table");
        sub->add_option("--threads", opts.threads, "Worker threads (0 = all cores); never changes results");
    };

    bool protocol = false;
    auto *simulate = app.add_subcommand("simulate", "Write pulse records (CSV) and a metadata sidecar (JSON)");
    add_common(simulate);
    simulate->add_flag("--protocol", protocol, "Write the in-phase, out-of-phase and single-arm scans");

    AnalyzeInputs inputs;
    auto *analyze = app.add_subcommand("analyze", "Reconstruct covariance and witnesses from pulse records");
    add_common(analyze);
    analyze->add_option("--records", inputs.records, "In-phase (or only) scan CSV")->required();
    analyze->add_option("--out-of-phase", inputs.out_of_phase, "Scan recorded with theta + pi");
    analyze->add_option("--single-arm", inputs.single_arm, "Scan recorded with arm B blocked");

    ReproduceOptions repro;
    auto *reproduce = app.add_subcommand("reproduce-paper", "Simulate the reference experiment and check its numbers");
    add_common(reproduce);
    reproduce->add_option("--eta", repro.efficiency, "Override the overall detection efficiency")
        ->check(CLI::Range(1e-9, 1.0));

    std::size_t points = 16;
    auto *scan = app.add_subcommand("scan-theta", "Sweep the relative phase and report the noise ellipse");
    add_common(scan);
    scan->add_option("--points", points, "Number of theta values in [0, 2 pi)")->check(CLI::PositiveNumber);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? int{kExitOk} : int{kExitInvalidInput};
    }

    if (*simulate) return cmd_simulate(opts, protocol, out, err);
    if (*analyze) return cmd_analyze(inputs, opts, out, err);
    if (*reproduce) return cmd_reproduce_paper(opts, repro, out, err);
    return cmd_scan_theta(opts, points, out, err);
}

}  // namespace cvpulse
