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

// From homodyne records back to the source: phase-scan fits, detection
// efficiency inversion and covariance-matrix reconstruction.
//
// The measurement protocol uses three scans of the LO phase:
//   * pulses recombined in phase (theta) -> the minimum is Var(P_A + P_B)/2,
//   * pulses recombined with theta + pi -> the minimum is Var(X_A - X_B)/2,
//   * one arm blocked                  -> phase-insensitive, gives V.
// Both minima are corrected for the detection efficiency; their sum is the
// Duan-Simon quantity and K = V - (corrected minimum).

#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cvpulse/entanglement.hpp"
#include "cvpulse/errors.hpp"
#include "cvpulse/gaussian.hpp"
#include "cvpulse/pulse_sim.hpp"

namespace cvpulse {

/// Fitted variance-vs-phase curve a + b cos(2 phi + c) of one scan.
struct ScanEstimate {
    double v_min;
    double v_max;
    double phase_at_min;  ///< in [0, pi)
    double std_error_min;
    double std_error_max;
    double offset;  ///< a
    double offset_std_error;
    double amplitude;  ///< |b|
    double phase_offset;  ///< c
    std::size_t n_blocks;
    std::size_t block_size;
    int iterations;
};

struct ScanFitOptions {
    std::size_t block_size = kDefaultBlockSize;
    /// Constant removed from every block variance before fitting (electronic
    /// noise pre-subtraction); 0 keeps the measured values.
    double subtract_variance = 0.0;
    int max_iterations = 100;
};

/// Least-squares fit of block variances to a + b cos(2 phi + c).
///
/// The model is linear in (a, b cos c, -b sin c); it is solved by iteratively
/// reweighted least squares with each block weighted by the inverse of its
/// chi-square variance 2 sigma^4 / (n - 1), sigma^2 taken from the current
/// model. Regressors are block means of cos 2phi and sin 2phi, so a phase ramp
/// inside a block does not bias the amplitude. Standard errors come from the
/// weighted normal matrix.
inline ScanEstimate fit_phase_scan(const std::vector<PulseRecord> &records, const ScanFitOptions &options = {}) {
    if (records.size() < 2) {
        throw FitError("fit_phase_scan: not enough records");
    }
    auto [lo, hi] = std::minmax_element(records.begin(), records.end(),
                                        [](const PulseRecord &x, const PulseRecord &y) { return x.lo_phase < y.lo_phase; });
    const double span = (hi->lo_phase - lo->lo_phase) * static_cast<double>(records.size()) /
                        static_cast<double>(records.size() - 1);
    if (!(span >= M_PI * (1.0 - 1e-9))) {
        throw FitError("fit_phase_scan: insufficient phase coverage (" + std::to_string(span) +
                       " rad, need at least pi)");
    }
    const std::vector<BlockVariance> blocks = block_variance_trace(records, options.block_size);
    const auto n_blocks = static_cast<Eigen::Index>(blocks.size());
    if (n_blocks < 4) {
        throw FitError("fit_phase_scan: need at least 4 blocks, got " + std::to_string(n_blocks));
    }

    Eigen::MatrixXd design(n_blocks, 3);
    Eigen::VectorXd y(n_blocks);
    for (Eigen::Index i = 0; i < n_blocks; ++i) {
        const auto &b = blocks[static_cast<std::size_t>(i)];
        design(i, 0) = 1.0;
        design(i, 1) = b.cos2_mean;
        design(i, 2) = b.sin2_mean;
        y(i) = b.variance - options.subtract_variance;
    }
    const double dof = static_cast<double>(options.block_size) - 1.0;

    Eigen::VectorXd weights = Eigen::VectorXd::Ones(n_blocks);
    Eigen::Vector3d params = Eigen::Vector3d::Zero();
    Eigen::Matrix3d normal;
    int iteration = 0;
    bool converged = false;
    for (; iteration < options.max_iterations; ++iteration) {
        normal = design.transpose() * weights.asDiagonal() * design;
        Eigen::LDLT<Eigen::Matrix3d> ldlt(normal);
        if (ldlt.info() != Eigen::Success || !(ldlt.rcond() > 1e-12)) {
            throw FitError("fit_phase_scan: singular normal equations");
        }
        const Eigen::Vector3d next = ldlt.solve(design.transpose() * weights.asDiagonal() * y);
        if (!next.allFinite()) {
            throw FitError("fit_phase_scan: non-finite fit parameters");
        }
        const Eigen::VectorXd model = design * next;
        if (model.minCoeff() <= 0.0) {
            throw FitError("fit_phase_scan: fitted variance is not positive at every block");
        }
        const double change = (next - params).cwiseAbs().maxCoeff();
        params = next;
        weights = (dof / 2.0) * model.cwiseProduct(model).cwiseInverse();
        if (iteration > 0 && change <= 1e-13 * std::max(1.0, params.cwiseAbs().maxCoeff())) {
            converged = true;
            break;
        }
    }
    if (!converged) {
        throw FitError("fit_phase_scan: reweighted fit did not converge in " + std::to_string(options.max_iterations) +
                       " iterations");
    }
    normal = design.transpose() * weights.asDiagonal() * design;
    const Eigen::Matrix3d cov = normal.inverse();

    const double a = params(0);
    const double p = params(1);
    const double q = params(2);
    const double b = std::hypot(p, q);
    const double c = std::atan2(-q, p);
    double phase_min = std::fmod(0.5 * (M_PI - c), M_PI);
    if (phase_min < 0) {
        phase_min += M_PI;
    }

    double se_min, se_max;
    if (b > 0.0) {
        const Eigen::Vector3d g_min(1.0, -p / b, -q / b);
        const Eigen::Vector3d g_max(1.0, p / b, q / b);
        se_min = std::sqrt(g_min.dot(cov * g_min));
        se_max = std::sqrt(g_max.dot(cov * g_max));
    } else {
        se_min = se_max = std::sqrt(cov(0, 0) + 0.5 * (cov(1, 1) + cov(2, 2)));
    }
    return {a - b,
            a + b,
            phase_min,
            se_min,
            se_max,
            a,
            std::sqrt(cov(0, 0)),
            b,
            c,
            static_cast<std::size_t>(n_blocks),
            options.block_size,
            iteration + 1};
}

/// Variance before a loss of total transmission eta * extra_transmission:
/// 1 + (v - 1) / (eta * extra_transmission).
inline double efficiency_inversion(double v_measured, double eta, double extra_transmission = 1.0) {
    const double t = eta * extra_transmission;
    if (!(t > 0.0 && t <= 1.0)) {
        throw InvalidInput("efficiency_inversion: eta * extra_transmission must lie in (0, 1]");
    }
    if (!std::isfinite(v_measured)) {
        throw InvalidInput("efficiency_inversion: measured variance must be finite");
    }
    const double v = kShotNoise + (v_measured - kShotNoise) / t;
    if (!(v > 0.0)) {
        throw InvalidInput("efficiency_inversion: over-correction, corrected variance " + std::to_string(v) +
                           " is not positive (measured " + std::to_string(v_measured) + " < 1 - " +
                           std::to_string(t) + ")");
    }
    return v;
}

struct EntanglementReport {
    double corrected_squeezed_variance = 0.0;
    double corrected_v = 0.0;
    double corrected_k = 0.0;
    double i_ds = 0.0;
    double e_f = 0.0;
    double reid_product = 0.0;
    double efficiency_used = 1.0;
    /// 1-sigma statistical errors; zero for analytic inputs.
    double corrected_squeezed_std_error = 0.0;
    double corrected_v_std_error = 0.0;
    double i_ds_std_error = 0.0;
    double e_f_std_error = 0.0;
    /// I_DS below 2 by more than the significance threshold.
    bool nonseparable = false;
};

struct Reconstruction {
    CovarianceMatrix covariance;
    EntanglementReport report;
};

namespace detail {

inline double reid_product_symmetric(double v, double k) {
    const double cond = v - k * k / v;
    return cond * cond;
}

inline EntanglementReport symmetric_report(double v, double squeezed) {
    EntanglementReport r;
    r.corrected_v = v;
    r.corrected_squeezed_variance = squeezed;
    r.corrected_k = v - squeezed;
    r.i_ds = 2.0 * squeezed;
    r.e_f = duan_simon_to_ef(r.i_ds);
    r.reid_product = reid_product_symmetric(v, r.corrected_k);
    r.nonseparable = r.i_ds < 2.0 * kShotNoise;
    return r;
}

}  // namespace detail

/// Assembles the symmetric covariance with V = v_single_corrected and
/// Kx = Kp = V - squeezed_corrected, and evaluates its witnesses.
inline Reconstruction reconstruct_covariance(double v_single_corrected, double squeezed_corrected) {
    if (!(v_single_corrected > 0.0) || !(squeezed_corrected > 0.0) || !std::isfinite(v_single_corrected) ||
        !std::isfinite(squeezed_corrected)) {
        throw InvalidInput("reconstruct_covariance: variances must be positive and finite");
    }
    const double k = v_single_corrected - squeezed_corrected;
    Matrix m(4, 4);
    // clang-format off
    m << v_single_corrected, 0, k, 0,
         0, v_single_corrected, 0, -k,
         k, 0, v_single_corrected, 0,
         0, -k, 0, v_single_corrected;
    // clang-format on
    const PhysicalityResult check = physicality_check(m);
    if (!check.passed) {
        throw UnphysicalState("unphysical reconstruction V=" + std::to_string(v_single_corrected) +
                                  ", K=" + std::to_string(k),
                              check.min_eigenvalue);
    }
    EntanglementReport report = detail::symmetric_report(v_single_corrected, squeezed_corrected);
    return {CovarianceMatrix::from_matrix(m), report};
}

struct VarianceEstimate {
    double value;
    double std_error = 0.0;
};

/// Raw (uncorrected) variances read off the scans.
struct Measurements {
    VarianceEstimate squeezed;      ///< minimum of the recombined scan(s)
    VarianceEstimate antisqueezed;  ///< maximum of the recombined scan(s)
    std::optional<VarianceEstimate> single_arm;
};

struct AnalysisSettings {
    double efficiency = 1.0;
    /// Power transmission of the unblocked arm into the detected port.
    double single_arm_transmission = 0.5;
    double subtract_variance = 0.0;
    std::size_t block_size = kDefaultBlockSize;
    /// In-phase and out-of-phase minima must agree within this many sigma.
    double symmetry_sigma = 4.0;
    /// I_DS must lie this many sigma below 2 for a nonseparable verdict, and a
    /// reconstruction this many sigma outside the physical set is an error.
    double significance_sigma = 3.0;
};

struct AnalysisResult {
    EntanglementReport report;
    Measurements measured;
    /// Unset when the point estimate is unphysical by less than the significance threshold.
    std::optional<CovarianceMatrix> covariance;
    /// (V - K)(V + K) - 1; negative means outside the physical set.
    double physicality_margin = 0.0;
    double physicality_margin_std_error = 0.0;
    /// Antisqueezed variance after efficiency correction, and the V + K it should equal.
    double antisqueezed_corrected = 0.0;
    double antisqueezed_predicted = 0.0;
    /// true when V came from the blocked-arm scan, false when it was taken
    /// from the mean of the recombined scan's extremes.
    bool v_from_single_arm = false;
};

/// Efficiency correction and reconstruction from raw measured variances.
inline AnalysisResult analyze_measurements(const Measurements &measured, const AnalysisSettings &settings) {
    const double eta = settings.efficiency;
    AnalysisResult out;
    out.measured = measured;

    const double squeezed = efficiency_inversion(measured.squeezed.value, eta);
    const double squeezed_se = measured.squeezed.std_error / eta;
    out.antisqueezed_corrected = efficiency_inversion(measured.antisqueezed.value, eta);
    const double antisqueezed_se = measured.antisqueezed.std_error / eta;

    double v, v_se;
    if (measured.single_arm) {
        const double t = settings.single_arm_transmission;
        v = efficiency_inversion(measured.single_arm->value, eta, t);
        v_se = measured.single_arm->std_error / (eta * t);
        out.v_from_single_arm = true;
    } else {
        v = 0.5 * (squeezed + out.antisqueezed_corrected);
        v_se = 0.5 * std::hypot(squeezed_se, antisqueezed_se);
    }
    out.antisqueezed_predicted = 2.0 * v - squeezed;

    EntanglementReport &r = out.report;
    r = detail::symmetric_report(v, squeezed);
    r.efficiency_used = eta;
    r.corrected_squeezed_std_error = squeezed_se;
    r.corrected_v_std_error = v_se;
    r.i_ds_std_error = 2.0 * squeezed_se;
    if (r.i_ds_std_error > 0.0) {
        const double h = std::min(1e-6, 0.25 * r.i_ds);
        const double slope = (duan_simon_to_ef(r.i_ds + h) - duan_simon_to_ef(r.i_ds - h)) / (2.0 * h);
        r.e_f_std_error = std::abs(slope) * r.i_ds_std_error;
    }
    r.nonseparable = r.i_ds < 2.0 * kShotNoise - settings.significance_sigma * r.i_ds_std_error;

    // (V - K)(V + K) = s (2V - s) with s the corrected squeezed variance
    const double k = r.corrected_k;
    out.physicality_margin = (v - k) * (v + k) - 1.0;
    out.physicality_margin_std_error = std::hypot(2.0 * squeezed * v_se, 2.0 * (v - squeezed) * squeezed_se);

    Matrix m(4, 4);
    // clang-format off
    m << v, 0, k, 0,
         0, v, 0, -k,
         k, 0, v, 0,
         0, -k, 0, v;
    // clang-format on
    const PhysicalityResult check = physicality_check(m);
    if (check.passed && v > std::abs(k)) {
        out.covariance = CovarianceMatrix::from_matrix(m);
    } else if (out.physicality_margin < -settings.significance_sigma * out.physicality_margin_std_error) {
        throw UnphysicalState("unphysical reconstruction V=" + std::to_string(v) + ", K=" + std::to_string(k),
                              check.min_eigenvalue);
    }
    return out;
}

/// Fits the available scans and runs `analyze_measurements`. The in-phase scan
/// is required; the out-of-phase scan, when given, must agree with it within
/// `symmetry_sigma` and both minima and maxima are averaged.
inline AnalysisResult analyze_scans(const std::vector<PulseRecord> &in_phase,
                                    const std::vector<PulseRecord> *out_of_phase,
                                    const std::vector<PulseRecord> *single_arm, const AnalysisSettings &settings,
                                    std::vector<ScanEstimate> *fits = nullptr) {
    ScanFitOptions options;
    options.block_size = settings.block_size;
    options.subtract_variance = settings.subtract_variance;

    const ScanEstimate first = fit_phase_scan(in_phase, options);
    if (fits) fits->push_back(first);
    Measurements measured{{first.v_min, first.std_error_min}, {first.v_max, first.std_error_max}, std::nullopt};

    if (out_of_phase) {
        const ScanEstimate second = fit_phase_scan(*out_of_phase, options);
        if (fits) fits->push_back(second);
        const double diff = first.v_min - second.v_min;
        const double sigma = std::hypot(first.std_error_min, second.std_error_min);
        if (std::abs(diff) > settings.symmetry_sigma * sigma) {
            throw SymmetryViolation("in-phase and out-of-phase squeezed variances differ by " + std::to_string(diff) +
                                    " (" + std::to_string(std::abs(diff) / sigma) +
                                    " sigma); check the relative phase calibration");
        }
        measured.squeezed = {0.5 * (first.v_min + second.v_min), 0.5 * sigma};
        measured.antisqueezed = {0.5 * (first.v_max + second.v_max),
                                 0.5 * std::hypot(first.std_error_max, second.std_error_max)};
    }
    if (single_arm) {
        const ScanEstimate single = fit_phase_scan(*single_arm, options);
        if (fits) fits->push_back(single);
        measured.single_arm = VarianceEstimate{single.offset, single.offset_std_error};
    }
    return analyze_measurements(measured, settings);
}

/// Analysis of a run with infinite statistics: the raw variances are the
/// analytic extremes of the detected port.
inline AnalysisResult analytic_report(const RunConfig &config, const AnalysisSettings &settings) {
    RunConfig recombined = config;
    recombined.blocked_arm = BlockedArm::none;
    const QuadratureExtremes ext = quadrature_extremes(detected_covariance(recombined), 0);
    const double noise = config.detector.electronic_noise_var - settings.subtract_variance;
    RunConfig blocked = recombined;
    blocked.blocked_arm = BlockedArm::b;
    Measurements measured{{ext.min_variance + noise}, {ext.max_variance + noise},
                          VarianceEstimate{detected_variance(blocked, 0.0) - settings.subtract_variance}};
    return analyze_measurements(measured, settings);
}

struct EndToEndResult {
    AnalysisResult analysis;
    ScanEstimate in_phase;
    ScanEstimate out_of_phase;
    ScanEstimate single_arm;
    std::uint64_t seed_in_phase;
    std::uint64_t seed_out_of_phase;
    std::uint64_t seed_single_arm;
};

/// Seeds of the three scans of an end-to-end run.
inline std::uint64_t scan_seed(std::uint64_t seed, int scan) {
    return derive_seed(seed, static_cast<std::uint64_t>(scan));
}

inline AnalysisSettings settings_for(const RunConfig &config, std::size_t block_size, bool subtract_electronic_noise) {
    AnalysisSettings s;
    s.efficiency = config.detector.efficiency();
    s.single_arm_transmission = config.beamsplitter_r;
    s.block_size = block_size;
    s.subtract_variance = subtract_electronic_noise ? config.detector.electronic_noise_var : 0.0;
    return s;
}

/// Simulates the three-scan protocol (theta, theta + pi, arm B blocked) with
/// `n_pulses` each, then analyses it.
inline EndToEndResult end_to_end_report(const RunConfig &config, std::size_t n_pulses,
                                        std::size_t block_size = kDefaultBlockSize,
                                        bool subtract_electronic_noise = false) {
    config.validate();
    if (config.blocked_arm != BlockedArm::none) {
        throw InvalidInput("end_to_end_report: the run configuration must not block an arm");
    }
    symmetric_form(source_covariance(config.source));

    RunConfig in_phase = config;
    in_phase.schedule = config.schedule.resized(n_pulses);
    in_phase.seed = scan_seed(config.seed, 0);
    RunConfig out_of_phase = in_phase;
    out_of_phase.theta = config.theta + M_PI;
    out_of_phase.seed = scan_seed(config.seed, 1);
    RunConfig single = in_phase;
    single.blocked_arm = BlockedArm::b;
    single.seed = scan_seed(config.seed, 2);

    const auto rec_in = sample_pulses(in_phase);
    const auto rec_out = sample_pulses(out_of_phase);
    const auto rec_single = sample_pulses(single);

    const AnalysisSettings settings = settings_for(config, block_size, subtract_electronic_noise);
    std::vector<ScanEstimate> fits;
    AnalysisResult analysis = analyze_scans(rec_in, &rec_out, &rec_single, settings, &fits);
    return {std::move(analysis), fits[0], fits[1], fits[2], in_phase.seed, out_of_phase.seed, single.seed};
}

}  // namespace cvpulse
