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

#include "cvpulse/analysis.hpp"

#include <gtest/gtest.h>

#include "oracles.hpp"

using namespace cvpulse;

namespace {

RunConfig reference_config(double eta = 0.68, double noise = 0.0, std::uint64_t seed = 7) {
    RunConfig c;
    c.source = SymmetricMixed{1.50, 0.94};
    c.detector = DetectorModel::with_efficiency(eta, noise);
    c.seed = seed;
    return c;
}

/// Records whose block variances equal a + b cos(2 phi + c) evaluated on the
/// block's mean of cos 2phi / sin 2phi, so the sinusoid fits them exactly.
std::vector<PulseRecord> synthetic_records(double a, double b, double c, std::size_t n_blocks,
                                           std::size_t block) {
    const std::size_t n = n_blocks * block;
    std::vector<PulseRecord> out;
    out.reserve(n);
    for (std::size_t k = 0; k < n_blocks; ++k) {
        double cos2 = 0.0, sin2 = 0.0;
        for (std::size_t i = k * block; i < (k + 1) * block; ++i) {
            const double phi = 2 * M_PI * static_cast<double>(i) / static_cast<double>(n);
            cos2 += std::cos(2 * phi);
            sin2 += std::sin(2 * phi);
        }
        cos2 /= static_cast<double>(block);
        sin2 /= static_cast<double>(block);
        const double target = a + b * (std::cos(c) * cos2 - std::sin(c) * sin2);
        const double x = std::sqrt(target * static_cast<double>(block - 1) / static_cast<double>(block));
        for (std::size_t i = k * block; i < (k + 1) * block; ++i) {
            const double phi = 2 * M_PI * static_cast<double>(i) / static_cast<double>(n);
            out.push_back({i, phi, (i % 2) ? x : -x});
        }
    }
    return out;
}

RunConfig random_symmetric_config(std::mt19937_64 &rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double v = 1.0 + 2.0 * u(rng);
    const double k_max = std::sqrt(v * v - 1.0);
    RunConfig c;
    c.source = SymmetricMixed{v, k_max * u(rng)};
    c.detector = DetectorModel::with_efficiency(0.3 + 0.7 * (1.0 - u(rng)), 0.1 * u(rng));
    return c;
}

}  // namespace

TEST(FitPhaseScan, exact_sinusoid) {
    const auto records = synthetic_records(1.33, 0.63, 0.0, 40, 500);
    const auto fit = fit_phase_scan(records, {500});
    EXPECT_NEAR(fit.v_min, 0.70, 1e-9);
    EXPECT_NEAR(fit.v_max, 1.96, 1e-9);
    EXPECT_NEAR(fit.offset, 1.33, 1e-9);
    EXPECT_NEAR(fit.amplitude, 0.63, 1e-9);
    EXPECT_LT(oracle::phase_distance_mod_pi(fit.phase_at_min, M_PI / 2), 1e-9);
    EXPECT_EQ(fit.n_blocks, 40u);
    EXPECT_GT(fit.std_error_min, 0.0);
    EXPECT_LT(fit.std_error_min, fit.std_error_max);
}

TEST(FitPhaseScan, phase_of_minimum_tracks_offset) {
    for (double c : {0.3, 1.2, -2.0, 3.0}) {
        const auto fit = fit_phase_scan(synthetic_records(1.0, 0.4, c, 40, 200), {200});
        // minimum where 2 phi + c = pi
        EXPECT_LT(oracle::phase_distance_mod_pi(fit.phase_at_min, (M_PI - c) / 2), 1e-9);
        EXPECT_GE(fit.phase_at_min, 0.0);
        EXPECT_LT(fit.phase_at_min, M_PI);
    }
}

TEST(FitPhaseScan, vacuum_stream_is_flat) {
    auto c = reference_config();
    c.blocked_arm = BlockedArm::signal;
    c.schedule = PhaseSchedule::linear_ramp(0.0, 4 * M_PI, 500'000);
    const auto fit = fit_phase_scan(sample_pulses(c));
    EXPECT_NEAR(fit.v_min, 1.0, 4 * fit.std_error_min);
    EXPECT_NEAR(fit.v_max, 1.0, 4 * fit.std_error_max);
    EXPECT_NEAR(fit.offset, 1.0, 4 * fit.offset_std_error);
}

TEST(FitPhaseScan, reference_config_million_pulses) {
    auto c = reference_config();
    c.schedule = PhaseSchedule::linear_ramp(0.0, 4 * M_PI, 1'000'000);
    const auto fit = fit_phase_scan(sample_pulses(c));
    const double analytic = detected_variance(c, M_PI / 2);
    EXPECT_NEAR(fit.v_min, 0.70, 0.01);
    EXPECT_NEAR(fit.v_min, analytic, 4 * fit.std_error_min);
    EXPECT_NEAR(fit.v_max, detected_variance(c, 0.0), 4 * fit.std_error_max);
    EXPECT_LT(oracle::phase_distance_mod_pi(fit.phase_at_min, M_PI / 2), 0.05);
    // block chi-square error of the minimum: a few 1e-3 at this size
    EXPECT_GT(fit.std_error_min, 5e-4);
    EXPECT_LT(fit.std_error_min, 5e-3);
}

TEST(FitPhaseScan, std_error_matches_spread_over_seeds) {
    const int runs = 120;
    std::vector<double> mins;
    double mean_se = 0.0;
    for (int s = 0; s < runs; ++s) {
        auto c = reference_config(0.68, 0.0, 1000 + static_cast<std::uint64_t>(s));
        c.schedule = PhaseSchedule::linear_ramp(0.0, 2 * M_PI, 100'000);
        const auto fit = fit_phase_scan(sample_pulses(c));
        mins.push_back(fit.v_min);
        mean_se += fit.std_error_min / runs;
    }
    double m = 0.0;
    for (double x : mins) m += x / runs;
    double ss = 0.0;
    for (double x : mins) ss += (x - m) * (x - m);
    const double sd = std::sqrt(ss / (runs - 1));
    // sd of a sample sd from 120 draws is ~6.5%; allow 4 sigma
    EXPECT_NEAR(sd / mean_se, 1.0, 0.26);
}

TEST(FitPhaseScan, errors) {
    auto c = reference_config();
    c.schedule = PhaseSchedule::linear_ramp(0.0, 3.0, 100'000);
    EXPECT_THROW(fit_phase_scan(sample_pulses(c)), FitError);
    c.schedule = PhaseSchedule::constant(0.0, 100'000);
    EXPECT_THROW(fit_phase_scan(sample_pulses(c)), FitError);
    c.schedule = PhaseSchedule::linear_ramp(0.0, M_PI, 7'500);
    EXPECT_THROW(fit_phase_scan(sample_pulses(c)), FitError);
    EXPECT_THROW(fit_phase_scan({}), FitError);
    c.schedule = PhaseSchedule::linear_ramp(0.0, M_PI, 10'000);
    EXPECT_NO_THROW(fit_phase_scan(sample_pulses(c)));
}

TEST(EfficiencyInversion, examples) {
    EXPECT_NEAR(efficiency_inversion(0.70, 0.68), 0.5588, 1e-4);
    EXPECT_NEAR(efficiency_inversion(0.70, 0.68), 0.56, 0.005);
    EXPECT_NEAR(efficiency_inversion(1.17, 0.68, 0.5), 1.50, 1e-12);
    for (double eta : {0.1, 0.5, 1.0}) EXPECT_DOUBLE_EQ(efficiency_inversion(1.0, eta), 1.0);
}

TEST(EfficiencyInversion, errors) {
    EXPECT_THROW(efficiency_inversion(0.2, 0.5), InvalidInput);
    EXPECT_THROW(efficiency_inversion(0.5, 0.5), InvalidInput);
    EXPECT_THROW(efficiency_inversion(1.0, 0.0), InvalidInput);
    EXPECT_THROW(efficiency_inversion(1.0, 0.9, 1.5), InvalidInput);
    EXPECT_THROW(efficiency_inversion(NAN, 0.9), InvalidInput);
}

TEST(Reconstruct, reference_state) {
    const auto rec = reconstruct_covariance(1.50, 0.56);
    EXPECT_NEAR(rec.report.corrected_k, 0.94, 1e-12);
    EXPECT_LT((rec.covariance.matrix() - source_covariance(SymmetricMixed{1.50, 0.94}).matrix()).cwiseAbs().maxCoeff(),
              1e-12);
    EXPECT_NEAR(rec.report.i_ds, 1.12, 1e-12);
    EXPECT_NEAR(rec.report.e_f, 0.435, 1e-3);
    EXPECT_NEAR(rec.report.reid_product, reid_epr_product(rec.covariance), 1e-12);
    EXPECT_NEAR(rec.report.i_ds, duan_simon(rec.covariance), 1e-12);
    EXPECT_NEAR(rec.report.e_f, entropy_of_formation(rec.covariance).e_f, 1e-12);
}

TEST(Reconstruct, vacuum_and_pure) {
    const auto vac = reconstruct_covariance(1.0, 1.0);
    EXPECT_EQ(vac.covariance.matrix(), Matrix::Identity(4, 4));
    EXPECT_DOUBLE_EQ(vac.report.i_ds, 2.0);
    EXPECT_DOUBLE_EQ(vac.report.e_f, 0.0);
    EXPECT_FALSE(vac.report.nonseparable);

    const double r = 0.3;
    const auto pure = reconstruct_covariance(std::cosh(2 * r), std::exp(-2 * r));
    EXPECT_LT((pure.covariance.matrix() - source_covariance(PureNopa{r}).matrix()).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Reconstruct, unphysical_reports_eigenvalue) {
    try {
        reconstruct_covariance(1.5, 0.3);
        FAIL() << "expected UnphysicalState";
    } catch (const UnphysicalState &e) {
        EXPECT_LT(e.min_eigenvalue(), -1e-9);
    }
    EXPECT_THROW(reconstruct_covariance(-1.0, 0.5), InvalidInput);
    EXPECT_THROW(reconstruct_covariance(1.0, 0.0), InvalidInput);
}

TEST(Reconstruct, ids_identity) {
    std::mt19937_64 rng(41);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 200; ++trial) {
        const double v = 1.0 + 3.0 * u(rng);
        const double k = std::sqrt(v * v - 1.0) * u(rng);
        const auto rec = reconstruct_covariance(v, v - k);
        EXPECT_NEAR(rec.report.i_ds, 2 * (rec.report.corrected_v - rec.report.corrected_k), 1e-9);
    }
}

TEST(Analysis, analytic_chain_round_trip) {
    std::mt19937_64 rng(42);
    for (int trial = 0; trial < 200; ++trial) {
        const RunConfig c = random_symmetric_config(rng);
        const auto result = analytic_report(c, settings_for(c, kDefaultBlockSize, true));
        ASSERT_TRUE(result.covariance.has_value());
        const Matrix expected = source_covariance(c.source).matrix();
        EXPECT_LT((result.covariance->matrix() - expected).cwiseAbs().maxCoeff(), 1e-9);
        EXPECT_NEAR(result.antisqueezed_corrected, result.antisqueezed_predicted, 1e-9);
        EXPECT_TRUE(result.v_from_single_arm);
    }
}

TEST(Analysis, single_beam_identity) {
    std::mt19937_64 rng(43);
    for (int trial = 0; trial < 100; ++trial) {
        RunConfig c = random_symmetric_config(rng);
        c.detector.electronic_noise_var = 0.0;
        c.blocked_arm = BlockedArm::b;
        const double eta = c.detector.efficiency();
        const double v = std::get<SymmetricMixed>(c.source).v;
        EXPECT_NEAR(detected_variance(c, 0.37 * trial), 0.5 * eta * v + (1 - 0.5 * eta), 1e-12);
    }
}

TEST(Analysis, loss_degrades_uncorrected_ef_and_correction_restores_it) {
    const RunConfig base = reference_config(1.0);
    const double source_ef = entropy_of_formation(source_covariance(base.source)).e_f;
    double previous = -1.0;
    for (int step = 0; step <= 14; ++step) {
        const double eta = 0.3 + 0.05 * step;
        RunConfig c = base;
        c.detector = DetectorModel::with_efficiency(eta);
        AnalysisSettings raw = settings_for(c, kDefaultBlockSize, false);
        raw.efficiency = 1.0;
        raw.single_arm_transmission = 0.5 * eta;
        const double e = analytic_report(c, raw).report.e_f;
        EXPECT_GE(e, previous - 1e-12);
        EXPECT_LE(e, source_ef + 1e-12);
        previous = e;
        EXPECT_NEAR(analytic_report(c, settings_for(c, kDefaultBlockSize, false)).report.e_f, source_ef, 1e-9);
    }
}

TEST(Analysis, analyze_measurements_without_single_arm) {
    Measurements m{{0.7008}, {1.9792}, std::nullopt};
    AnalysisSettings s;
    s.efficiency = 0.68;
    const auto r = analyze_measurements(m, s);
    EXPECT_FALSE(r.v_from_single_arm);
    EXPECT_NEAR(r.report.corrected_v, 1.50, 1e-9);
    EXPECT_NEAR(r.report.corrected_k, 0.94, 1e-9);
}

TEST(Analysis, symmetry_violation_detected) {
    auto c = reference_config();
    c.schedule = PhaseSchedule::linear_ramp(0.0, 4 * M_PI, 500'000);
    const auto in_phase = sample_pulses(c);
    auto off = c;
    off.theta = M_PI;
    off.seed = 99;
    off.detector = DetectorModel::with_efficiency(0.5);
    const auto out_of_phase = sample_pulses(off);
    const AnalysisSettings s = settings_for(c, kDefaultBlockSize, false);
    EXPECT_THROW(analyze_scans(in_phase, &out_of_phase, nullptr, s), SymmetryViolation);

    off.detector = c.detector;
    const auto consistent = sample_pulses(off);
    EXPECT_NO_THROW(analyze_scans(in_phase, &consistent, nullptr, s));
}

TEST(EndToEnd, reference_config_million_pulses) {
    const auto e2e = end_to_end_report(reference_config(0.68, 0.0, 20040601), 1'000'000);
    const auto &r = e2e.analysis.report;
    EXPECT_NEAR(r.i_ds, 1.12, 0.02);
    EXPECT_NEAR(r.e_f, 0.435, 0.01);
    EXPECT_NEAR(r.corrected_v, 1.50, 4 * r.corrected_v_std_error);
    EXPECT_TRUE(r.nonseparable);
    EXPECT_TRUE(e2e.analysis.covariance.has_value());
    EXPECT_NE(e2e.seed_in_phase, e2e.seed_out_of_phase);
    EXPECT_NE(e2e.seed_in_phase, e2e.seed_single_arm);
    EXPECT_GT(r.i_ds_std_error, 0.0);
    EXPECT_LT(r.i_ds_std_error, 0.01);
}

TEST(EndToEnd, vacuum_source) {
    RunConfig c = reference_config(1.0);
    c.source = PureNopa{0.0};
    const auto e2e = end_to_end_report(c, 500'000);
    const auto &r = e2e.analysis.report;
    EXPECT_NEAR(r.i_ds, 2.0, 4 * r.i_ds_std_error);
    EXPECT_FALSE(r.nonseparable);
    EXPECT_NEAR(r.e_f, 0.0, 4 * r.e_f_std_error + 1e-12);
}

TEST(EndToEnd, pure_source_noiseless) {
    RunConfig c = reference_config(1.0);
    c.source = PureNopa{0.472};
    const auto e2e = end_to_end_report(c, 500'000);
    const auto &r = e2e.analysis.report;
    const double expected = duan_simon(source_covariance(PureNopa{0.472}));
    EXPECT_NEAR(expected, 0.778, 1e-3);
    EXPECT_NEAR(r.i_ds, expected, 4 * r.i_ds_std_error);
}

TEST(EndToEnd, rejects_blocked_or_asymmetric_config) {
    RunConfig c = reference_config();
    c.blocked_arm = BlockedArm::a;
    EXPECT_THROW(end_to_end_report(c, 100'000), InvalidInput);
}

TEST(EndToEnd, standard_error_coverage) {
    // 200 seeded runs; the 1-sigma interval should cover the truth ~68.3% of the time.
    const RunConfig base = reference_config(0.68, 0.0);
    const double truth = analytic_report(base, settings_for(base, kDefaultBlockSize, false)).report.i_ds;
    int covered = 0;
    const int runs = 200;
    for (int s = 0; s < runs; ++s) {
        RunConfig c = base;
        c.seed = 5000 + static_cast<std::uint64_t>(s);
        const auto r = end_to_end_report(c, 100'000).analysis.report;
        covered += std::abs(r.i_ds - truth) <= r.i_ds_std_error;
    }
    const double rate = static_cast<double>(covered) / runs;
    EXPECT_NEAR(rate, 0.6827, 0.05);
}
