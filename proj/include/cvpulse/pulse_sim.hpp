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

// Time-domain simulation of pulsed homodyne detection of one output port of a
// beamsplitter on which two entangled pulses are recombined.
//
// Every pulse yields one quadrature sample at the local-oscillator phase of
// that pulse. Random numbers come from std::mt19937_64 engines seeded per
// fixed-size chunk of the record stream from (seed, stream, chunk index), so
// output is bit-identical for any number of worker threads.

#pragma once

#include <algorithm>
#include <array>
#include <boost/random/normal_distribution.hpp>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "cvpulse/errors.hpp"
#include "cvpulse/gaussian.hpp"

namespace cvpulse {

/// Electronic noise at the 11 dB clearance bound, 10^(-1.1) shot-noise units.
inline const double kDefaultElectronicNoise = std::pow(10.0, -1.1);

inline constexpr std::size_t kDefaultBlockSize = 2500;
inline constexpr std::size_t kDefaultChunkSize = 65536;
inline constexpr double kDefaultLoPhotons = 2.5e8;

/// Homodyne detector. The overall efficiency is eta_t * eta_h^2 * eta_d, with
/// eta_h the mode-matching visibility.
struct DetectorModel {
    double eta_t = 0.93;
    double eta_h = 0.88;
    double eta_d = 0.945;
    double electronic_noise_var = kDefaultElectronicNoise;
    double lo_photons_per_pulse = kDefaultLoPhotons;

    double efficiency() const {
        return eta_t * eta_h * eta_h * eta_d;
    }

    /// Shot noise to electronic noise ratio in dB (infinite for a noiseless detector).
    double clearance_db() const {
        return electronic_noise_var > 0.0 ? 10.0 * std::log10(kShotNoise / electronic_noise_var)
                                          : std::numeric_limits<double>::infinity();
    }

    void validate() const {
        auto in_unit = [](double x) { return x > 0.0 && x <= 1.0; };
        if (!in_unit(eta_t) || !in_unit(eta_h) || !in_unit(eta_d)) {
            throw InvalidInput("detector efficiencies must each lie in (0, 1]");
        }
        if (!(electronic_noise_var >= 0.0) || !std::isfinite(electronic_noise_var)) {
            throw InvalidInput("electronic noise variance must be finite and >= 0");
        }
        if (!(lo_photons_per_pulse > 0.0) || !std::isfinite(lo_photons_per_pulse)) {
            throw InvalidInput("local oscillator photon number must be positive");
        }
    }

    /// Detector with a given overall efficiency lumped into eta_t.
    static DetectorModel with_efficiency(double eta, double electronic_noise = 0.0) {
        DetectorModel d;
        d.eta_t = eta;
        d.eta_h = 1.0;
        d.eta_d = 1.0;
        d.electronic_noise_var = electronic_noise;
        return d;
    }
};

/// Local-oscillator phase for each pulse of a run.
class PhaseSchedule {
   public:
    enum class Kind { constant, linear_ramp };

    PhaseSchedule() = default;

    static PhaseSchedule constant(double phi, std::size_t n_pulses) {
        if (!std::isfinite(phi)) {
            throw InvalidInput("constant phase must be finite");
        }
        return PhaseSchedule(Kind::constant, phi, phi, n_pulses);
    }

    /// phi_i = start + (end - start) * i / n, covering [start, end).
    static PhaseSchedule linear_ramp(double start, double end, std::size_t n_pulses) {
        if (!std::isfinite(start) || !std::isfinite(end)) {
            throw InvalidInput("ramp endpoints must be finite");
        }
        return PhaseSchedule(Kind::linear_ramp, start, end, n_pulses);
    }

    Kind kind() const noexcept {
        return kind_;
    }
    std::size_t size() const noexcept {
        return n_;
    }
    double start() const noexcept {
        return start_;
    }
    double end() const noexcept {
        return end_;
    }

    double phase(std::size_t i) const noexcept {
        if (kind_ == Kind::constant) {
            return start_;
        }
        return start_ + (end_ - start_) * (static_cast<double>(i) / static_cast<double>(n_));
    }

    /// Same shape, different number of pulses.
    PhaseSchedule resized(std::size_t n_pulses) const {
        return PhaseSchedule(kind_, start_, end_, n_pulses);
    }

   private:
    PhaseSchedule(Kind kind, double start, double end, std::size_t n) : kind_(kind), start_(start), end_(end), n_(n) {
    }

    Kind kind_ = Kind::constant;
    double start_ = 0.0;
    double end_ = 0.0;
    std::size_t n_ = 0;
};

/// Which input of the recombination beamsplitter is replaced by vacuum.
/// `signal` blocks both, which is the shot-noise calibration.
enum class BlockedArm { none, a, b, signal };

inline std::string_view to_string(BlockedArm arm) {
    switch (arm) {
        case BlockedArm::none:
            return "none";
        case BlockedArm::a:
            return "a";
        case BlockedArm::b:
            return "b";
        case BlockedArm::signal:
            return "signal";
    }
    return "none";
}

inline BlockedArm parse_blocked_arm(std::string_view s) {
    if (s == "none") return BlockedArm::none;
    if (s == "a") return BlockedArm::a;
    if (s == "b") return BlockedArm::b;
    if (s == "signal") return BlockedArm::signal;
    throw InvalidInput("unknown blocked arm '" + std::string(s) + "' (expected none, a, b or signal)");
}

struct RunConfig {
    SourceSpec source = SymmetricMixed{1.50, 0.94};
    double theta = 0.0;  ///< relative phase of pulse B before recombination, radians
    double beamsplitter_r = 0.5;
    DetectorModel detector;
    PhaseSchedule schedule = PhaseSchedule::linear_ramp(0.0, 4.0 * M_PI, 250'000);
    std::uint64_t seed = 0;
    BlockedArm blocked_arm = BlockedArm::none;
    std::size_t chunk_size = kDefaultChunkSize;
    unsigned threads = 0;  ///< 0: hardware concurrency; never changes the output

    void validate() const {
        cvpulse::validate(source);
        if (!std::isfinite(theta)) {
            throw InvalidInput("theta must be finite");
        }
        if (!(beamsplitter_r > 0.0 && beamsplitter_r < 1.0)) {
            throw InvalidInput("beamsplitter reflectivity must lie in (0, 1)");
        }
        detector.validate();
        if (chunk_size == 0) {
            throw InvalidInput("chunk size must be positive");
        }
    }
};

/// Power transmission from the unblocked arm into the detected "+" port.
inline double single_arm_transmission(const RunConfig &config) {
    switch (config.blocked_arm) {
        case BlockedArm::b:
            return config.beamsplitter_r;
        case BlockedArm::a:
            return 1.0 - config.beamsplitter_r;
        default:
            throw InvalidInput("single_arm_transmission: exactly one arm must be blocked");
    }
}

/// Input two-mode state after blocking, before the relative phase shift.
inline CovarianceMatrix blocked_source_covariance(const RunConfig &config) {
    switch (config.blocked_arm) {
        case BlockedArm::none:
            return source_covariance(config.source);
        case BlockedArm::a:
            return replace_with_vacuum(source_covariance(config.source), kModeA);
        case BlockedArm::b:
            return replace_with_vacuum(source_covariance(config.source), kModeB);
        case BlockedArm::signal:
            return vacuum_covariance(2);
    }
    return vacuum_covariance(2);
}

/// One-mode covariance of the detected "+" port after detection loss
/// (electronic noise not included).
inline CovarianceMatrix detected_covariance(const RunConfig &config) {
    config.validate();
    CovarianceMatrix gamma = blocked_source_covariance(config);
    gamma = apply_transform(beamsplitter(config.beamsplitter_r) * phase_rotation(config.theta, kModeB), gamma);
    gamma = loss_channel(gamma, config.detector.efficiency(), 0);
    return mode_covariance(gamma, 0);
}

/// Analytic variance of the homodyne outcome at LO phase `lo_phase`, including electronic noise.
inline double detected_variance(const RunConfig &config, double lo_phase) {
    return quadrature_variance(detected_covariance(config), 0, lo_phase) + config.detector.electronic_noise_var;
}

struct PulseRecord {
    std::uint64_t index;
    double lo_phase;
    double value;

    friend bool operator==(const PulseRecord &, const PulseRecord &) = default;
};

namespace detail {

/// Stream tags keep the different consumers of one seed independent.
enum class Stream : std::uint32_t {
    marginal = 1,
    joint = 2,
    linearity = 3,
    derived = 4,
};

inline std::seed_seq chunk_seed_seq(std::uint64_t seed, Stream stream, std::uint64_t chunk) {
    return std::seed_seq{static_cast<std::uint32_t>(seed),
                         static_cast<std::uint32_t>(seed >> 32),
                         static_cast<std::uint32_t>(stream),
                         static_cast<std::uint32_t>(chunk),
                         static_cast<std::uint32_t>(chunk >> 32)};
}

inline std::mt19937_64 chunk_engine(std::uint64_t seed, Stream stream, std::uint64_t chunk) {
    auto seq = chunk_seed_seq(seed, stream, chunk);
    return std::mt19937_64(seq);
}

/// Runs `fill(chunk_index, begin, end)` over every chunk of [0, n), spreading
/// chunks round-robin over worker threads.
template <typename Fill>
void for_each_chunk(std::size_t n, std::size_t chunk_size, unsigned threads, Fill &&fill) {
    const std::size_t n_chunks = (n + chunk_size - 1) / chunk_size;
    unsigned workers = threads == 0 ? std::max(1u, std::thread::hardware_concurrency()) : threads;
    workers = static_cast<unsigned>(std::min<std::size_t>(workers, n_chunks));
    auto run = [&](unsigned worker) {
        for (std::size_t c = worker; c < n_chunks; c += workers) {
            fill(c, c * chunk_size, std::min(n, (c + 1) * chunk_size));
        }
    };
    if (workers <= 1) {
        run(0);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) {
        pool.emplace_back(run, w);
    }
    for (auto &t : pool) {
        t.join();
    }
}

}  // namespace detail

/// 64-bit seed derived deterministically from a parent seed and a label.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t label) {
    auto seq = detail::chunk_seed_seq(seed, detail::Stream::derived, label);
    std::array<std::uint32_t, 2> out{};
    seq.generate(out.begin(), out.end());
    return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

/// Per-pulse homodyne samples: pulse i is drawn from N(0, detected_variance(config, phi_i)).
inline std::vector<PulseRecord> sample_pulses(const RunConfig &config) {
    config.validate();
    const std::size_t n = config.schedule.size();
    if (n == 0) {
        throw InvalidInput("sample_pulses: phase schedule is empty");
    }
    const CovarianceMatrix port = detected_covariance(config);
    const double xx = port(0, 0);
    const double xp = port(0, 1);
    const double pp = port(1, 1);
    const double noise = config.detector.electronic_noise_var;

    std::vector<PulseRecord> records(n);
    detail::for_each_chunk(n, config.chunk_size, config.threads, [&](std::size_t chunk, std::size_t begin,
                                                                     std::size_t end) {
        auto engine = detail::chunk_engine(config.seed, detail::Stream::marginal, chunk);
        boost::random::normal_distribution<double> normal;
        for (std::size_t i = begin; i < end; ++i) {
            const double phi = config.schedule.phase(i);
            const double c = std::cos(phi);
            const double s = std::sin(phi);
            const double var = c * c * xx + 2.0 * c * s * xp + s * s * pp + noise;
            records[i] = {static_cast<std::uint64_t>(i), phi, std::sqrt(var) * normal(engine)};
        }
    });
    return records;
}

/// Brute-force sampler: draws the full two-mode source quadrature vector,
/// pushes each sample through the phase shift, the beamsplitter, a loss
/// beamsplitter with its own vacuum input and the homodyne projection, then
/// adds electronic noise. Distributionally identical to `sample_pulses`.
inline std::vector<PulseRecord> sample_pulses_joint(const RunConfig &config) {
    config.validate();
    const std::size_t n = config.schedule.size();
    if (n == 0) {
        throw InvalidInput("sample_pulses_joint: phase schedule is empty");
    }
    const Matrix source = blocked_source_covariance(config).matrix();
    const Eigen::LLT<Matrix> llt(source);
    if (llt.info() != Eigen::Success) {
        throw InvalidInput("sample_pulses_joint: source covariance is not positive definite");
    }
    const Matrix chol = llt.matrixL();
    const Matrix optics = (beamsplitter(config.beamsplitter_r) * phase_rotation(config.theta, kModeB)).matrix();
    const double eta = config.detector.efficiency();
    const double amp_signal = std::sqrt(eta);
    const double amp_vacuum = std::sqrt(1.0 - eta);
    const double amp_electronic = std::sqrt(config.detector.electronic_noise_var);

    std::vector<PulseRecord> records(n);
    detail::for_each_chunk(n, config.chunk_size, config.threads, [&](std::size_t chunk, std::size_t begin,
                                                                     std::size_t end) {
        auto engine = detail::chunk_engine(config.seed, detail::Stream::joint, chunk);
        boost::random::normal_distribution<double> normal;
        Eigen::Vector4d z;
        for (std::size_t i = begin; i < end; ++i) {
            for (int k = 0; k < 4; ++k) {
                z(k) = normal(engine);
            }
            const Eigen::Vector4d quadratures = optics * (chol * z);
            const double x_det = amp_signal * quadratures(0) + amp_vacuum * normal(engine);
            const double p_det = amp_signal * quadratures(1) + amp_vacuum * normal(engine);
            const double phi = config.schedule.phase(i);
            const double value = x_det * std::cos(phi) + p_det * std::sin(phi) + amp_electronic * normal(engine);
            records[i] = {static_cast<std::uint64_t>(i), phi, value};
        }
    });
    return records;
}

/// Variance of one block of consecutive pulses. `cos2_mean`/`sin2_mean` are
/// the block means of cos(2 phi) and sin(2 phi), the exact regressors for a
/// variance that is sinusoidal in the LO phase.
struct BlockVariance {
    double phase;
    double variance;
    std::size_t count;
    double cos2_mean;
    double sin2_mean;
};

/// Unbiased (n - 1) sample variance over consecutive non-overlapping blocks;
/// a trailing partial block is dropped. Block phase is the mean LO phase.
inline std::vector<BlockVariance> block_variance_trace(const std::vector<PulseRecord> &records,
                                                       std::size_t block_size = kDefaultBlockSize) {
    if (block_size < 2) {
        throw InvalidInput("block_variance_trace: block size must be >= 2");
    }
    if (records.size() < block_size) {
        throw InvalidInput("block_variance_trace: " + std::to_string(records.size()) +
                           " records is fewer than one block of " + std::to_string(block_size));
    }
    const std::size_t n_blocks = records.size() / block_size;
    std::vector<BlockVariance> out;
    out.reserve(n_blocks);
    for (std::size_t b = 0; b < n_blocks; ++b) {
        const auto first = records.begin() + static_cast<std::ptrdiff_t>(b * block_size);
        const auto last = first + static_cast<std::ptrdiff_t>(block_size);
        double mean = 0.0, phase = 0.0, cos2 = 0.0, sin2 = 0.0;
        for (auto it = first; it != last; ++it) {
            mean += it->value;
            phase += it->lo_phase;
            cos2 += std::cos(2.0 * it->lo_phase);
            sin2 += std::sin(2.0 * it->lo_phase);
        }
        const auto n = static_cast<double>(block_size);
        mean /= n;
        double ss = 0.0;
        for (auto it = first; it != last; ++it) {
            const double d = it->value - mean;
            ss += d * d;
        }
        out.push_back({phase / n, ss / (n - 1.0), block_size, cos2 / n, sin2 / n});
    }
    return out;
}

/// Raw detector units per LO photon for the linearity scan.
inline constexpr double kRawGainPerPhoton = 1e-8;

struct LinearityPoint {
    double lo_photons;
    double variance;  ///< raw units
};

/// Photocurrent-difference variance against LO photon number. The raw variance
/// is g * N_LO (shot noise) plus the LO-independent electronic offset, which is
/// `electronic_noise_var` shot-noise units at the detector's reference LO level.
/// A level of 0 is a dark measurement.
inline std::vector<LinearityPoint> shot_noise_linearity_scan(const DetectorModel &detector,
                                                             const std::vector<double> &lo_levels,
                                                             std::size_t pulses_per_level, std::uint64_t seed) {
    detector.validate();
    if (lo_levels.empty()) {
        throw InvalidInput("shot_noise_linearity_scan: no LO levels given");
    }
    if (pulses_per_level < 2) {
        throw InvalidInput("shot_noise_linearity_scan: need at least 2 pulses per level");
    }
    const double offset = kRawGainPerPhoton * detector.lo_photons_per_pulse * detector.electronic_noise_var;
    std::vector<LinearityPoint> out;
    out.reserve(lo_levels.size());
    for (std::size_t level = 0; level < lo_levels.size(); ++level) {
        const double photons = lo_levels[level];
        if (!(photons >= 0.0) || !std::isfinite(photons)) {
            throw InvalidInput("shot_noise_linearity_scan: LO levels must be finite and >= 0");
        }
        const double sigma = std::sqrt(kRawGainPerPhoton * photons + offset);
        auto engine = detail::chunk_engine(seed, detail::Stream::linearity, level);
        boost::random::normal_distribution<double> normal;
        double mean = 0.0, m2 = 0.0;
        for (std::size_t i = 0; i < pulses_per_level; ++i) {
            const double x = sigma * normal(engine);
            const double delta = x - mean;
            mean += delta / static_cast<double>(i + 1);
            m2 += delta * (x - mean);
        }
        out.push_back({photons, m2 / static_cast<double>(pulses_per_level - 1)});
    }
    return out;
}

struct LineFit {
    double slope;
    double intercept;
    /// Largest |residual| in units of the chi-square standard deviation of each point.
    double max_normalized_residual;
};

/// Ordinary least-squares line through a linearity scan.
inline LineFit fit_linearity(const std::vector<LinearityPoint> &points, std::size_t pulses_per_level) {
    if (points.size() < 2) {
        throw InvalidInput("fit_linearity: need at least two points");
    }
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const auto n = static_cast<double>(points.size());
    for (const auto &p : points) {
        sx += p.lo_photons;
        sy += p.variance;
        sxx += p.lo_photons * p.lo_photons;
        sxy += p.lo_photons * p.variance;
    }
    const double denom = n * sxx - sx * sx;
    if (!(denom > 0.0)) {
        throw InvalidInput("fit_linearity: LO levels must not all be equal");
    }
    const double slope = (n * sxy - sx * sy) / denom;
    const double intercept = (sy - slope * sx) / n;
    const double rel_sd = std::sqrt(2.0 / static_cast<double>(pulses_per_level - 1));
    double worst = 0.0;
    for (const auto &p : points) {
        const double predicted = intercept + slope * p.lo_photons;
        worst = std::max(worst, std::abs(p.variance - predicted) / (rel_sd * predicted));
    }
    return {slope, intercept, worst};
}

}  // namespace cvpulse
