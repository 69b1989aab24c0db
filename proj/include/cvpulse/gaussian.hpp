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

// Zero-mean Gaussian states of one or two optical modes, represented by their
// quadrature covariance matrix, and the linear optics acting on them.
//
// Conventions used throughout the library:
//   * every variance is expressed in shot-noise units, so the vacuum variance
//     of any quadrature is exactly 1 and the uncertainty bound reads
//     Var(X) Var(P) >= 1;
//   * quadratures are ordered (X_A, P_A, X_B, P_B);
//   * the symplectic form is block diagonal with blocks [[0, 1], [-1, 0]].

#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <cmath>
#include <complex>
#include <cstddef>
#include <string>
#include <variant>

#include "cvpulse/errors.hpp"

namespace cvpulse {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor, 4, 4>;
using ComplexMatrix = Eigen::Matrix<std::complex<double>, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor, 4, 4>;

/// Vacuum quadrature variance. Fixed to one; every other variance is a multiple of it.
inline constexpr double kShotNoise = 1.0;

inline constexpr double kSymmetryTolerance = 1e-12;
inline constexpr double kSymplecticTolerance = 1e-12;
/// Smallest admissible eigenvalue of gamma + i*Omega.
inline constexpr double kPhysicalityTolerance = 1e-9;

inline constexpr std::size_t kModeA = 0;
inline constexpr std::size_t kModeB = 1;

namespace detail {

inline void require_even_square(const Matrix &m, const char *what) {
    if (m.rows() != m.cols() || (m.rows() != 2 && m.rows() != 4)) {
        throw InvalidInput(std::string(what) + ": expected a 2x2 or 4x4 matrix, got " + std::to_string(m.rows()) + "x" +
                           std::to_string(m.cols()));
    }
}

inline void require_mode(std::size_t mode, std::size_t n_modes) {
    if (mode >= n_modes) {
        throw InvalidInput("mode index " + std::to_string(mode) + " out of range for a " + std::to_string(n_modes) +
                           "-mode state");
    }
}

}  // namespace detail

/// Block-diagonal symplectic form for `n_modes` modes (1 or 2).
inline Matrix symplectic_form(std::size_t n_modes) {
    if (n_modes != 1 && n_modes != 2) {
        throw InvalidInput("unsupported mode count " + std::to_string(n_modes) + " (expected 1 or 2)");
    }
    Matrix omega = Matrix::Zero(2 * n_modes, 2 * n_modes);
    for (std::size_t k = 0; k < n_modes; ++k) {
        omega(2 * k, 2 * k + 1) = 1.0;
        omega(2 * k + 1, 2 * k) = -1.0;
    }
    return omega;
}

struct PhysicalityResult {
    bool passed;
    double min_eigenvalue;
};

/// Uncertainty-principle test: smallest eigenvalue of the Hermitian matrix
/// gamma + i*Omega, passing iff it is >= -1e-9. Rejects non-symmetric input.
inline PhysicalityResult physicality_check(const Matrix &gamma) {
    detail::require_even_square(gamma, "physicality_check");
    if ((gamma - gamma.transpose()).cwiseAbs().maxCoeff() > kSymmetryTolerance) {
        throw InvalidInput("physicality_check: matrix is not symmetric");
    }
    if (!gamma.allFinite()) {
        throw InvalidInput("physicality_check: matrix has non-finite entries");
    }
    const Matrix omega = symplectic_form(static_cast<std::size_t>(gamma.rows() / 2));
    ComplexMatrix h(gamma.rows(), gamma.cols());
    for (Eigen::Index i = 0; i < gamma.rows(); ++i) {
        for (Eigen::Index j = 0; j < gamma.cols(); ++j) {
            h(i, j) = {gamma(i, j), omega(i, j)};
        }
    }
    Eigen::SelfAdjointEigenSolver<ComplexMatrix> solver(h, Eigen::EigenvaluesOnly);
    const double min_eig = solver.eigenvalues().minCoeff();
    return {min_eig >= -kPhysicalityTolerance, min_eig};
}

/// Covariance matrix of a zero-mean Gaussian state of one or two modes.
///
/// Always symmetric, positive definite and physical; the only way to build one
/// from raw numbers is `from_matrix`, which enforces all three.
class CovarianceMatrix {
   public:
    static CovarianceMatrix from_matrix(const Matrix &m) {
        const PhysicalityResult check = physicality_check(m);
        if (!check.passed) {
            throw UnphysicalState("covariance matrix violates the uncertainty principle", check.min_eigenvalue);
        }
        Matrix sym = 0.5 * (m + m.transpose());
        if (sym.llt().info() != Eigen::Success) {
            throw UnphysicalState("covariance matrix is not positive definite", check.min_eigenvalue);
        }
        return CovarianceMatrix(std::move(sym));
    }

    const Matrix &matrix() const noexcept {
        return m_;
    }
    std::size_t dim() const noexcept {
        return static_cast<std::size_t>(m_.rows());
    }
    std::size_t n_modes() const noexcept {
        return dim() / 2;
    }
    double operator()(std::size_t i, std::size_t j) const {
        return m_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    }

   private:
    explicit CovarianceMatrix(Matrix m) : m_(std::move(m)) {
    }
    Matrix m_;
};

/// Linear quadrature map that preserves the commutation relations (S Omega S^T = Omega).
class SymplecticTransform {
   public:
    static SymplecticTransform from_matrix(const Matrix &s) {
        detail::require_even_square(s, "SymplecticTransform");
        if (!s.allFinite()) {
            throw InvalidInput("SymplecticTransform: non-finite entries");
        }
        const Matrix omega = symplectic_form(static_cast<std::size_t>(s.rows() / 2));
        const double err = (s * omega * s.transpose() - omega).cwiseAbs().maxCoeff();
        if (err >= kSymplecticTolerance * std::max(1.0, s.squaredNorm())) {
            throw InvalidInput("SymplecticTransform: matrix is not symplectic (|S Omega S^T - Omega| = " +
                               std::to_string(err) + ")");
        }
        return SymplecticTransform(s);
    }

    static SymplecticTransform identity(std::size_t n_modes) {
        symplectic_form(n_modes);  // validates n_modes
        return SymplecticTransform(Matrix::Identity(2 * n_modes, 2 * n_modes));
    }

    const Matrix &matrix() const noexcept {
        return s_;
    }
    std::size_t dim() const noexcept {
        return static_cast<std::size_t>(s_.rows());
    }

    /// Composition: (a * b) applies b first, then a.
    friend SymplecticTransform operator*(const SymplecticTransform &a, const SymplecticTransform &b) {
        if (a.dim() != b.dim()) {
            throw InvalidInput("cannot compose symplectic transforms of different dimension");
        }
        return SymplecticTransform(a.s_ * b.s_);
    }

   private:
    explicit SymplecticTransform(Matrix s) : s_(std::move(s)) {
    }
    Matrix s_;
};

/// Sup-norm of S Omega S^T - Omega.
inline double symplectic_defect(const SymplecticTransform &s) {
    const Matrix omega = symplectic_form(s.dim() / 2);
    return (s.matrix() * omega * s.matrix().transpose() - omega).cwiseAbs().maxCoeff();
}

inline CovarianceMatrix vacuum_covariance(std::size_t n_modes) {
    if (n_modes != 1 && n_modes != 2) {
        throw InvalidInput("unsupported mode count " + std::to_string(n_modes) + " (expected 1 or 2)");
    }
    return CovarianceMatrix::from_matrix(kShotNoise * Matrix::Identity(2 * n_modes, 2 * n_modes));
}

/// Non-degenerate parametric amplifier acting on vacuum-or-otherwise inputs:
///   X_A -> cosh r X_A + sinh r X_B,   P_A -> cosh r P_A - sinh r P_B,
///   X_B -> cosh r X_B + sinh r X_A,   P_B -> cosh r P_B - sinh r P_A.
inline SymplecticTransform two_mode_squeezer(double r) {
    if (!std::isfinite(r)) {
        throw InvalidInput("two_mode_squeezer: squeezing parameter must be finite");
    }
    const double c = std::cosh(r);
    const double s = std::sinh(r);
    Matrix m(4, 4);
    // clang-format off
    m << c, 0, s, 0,
         0, c, 0, -s,
         s, 0, c, 0,
         0, -s, 0, c;
    // clang-format on
    return SymplecticTransform::from_matrix(m);
}

/// Rotation of one mode's quadratures by `theta`: X -> X cos - P sin, P -> X sin + P cos.
inline SymplecticTransform phase_rotation(double theta, std::size_t mode, std::size_t n_modes = 2) {
    if (!std::isfinite(theta)) {
        throw InvalidInput("phase_rotation: angle must be finite");
    }
    symplectic_form(n_modes);
    detail::require_mode(mode, n_modes);
    Matrix m = Matrix::Identity(2 * n_modes, 2 * n_modes);
    const double c = std::cos(theta);
    const double s = std::sin(theta);
    const auto k = static_cast<Eigen::Index>(2 * mode);
    m.block(k, k, 2, 2) << c, -s, s, c;
    return SymplecticTransform::from_matrix(m);
}

/// Lossless beamsplitter of power reflectivity R. Output mode 0 ("+") is
/// sqrt(R) A + sqrt(1-R) B, output mode 1 ("-") is -sqrt(1-R) A + sqrt(R) B,
/// identically for X and P.
inline SymplecticTransform beamsplitter(double reflectivity) {
    if (!(reflectivity > 0.0 && reflectivity < 1.0)) {
        throw InvalidInput("beamsplitter: reflectivity must lie in (0, 1)");
    }
    const double r = std::sqrt(reflectivity);
    const double t = std::sqrt(1.0 - reflectivity);
    Matrix m(4, 4);
    // clang-format off
    m <<  r, 0, t, 0,
          0, r, 0, t,
         -t, 0, r, 0,
          0, -t, 0, r;
    // clang-format on
    return SymplecticTransform::from_matrix(m);
}

/// Congruence gamma -> S gamma S^T.
inline CovarianceMatrix apply_transform(const SymplecticTransform &s, const CovarianceMatrix &gamma) {
    if (s.dim() != gamma.dim()) {
        throw InvalidInput("apply_transform: dimension mismatch (" + std::to_string(s.dim()) + " vs " +
                           std::to_string(gamma.dim()) + ")");
    }
    const Matrix out = s.matrix() * gamma.matrix() * s.matrix().transpose();
    return CovarianceMatrix::from_matrix(0.5 * (out + out.transpose()));
}

/// Pure-loss channel of transmission `eta` on one mode: the mode is mixed with
/// vacuum on a beamsplitter. Its variances become eta*v + (1-eta); its
/// correlations with the other mode scale by sqrt(eta).
inline CovarianceMatrix loss_channel(const CovarianceMatrix &gamma, double eta, std::size_t mode) {
    if (!(eta > 0.0 && eta <= 1.0)) {
        throw InvalidInput("loss_channel: efficiency must lie in (0, 1]");
    }
    detail::require_mode(mode, gamma.n_modes());
    Matrix scale = Matrix::Identity(gamma.dim(), gamma.dim());
    const auto k = static_cast<Eigen::Index>(2 * mode);
    scale(k, k) = std::sqrt(eta);
    scale(k + 1, k + 1) = std::sqrt(eta);
    Matrix out = scale * gamma.matrix() * scale;
    out(k, k) += (1.0 - eta) * kShotNoise;
    out(k + 1, k + 1) += (1.0 - eta) * kShotNoise;
    return CovarianceMatrix::from_matrix(out);
}

/// Same loss applied to every mode.
inline CovarianceMatrix loss_channel_all(const CovarianceMatrix &gamma, double eta) {
    CovarianceMatrix out = gamma;
    for (std::size_t m = 0; m < gamma.n_modes(); ++m) {
        out = loss_channel(out, eta, m);
    }
    return out;
}

/// Reduced state of one mode (the other one traced out).
inline CovarianceMatrix mode_covariance(const CovarianceMatrix &gamma, std::size_t mode) {
    detail::require_mode(mode, gamma.n_modes());
    const auto k = static_cast<Eigen::Index>(2 * mode);
    return CovarianceMatrix::from_matrix(gamma.matrix().block(k, k, 2, 2));
}

/// Replaces one mode by vacuum, removing its correlations (a blocked beam).
inline CovarianceMatrix replace_with_vacuum(const CovarianceMatrix &gamma, std::size_t mode) {
    detail::require_mode(mode, gamma.n_modes());
    Matrix out = gamma.matrix();
    const auto k = static_cast<Eigen::Index>(2 * mode);
    out.middleRows(k, 2).setZero();
    out.middleCols(k, 2).setZero();
    out.block(k, k, 2, 2) = kShotNoise * Matrix::Identity(2, 2);
    return CovarianceMatrix::from_matrix(out);
}

/// Variance of X cos(phi) + P sin(phi) on the given mode.
inline double quadrature_variance(const CovarianceMatrix &gamma, std::size_t mode, double phi) {
    detail::require_mode(mode, gamma.n_modes());
    const auto k = static_cast<Eigen::Index>(2 * mode);
    const double c = std::cos(phi);
    const double s = std::sin(phi);
    const Matrix &g = gamma.matrix();
    return c * c * g(k, k) + 2.0 * c * s * g(k, k + 1) + s * s * g(k + 1, k + 1);
}

/// Extremes of the quadrature variance of one mode over all phases, and the
/// phase in [0, pi) of the minimum.
struct QuadratureExtremes {
    double min_variance;
    double max_variance;
    double phase_at_min;
};

inline QuadratureExtremes quadrature_extremes(const CovarianceMatrix &gamma, std::size_t mode) {
    detail::require_mode(mode, gamma.n_modes());
    const auto k = static_cast<Eigen::Index>(2 * mode);
    const double xx = gamma.matrix()(k, k);
    const double pp = gamma.matrix()(k + 1, k + 1);
    const double xp = gamma.matrix()(k, k + 1);
    // Var(phi) = mean + half_diff cos(2 phi) + xp sin(2 phi)
    const double mean = 0.5 * (xx + pp);
    const double half_diff = 0.5 * (xx - pp);
    const double amplitude = std::hypot(half_diff, xp);
    // the minimum sits where 2 phi = atan2(xp, half_diff) + pi
    double phase = 0.5 * (std::atan2(xp, half_diff) + M_PI);
    phase = std::fmod(phase, M_PI);
    if (phase < 0) {
        phase += M_PI;
    }
    return {mean - amplitude, mean + amplitude, phase};
}

/// Source of the entangled pulse pair.
struct PureNopa {
    double r = 0.0;
};

/// Symmetric two-mode state with equal variances v on every quadrature and
/// correlations <X_A X_B> = k, <P_A P_B> = -k.
struct SymmetricMixed {
    double v = 1.0;
    double k = 0.0;
};

using SourceSpec = std::variant<PureNopa, SymmetricMixed>;

inline void validate(const SourceSpec &spec) {
    if (const auto *p = std::get_if<PureNopa>(&spec)) {
        if (!std::isfinite(p->r) || p->r < 0.0) {
            throw InvalidInput("pure_nopa: squeezing parameter must be finite and >= 0");
        }
        return;
    }
    const auto &m = std::get<SymmetricMixed>(spec);
    if (!std::isfinite(m.v) || !std::isfinite(m.k)) {
        throw InvalidInput("symmetric_mixed: v and k must be finite");
    }
    if (m.v < kShotNoise) {
        throw InvalidInput("symmetric_mixed: v must be >= 1");
    }
    if (std::abs(m.k) > m.v) {
        throw InvalidInput("symmetric_mixed: |k| must not exceed v");
    }
    const double lhs = m.v - std::abs(m.k);
    const double rhs = 1.0 / (m.v + std::abs(m.k));
    if (lhs < rhs - kPhysicalityTolerance) {
        throw UnphysicalState("symmetric_mixed: v - |k| < 1/(v + |k|)", lhs - rhs);
    }
}

/// Symmetric two-mode covariance [[V,0,Kx,0],[0,V,0,-Kp],[Kx,0,V,0],[0,-Kp,0,V]].
inline CovarianceMatrix symmetric_covariance(double v, double kx, double kp) {
    Matrix m(4, 4);
    // clang-format off
    m << v,   0,  kx,  0,
         0,   v,  0,  -kp,
         kx,  0,  v,   0,
         0,  -kp, 0,   v;
    // clang-format on
    return CovarianceMatrix::from_matrix(m);
}

inline CovarianceMatrix source_covariance(const SourceSpec &spec) {
    validate(spec);
    if (const auto *p = std::get_if<PureNopa>(&spec)) {
        return apply_transform(two_mode_squeezer(p->r), vacuum_covariance(2));
    }
    const auto &m = std::get<SymmetricMixed>(spec);
    return symmetric_covariance(m.v, m.k, m.k);
}

/// Squeezing parameter that gives the phase-insensitive intensity gain G = cosh^2 r.
inline double squeezing_from_gain(double gain) {
    if (!(gain >= 1.0) || !std::isfinite(gain)) {
        throw InvalidInput("squeezing_from_gain: gain must be finite and >= 1");
    }
    return std::acosh(std::sqrt(gain));
}

inline double intensity_gain(double r) {
    const double c = std::cosh(r);
    return c * c;
}

}  // namespace cvpulse
