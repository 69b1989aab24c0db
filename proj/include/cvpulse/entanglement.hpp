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

// Separability witnesses and entanglement measures for two-mode covariance matrices.

#pragma once

#include <cmath>

#include "cvpulse/errors.hpp"
#include "cvpulse/gaussian.hpp"

namespace cvpulse {

/// Tolerance when deciding whether a covariance matrix has the symmetric
/// (V, Kx, Kp) form with vanishing cross-quadrature terms.
inline constexpr double kSymmetricFormTolerance = 1e-9;

namespace detail {

inline void require_two_mode(const CovarianceMatrix &gamma, const char *what) {
    if (gamma.dim() != 4) {
        throw InvalidInput(std::string(what) + ": requires a two-mode (4x4) covariance matrix");
    }
}

}  // namespace detail

/// Duan-Simon quantity (1/2)[Var(X_A - X_B) + Var(P_A + P_B)]. The state is
/// non-separable when it is below 2.
inline double duan_simon(const CovarianceMatrix &gamma) {
    detail::require_two_mode(gamma, "duan_simon");
    const auto &g = gamma.matrix();
    const double var_x_minus = g(0, 0) + g(2, 2) - 2.0 * g(0, 2);
    const double var_p_plus = g(1, 1) + g(3, 3) + 2.0 * g(1, 3);
    return 0.5 * (var_x_minus + var_p_plus);
}

/// Product of the conditional variances Var(X_B | X_A) Var(P_B | P_A), using the
/// Gaussian (optimal linear estimator) conditional variance Var(B) - Cov(A,B)^2 / Var(A).
inline double reid_epr_product(const CovarianceMatrix &gamma) {
    detail::require_two_mode(gamma, "reid_epr_product");
    const auto &g = gamma.matrix();
    if (!(g(0, 0) > 0.0) || !(g(1, 1) > 0.0)) {
        throw InvalidInput("reid_epr_product: singular marginal variance");
    }
    const double cond_x = g(2, 2) - g(0, 2) * g(0, 2) / g(0, 0);
    const double cond_p = g(3, 3) - g(1, 3) * g(1, 3) / g(1, 1);
    return cond_x * cond_p;
}

struct WitnessResult {
    double i_ds;
    bool nonseparable;
    double reid_product;
    bool reid_satisfied;
};

inline WitnessResult witnesses(const CovarianceMatrix &gamma) {
    const double i_ds = duan_simon(gamma);
    const double reid = reid_epr_product(gamma);
    return {i_ds, i_ds < 2.0 * kShotNoise, reid, reid < kShotNoise * kShotNoise};
}

/// Parameters of the symmetric form [[V,0,Kx,0],[0,V,0,-Kp],[Kx,0,V,0],[0,-Kp,0,V]].
struct SymmetricForm {
    double v;
    double kx;
    double kp;
};

/// Reads (V, Kx, Kp) off a covariance matrix; throws if it is not of that form
/// within 1e-9.
inline SymmetricForm symmetric_form(const CovarianceMatrix &gamma) {
    detail::require_two_mode(gamma, "symmetric_form");
    const auto &g = gamma.matrix();
    const double v = g(0, 0);
    const double tol = kSymmetricFormTolerance;
    const bool diag_equal =
        std::abs(g(1, 1) - v) <= tol && std::abs(g(2, 2) - v) <= tol && std::abs(g(3, 3) - v) <= tol;
    const bool cross_zero =
        std::abs(g(0, 1)) <= tol && std::abs(g(0, 3)) <= tol && std::abs(g(1, 2)) <= tol && std::abs(g(2, 3)) <= tol;
    if (!diag_equal || !cross_zero) {
        throw InvalidInput("covariance matrix is not in symmetric (V, Kx, Kp) form");
    }
    return {v, g(0, 2), -g(1, 3)};
}

/// The function f(x) = c+ log2 c+ - c- log2 c-, c+- = (x^-1/2 +- x^1/2)^2 / 4,
/// defined as 0 for x >= 1 (separable states).
inline double formation_entropy_function(double x) {
    if (!(x > 0.0) || !std::isfinite(x)) {
        throw InvalidInput("formation_entropy_function: argument must be positive and finite");
    }
    if (x >= 1.0) {
        return 0.0;
    }
    const double inv_root = 1.0 / std::sqrt(x);
    const double root = std::sqrt(x);
    const double c_plus = 0.25 * (inv_root + root) * (inv_root + root);
    const double c_minus = 0.25 * (inv_root - root) * (inv_root - root);
    const double minus_term = c_minus > 0.0 ? c_minus * std::log2(c_minus) : 0.0;
    return c_plus * std::log2(c_plus) - minus_term;
}

struct EntanglementMeasure {
    double e_f;       ///< ebits
    double argument;  ///< value fed to f
};

/// Entropy of formation of a symmetric two-mode Gaussian state, f(sqrt((V-Kx)(V-Kp))).
inline EntanglementMeasure entropy_of_formation(const CovarianceMatrix &gamma) {
    const SymmetricForm form = symmetric_form(gamma);
    const double product = (form.v - form.kx) * (form.v - form.kp);
    if (!(product > 0.0)) {
        throw InvalidInput("entropy_of_formation: (V - Kx)(V - Kp) must be positive");
    }
    const double x = std::sqrt(product);
    return {formation_entropy_function(x), x};
}

/// Entropy of formation from the Duan-Simon quantity, f(I_DS / 2).
inline double duan_simon_to_ef(double i_ds) {
    if (!(i_ds > 0.0)) {
        throw InvalidInput("duan_simon_to_ef: Duan-Simon quantity must be positive");
    }
    return formation_entropy_function(i_ds / (2.0 * kShotNoise));
}

/// 10 log10(v): noise level relative to shot noise in dB.
inline double variance_to_db(double v) {
    if (!(v > 0.0) || !std::isfinite(v)) {
        throw InvalidInput("variance_to_db: variance must be positive and finite");
    }
    return 10.0 * std::log10(v / kShotNoise);
}

inline double db_to_variance(double db) {
    return kShotNoise * std::pow(10.0, db / 10.0);
}

}  // namespace cvpulse
