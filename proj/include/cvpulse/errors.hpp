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

#pragma once

#include <stdexcept>
#include <string>

namespace cvpulse {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

/// An argument, configuration or input file violates a documented precondition.
class InvalidInput : public Error {
   public:
    using Error::Error;
};

/// A covariance matrix (given or reconstructed) violates the uncertainty principle.
class UnphysicalState : public InvalidInput {
   public:
    UnphysicalState(const std::string &what, double min_eigenvalue)
        : InvalidInput(what + " (min eigenvalue of gamma + i*Omega = " + std::to_string(min_eigenvalue) + ")"),
          min_eigenvalue_(min_eigenvalue) {
    }

    double min_eigenvalue() const noexcept {
        return min_eigenvalue_;
    }

   private:
    double min_eigenvalue_;
};

/// The phase-scan least-squares fit could not produce an estimate.
class FitError : public Error {
   public:
    using Error::Error;
};

/// The in-phase and out-of-phase recombination scans disagree beyond statistics.
class SymmetryViolation : public Error {
   public:
    using Error::Error;
};

/// Reading or writing a file failed.
class IoError : public Error {
   public:
    using Error::Error;
};

}  // namespace cvpulse
