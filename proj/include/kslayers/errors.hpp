#pragma once

#include <stdexcept>
#include <string>

namespace kslayers {

/// Base of every failure raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// An argument lies outside the admissible domain of an operation.
class DomainError : public Error {
public:
    using Error::Error;
};

/// A numerical procedure failed on admissible input.
class NumericalError : public Error {
public:
    using Error::Error;
};

/// Iteration did not reach its tolerance.
class ConvergenceError : public NumericalError {
public:
    ConvergenceError(const std::string& what, double last_residual, int iterations)
        : NumericalError(what + " (last residual " + std::to_string(last_residual) + " after " +
                         std::to_string(iterations) + " iterations)"),
          residual_(last_residual), iterations_(iterations) {}

    double residual() const noexcept { return residual_; }
    int iterations() const noexcept { return iterations_; }

private:
    double residual_;
    int iterations_;
};

class ConditioningError : public NumericalError {
public:
    ConditioningError(const std::string& what, double condition)
        : NumericalError(what + " (condition estimate " + std::to_string(condition) + ")"),
          condition_(condition) {}
    double condition() const noexcept { return condition_; }

private:
    double condition_;
};

class CalibrationError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class NondegeneracyError : public NumericalError {
public:
    NondegeneracyError(const std::string& what, double det)
        : NumericalError(what + " (|det| = " + std::to_string(det) + ")"), det_(det) {}
    double determinant() const noexcept { return det_; }

private:
    double det_;
};

class MatchingError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class ExtractionError : public NumericalError {
public:
    ExtractionError(const std::string& what, double fit_residual)
        : NumericalError(what + " (fit residual " + std::to_string(fit_residual) + ")"),
          fit_residual_(fit_residual) {}
    double fit_residual() const noexcept { return fit_residual_; }

private:
    double fit_residual_;
};

class DiscretizationError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

/// exp(U) overflowed; `radius` is where it happened.
class OverflowError : public NumericalError {
public:
    OverflowError(const std::string& what, double radius)
        : NumericalError(what + " at r = " + std::to_string(radius)), radius_(radius) {}
    double radius() const noexcept { return radius_; }

private:
    double radius_;
};

/// The discrete linearized operator is (numerically) singular.
class NearKernelError : public NumericalError {
public:
    NearKernelError(const std::string& what, double sigma_min, double z0_overlap)
        : NumericalError(what + " (smallest singular value " + std::to_string(sigma_min) +
                         ", overlap with cut-off z0 " + std::to_string(z0_overlap) + ")"),
          sigma_min_(sigma_min), z0_overlap_(z0_overlap) {}
    double sigma_min() const noexcept { return sigma_min_; }
    double z0_overlap() const noexcept { return z0_overlap_; }

private:
    double sigma_min_;
    double z0_overlap_;
};

class NonContractionError : public NumericalError {
public:
    NonContractionError(const std::string& what, double factor)
        : NumericalError(what + " (measured factor " + std::to_string(factor) + ")"),
          factor_(factor) {}
    double factor() const noexcept { return factor_; }

private:
    double factor_;
};

/// Newton met a singular Jacobian, typically at a turning point.
class FoldError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class StallError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

/// Two independent evaluation routes disagree beyond tolerance.
class ConsistencyError : public NumericalError {
public:
    ConsistencyError(const std::string& what, double mismatch)
        : NumericalError(what + " (mismatch " + std::to_string(mismatch) + ")"),
          mismatch_(mismatch) {}
    double mismatch() const noexcept { return mismatch_; }

private:
    double mismatch_;
};

}  // namespace kslayers
