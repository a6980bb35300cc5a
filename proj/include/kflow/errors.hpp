#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace kflow {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid family description or run configuration.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// A point was evaluated where r >= 0.
class OutsideDomainError : public Error {
public:
    using Error::Error;
};

/// The defining function does not produce a usable reference metric
/// (non-positive fiber Hessian, non-positive log argument in F).
class DegenerateFamilyError : public Error {
public:
    using Error::Error;
};

/// A fiber block lost positive definiteness.
class DegenerateMetricError : public Error {
public:
    DegenerateMetricError(const std::string& what, double min_eigenvalue)
        : Error(what), min_eigenvalue_(min_eigenvalue) {}

    double min_eigenvalue() const noexcept { return min_eigenvalue_; }

private:
    double min_eigenvalue_;
};

/// Truncated fiber has no nodes left.
class EmptyMaskError : public Error {
public:
    using Error::Error;
};

/// The evolved fiber metric g + phi_{z zbar} became non-positive.
class FlowBreakdownError : public Error {
public:
    FlowBreakdownError(const std::string& what, long worst_node, double worst_value)
        : Error(what), worst_node_(worst_node), worst_value_(worst_value) {}

    long worst_node() const noexcept { return worst_node_; }
    double worst_value() const noexcept { return worst_value_; }

private:
    long worst_node_;
    double worst_value_;
};

/// Requested time step exceeds the explicit stability bound.
class StabilityError : public Error {
public:
    using Error::Error;
};

/// Damped Newton iteration failed to reach the tolerance.
class NonconvergenceError : public Error {
public:
    NonconvergenceError(const std::string& what, std::vector<double> history)
        : Error(what), history_(std::move(history)) {}

    const std::vector<double>& history() const noexcept { return history_; }

private:
    std::vector<double> history_;
};

/// Closed-form oracle disagrees with its own finite-difference check.
class OracleDefectError : public Error {
public:
    using Error::Error;
};

/// Not enough samples to fit a growth exponent.
class InsufficientSamplesError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

/// Stored snapshots do not belong to the configured geometry.
class GridMismatchError : public Error {
public:
    using Error::Error;
};

}  // namespace kflow
