#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace neuralfd {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Network/model arity or weight-vector length does not match its spec.
class ModelShapeError : public Error {
public:
    using Error::Error;
};

/// A caller broke an API contract (stale tape, mismatched grids, ...).
class ContractViolation : public Error {
public:
    using Error::Error;
};

/// Query outside the supported domain (e.g. time outside a control series).
class RangeError : public Error {
public:
    using Error::Error;
};

/// Malformed or inconsistent input data.
class DataError : public Error {
public:
    using Error::Error;
};

/// Invalid scenario/run configuration (CFL violation, bad factors, ...).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// No detector close enough to a probe sample.
class CoverageError : public Error {
public:
    using Error::Error;
};

/// Least-squares fit produced a non-physical diagram.
class DegenerateFitError : public Error {
public:
    using Error::Error;
};

/// Non-finite value produced while integrating; carries the step index.
class NumericalFailure : public Error {
public:
    NumericalFailure(const std::string& what, std::size_t step)
        : Error(what + " (step " + std::to_string(step) + ")"), step_(step) {}

    std::size_t step() const noexcept { return step_; }

private:
    std::size_t step_;
};

/// Optimizer refused to take a step (non-finite gradient).
class OptimizerHalt : public Error {
public:
    using Error::Error;
};

}  // namespace neuralfd
