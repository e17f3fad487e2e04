#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace pcmpack {

/// Base class of every exception thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A precondition on an argument was violated.
class InvalidArgument : public Error {
public:
    using Error::Error;
};

class UnknownConfiguration : public Error {
public:
    explicit UnknownConfiguration(const std::string& name)
        : Error("unknown configuration: '" + name + "'"), name_(name) {}
    const std::string& name() const noexcept { return name_; }

private:
    std::string name_;
};

/// Rasterized duct contains no air cell.
class EmptyDuct : public Error {
public:
    using Error::Error;
};

/// Flow requested with V > 0 but the grid has no inlet (or no outlet) face.
class MissingPort : public Error {
public:
    using Error::Error;
};

/// Iterative solver stopped at its iteration cap above tolerance.
class NonConvergence : public Error {
public:
    NonConvergence(const std::string& what, std::size_t iterations, double residual)
        : Error(what + " (iterations=" + std::to_string(iterations) +
                ", residual=" + std::to_string(residual) + ")"),
          iterations_(iterations), residual_(residual) {}
    std::size_t iterations() const noexcept { return iterations_; }
    double residual() const noexcept { return residual_; }

private:
    std::size_t iterations_;
    double residual_;
};

/// Explicit time step above the positivity bound, or a NaN in the state.
class StabilityViolation : public Error {
public:
    StabilityViolation(const std::string& what, std::ptrdiff_t cell = -1)
        : Error(what), cell_(cell) {}
    std::ptrdiff_t cell() const noexcept { return cell_; }

private:
    std::ptrdiff_t cell_;
};

}  // namespace pcmpack
