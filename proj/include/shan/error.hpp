#pragma once

#include <stdexcept>
#include <string>

namespace shan {

// Base for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Tensor shapes or dimensions that do not fit an operation's contract.
class ShapeError : public Error {
public:
    ShapeError(const std::string& op, const std::string& dimension, const std::string& detail)
        : Error(op + ": dimension '" + dimension + "' " + detail), op_(op), dimension_(dimension) {}

    const std::string& op() const noexcept { return op_; }
    const std::string& dimension() const noexcept { return dimension_; }

private:
    std::string op_;
    std::string dimension_;
};

// Invalid argument values (bad enum, out-of-range scalar, ...).
class ArgumentError : public Error {
public:
    using Error::Error;
};

// Autodiff misuse: backward without a tape, non-scalar loss, optimizer without grads.
class GradError : public Error {
public:
    using Error::Error;
};

// Malformed files, missing datasets, broken checkpoints.
class DataError : public Error {
public:
    using Error::Error;
};

// An operation produced NaN/Inf while finite checking was on.
class NonFiniteError : public Error {
public:
    explicit NonFiniteError(const std::string& op)
        : Error("non-finite value produced by op '" + op + "'"), op_(op) {}
    const std::string& op() const noexcept { return op_; }

private:
    std::string op_;
};

} // namespace shan
