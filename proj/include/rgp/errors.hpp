#pragma once

#include <stdexcept>
#include <string>

namespace rgp {

/// Shape or index violations in the inputs to a library call.
class StructuralError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A factorization or evaluation failed. Carries where it happened.
class NumericalError : public std::runtime_error {
public:
    NumericalError(const std::string& what, std::string matrix = {}, int layer = -1, double jitter = 0.0)
        : std::runtime_error(what), matrix_(std::move(matrix)), layer_(layer), jitter_(jitter) {}

    const std::string& matrix() const noexcept { return matrix_; }
    int layer() const noexcept { return layer_; }
    double jitter() const noexcept { return jitter_; }

private:
    std::string matrix_;
    int layer_;
    double jitter_;
};

/// Malformed or unreadable data files.
class DataError : public std::runtime_error {
public:
    DataError(const std::string& what, long line = -1) : std::runtime_error(what), line_(line) {}
    long line() const noexcept { return line_; }

private:
    long line_;
};

class TrainingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace rgp
