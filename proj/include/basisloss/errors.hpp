#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace basisloss {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeMismatch : public Error {
public:
    using Error::Error;
};

/// A vector whose norm is at or below the cosine guard.
class DegenerateVector : public Error {
public:
    using Error::Error;
};

class EmptyInput : public Error {
public:
    using Error::Error;
};

class NonFiniteEvaluation : public Error {
public:
    using Error::Error;
};

class EmptySpeaker : public Error {
public:
    using Error::Error;
};

class InsufficientSpeakers : public Error {
public:
    using Error::Error;
};

class InvalidSpec : public Error {
public:
    using Error::Error;
};

class InvalidPlan : public Error {
public:
    using Error::Error;
};

class InsufficientData : public Error {
public:
    using Error::Error;
};

class DegenerateTrials : public Error {
public:
    using Error::Error;
};

/// Configuration error; `field()` names the offending key.
class ConfigError : public Error {
public:
    ConfigError(std::string field, const std::string& what)
        : Error(field + ": " + what), field_(std::move(field)) {}

    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

class ConfigInconsistency : public ConfigError {
public:
    using ConfigError::ConfigError;
};

/// Raised by the training loop when a loss value stops being finite.
/// The trainer state is left at the last good step.
class NonFiniteLoss : public Error {
public:
    NonFiniteLoss(std::size_t step, const std::string& what)
        : Error(what), step_(step) {}

    std::size_t step() const noexcept { return step_; }

private:
    std::size_t step_;
};

class FormatError : public Error {
public:
    using Error::Error;
};

}  // namespace basisloss
