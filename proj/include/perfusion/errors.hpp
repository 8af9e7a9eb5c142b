#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace perfusion {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct InvalidInput : Error { using Error::Error; };
struct DomainError : Error { using Error::Error; };
struct CriticalDampingError : DomainError { using DomainError::DomainError; };
struct ResonanceError : DomainError { using DomainError::DomainError; };
struct InputTooShort : Error { using Error::Error; };
struct FeatureError : Error { using Error::Error; };
struct NormalizationError : Error { using Error::Error; };
struct TrainingError : Error { using Error::Error; };
struct PredictError : Error { using Error::Error; };
struct NoPredictionForCase : Error { using Error::Error; };
struct EvalError : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };

// Carries the 1-based line number of the offending row (0 when not line-specific).
struct ParseError : Error {
    ParseError(const std::string& what, std::size_t line)
        : Error(line ? what + " (line " + std::to_string(line) + ")" : what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

}  // namespace perfusion
