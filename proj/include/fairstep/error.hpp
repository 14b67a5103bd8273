#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace fairstep {

/// Base class for every error raised by the engine. The CLI prints `what()`
/// verbatim and exits with status 1.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Schema or parse failure while reading an input file.
class IngestError : public Error {
public:
    IngestError(std::string source, std::size_t line, std::string field, const std::string& detail)
        : Error(source + ":" + std::to_string(line) + ": field '" + field + "': " + detail),
          source_(std::move(source)),
          line_(line),
          field_(std::move(field)) {}

    const std::string& source() const noexcept { return source_; }
    std::size_t line() const noexcept { return line_; }
    const std::string& field() const noexcept { return field_; }

private:
    std::string source_;
    std::size_t line_;
    std::string field_;
};

/// Inconsistent configuration (code maps, formulas, policies, specs).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Numerical precondition failure in fitting (degenerate outcome, too few rows).
class FitError : public Error {
public:
    using Error::Error;
};

} // namespace fairstep
