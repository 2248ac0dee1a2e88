#pragma once

#include <stdexcept>
#include <string>

namespace lpr {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tensor or layer shapes that do not fit together.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Misuse of the autograd tape (backward on non-scalar, backward twice, ...).
class GraphError : public Error {
public:
    using Error::Error;
};

/// Invalid argument value outside tensor shapes (thresholds, sizes, ...).
class ArgumentError : public Error {
public:
    using Error::Error;
};

/// Unreadable, missing or malformed data on disk.
class DataError : public Error {
public:
    using Error::Error;
};

/// NaN/Inf during training or inference.
class NumericError : public Error {
public:
    using Error::Error;
};

/// Bad configuration key or value.
class ConfigError : public Error {
public:
    using Error::Error;
};

enum class ParseErrorKind { token_count, non_numeric, out_of_range, bad_class };

/// Text record that failed to parse; carries the 1-based line number.
class ParseError : public DataError {
public:
    ParseError(ParseErrorKind kind, int line, const std::string& what)
        : DataError("line " + std::to_string(line) + ": " + what), kind_(kind), line_(line) {}

    ParseErrorKind kind() const noexcept { return kind_; }
    int line() const noexcept { return line_; }

private:
    ParseErrorKind kind_;
    int line_;
};

}  // namespace lpr
