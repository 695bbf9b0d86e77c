#pragma once

#include <stdexcept>
#include <string>

namespace permfm {

// Every failure surfaced by the library derives from Error. The CLI maps the
// four families below onto distinct exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

/// Shape disagreement between two operands (matrix sizes, parameter counts,
/// observable widths).
class DimensionError : public Error {
public:
    using Error::Error;
};

/// Bad or unreadable files.
class DataError : public Error {
public:
    using Error::Error;
};

class IoError : public DataError {
public:
    using DataError::DataError;
};

class VersionError : public DataError {
public:
    using DataError::DataError;
};

class CorruptFileError : public DataError {
public:
    using DataError::DataError;
};

/// Non-finite values, exhausted retry budgets and broken numeric contracts.
class NumericError : public Error {
public:
    using Error::Error;
};

/// A trajectory left the affine manifold. This indicates a projector bug.
class FeasibilityError : public NumericError {
public:
    using NumericError::NumericError;
};

namespace exit_code {
inline constexpr int ok = 0;
inline constexpr int config = 2;
inline constexpr int data = 3;
inline constexpr int numeric = 4;
inline constexpr int verification = 5;
} // namespace exit_code

} // namespace permfm
