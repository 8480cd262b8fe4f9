#pragma once

#include <stdexcept>
#include <string>

namespace rvqtts {

// Base for every error raised by the library. The CLI maps these to exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Shapes or dimensions disagree.
class DimensionError : public Error {
public:
    using Error::Error;
};

// An index is outside its valid range (vocabulary id, class target, ...).
class IndexError : public Error {
public:
    using Error::Error;
};

// A caller broke a documented precondition.
class ContractError : public Error {
public:
    using Error::Error;
};

// Non-finite values where finite ones are required.
class NumericError : public Error {
public:
    using Error::Error;
};

// A file was readable but its content is malformed.
class FormatError : public Error {
public:
    using Error::Error;
};

// Opening, reading or writing a file failed (including short reads).
class IoError : public Error {
public:
    using Error::Error;
};

// Not enough data to fit a model (e.g. fewer frames than codevectors).
class InsufficientDataError : public Error {
public:
    using Error::Error;
};

// Durations cannot be fitted into the available frame budget.
class AlignmentError : public Error {
public:
    using Error::Error;
};

// Training produced a non-finite loss or gradient.
class DivergenceError : public Error {
public:
    using Error::Error;
};

// Model, codec or config settings are mutually inconsistent.
class ConfigError : public Error {
public:
    using Error::Error;
};

} // namespace rvqtts
