#pragma once

#include <stdexcept>
#include <string>

namespace textsql {

/// Base class for all library errors.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Filesystem / IO failures (missing files, unreadable databases, ...).
class IoError : public Error {
public:
    using Error::Error;
};

/// Malformed input data (datasets, stores, config files).
class ParseError : public Error {
public:
    using Error::Error;
};

/// Invalid configuration or precondition violation.
class ConfigError : public Error {
public:
    using Error::Error;
};

} // namespace textsql
