#pragma once

#include <stdexcept>
#include <string>

namespace pwavg {

// Base class for every error thrown by the library.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed expression source. Carries the byte offset of the offending token.
class ParseError : public Error {
public:
    ParseError(const std::string& msg, std::size_t offset)
        : Error(msg + " (byte " + std::to_string(offset) + ")"), offset_(offset) {}
    std::size_t offset() const { return offset_; }

private:
    std::size_t offset_;
};

// Arithmetic domain violation while evaluating an expression tree.
class EvalError : public Error {
public:
    using Error::Error;
};

// eps-series expansion cannot proceed (non-analytic node, vanishing denominator).
class SeriesError : public Error {
public:
    using Error::Error;
};

// Invalid configuration. Carries a path into the config document.
class ConfigError : public Error {
public:
    ConfigError(const std::string& msg, const std::string& path)
        : Error(path + ": " + msg), path_(path) {}
    const std::string& path() const { return path_; }

private:
    std::string path_;
};

// Numerical integration failed. Carries the time at which it gave up.
class IntegrationError : public Error {
public:
    IntegrationError(const std::string& msg, double t)
        : Error(msg + " (t = " + std::to_string(t) + ")"), t_(t) {}
    double where() const { return t_; }

private:
    double t_ = 0.0;
};

// An operation was called outside its documented domain.
class PreconditionError : public Error {
public:
    using Error::Error;
};

// A matrix required to be invertible is numerically singular.
class SingularError : public Error {
public:
    using Error::Error;
};

}  // namespace pwavg
