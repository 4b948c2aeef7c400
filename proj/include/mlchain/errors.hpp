#pragma once

#include <stdexcept>
#include <string>

namespace mlchain {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidInterval : public Error {
public:
    using Error::Error;
};

class DivisionByZeroInterval : public Error {
public:
    using Error::Error;
};

/// Raised when an interval enclosure update produces an empty intersection,
/// which means the starting enclosure did not contain the solution set.
class InfeasibleEnclosure : public Error {
public:
    InfeasibleEnclosure(const std::string& what, int component)
        : Error(what), component_(component) {}
    int component() const { return component_; }

private:
    int component_;
};

class NonConvergence : public Error {
public:
    NonConvergence(const std::string& what, double estimate, double residual)
        : Error(what), estimate_(estimate), residual_(residual) {}
    double estimate() const { return estimate_; }
    double residual() const { return residual_; }

private:
    double estimate_;
    double residual_;
};

class InvalidParameter : public Error {
public:
    using Error::Error;
};

class InvalidQuery : public Error {
public:
    using Error::Error;
};

class InvalidInput : public Error {
public:
    using Error::Error;
};

class UnboundedInput : public Error {
public:
    using Error::Error;
};

class InfeasibleFeatureSet : public Error {
public:
    using Error::Error;
};

class NumericalFailure : public Error {
public:
    using Error::Error;
};

class UnboundedBilinearVariable : public Error {
public:
    using Error::Error;
};

class InternalConsistencyError : public Error {
public:
    using Error::Error;
};

/// Malformed input file. `path` is the file and `field` a JSON-pointer-like
/// location of the offending entry.
class ParseError : public Error {
public:
    ParseError(std::string path, std::string field, const std::string& msg)
        : Error(path + ": " + field + ": " + msg), path_(std::move(path)), field_(std::move(field)) {}
    const std::string& path() const { return path_; }
    const std::string& field() const { return field_; }

private:
    std::string path_;
    std::string field_;
};

} // namespace mlchain
