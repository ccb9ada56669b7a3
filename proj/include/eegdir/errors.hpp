#pragma once

#include <stdexcept>
#include <string>

namespace eegdir {

// Every failure raised by the library derives from Error. The C API maps
// each kind onto one status code.
enum class ErrorKind {
    Dimension,
    Config,
    Contract,
    Numeric,
    Io,
    BadMagic,
    VersionMismatch,
    Truncated,
    ConfigMismatch,
    ShapeMismatch,
    DegenerateSample,
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

class DimensionError : public Error {
public:
    explicit DimensionError(const std::string& what) : Error(ErrorKind::Dimension, what) {}
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what) : Error(ErrorKind::Config, what) {}
};

class ContractError : public Error {
public:
    explicit ContractError(const std::string& what) : Error(ErrorKind::Contract, what) {}
};

class NumericError : public Error {
public:
    explicit NumericError(const std::string& what) : Error(ErrorKind::Numeric, what) {}
};

class IoError : public Error {
public:
    explicit IoError(const std::string& what) : Error(ErrorKind::Io, what) {}
};

// Container decoding failures: bad magic, version, truncation, mismatches.
class FormatError : public Error {
public:
    FormatError(ErrorKind kind, const std::string& what) : Error(kind, what) {}
};

class DegenerateSampleError : public Error {
public:
    explicit DegenerateSampleError(const std::string& what)
        : Error(ErrorKind::DegenerateSample, what) {}
};

}  // namespace eegdir
