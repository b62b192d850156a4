#pragma once

#include <stdexcept>
#include <string>

namespace dvqa {

// Base class for all library errors.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Tensor shape / dimension mismatch.
class ShapeError : public Error {
public:
    using Error::Error;
};

// Invalid argument value (out-of-range id, bad parameter, malformed input).
class ValueError : public Error {
public:
    using Error::Error;
};

// NaN/Inf escaped an operation, or a numeric procedure failed.
class NumericError : public Error {
public:
    using Error::Error;
};

// File / stream failure.
class IoError : public Error {
public:
    using Error::Error;
};

// Bad configuration file or key.
class ConfigError : public Error {
public:
    using Error::Error;
};

}  // namespace dvqa
