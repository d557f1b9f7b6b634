#pragma once

#include <stdexcept>
#include <string>

namespace rimr {

// Base of every error the library raises. The CLI maps these onto exit codes:
// NumericError -> 3, everything else -> 2.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class FormatError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

// Raised when training produces a non-finite loss.
class NumericError : public Error {
public:
    using Error::Error;
};

}  // namespace rimr
