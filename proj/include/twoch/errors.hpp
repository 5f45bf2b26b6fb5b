#pragma once

#include <stdexcept>
#include <string>

namespace twoch {

// Base for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Incompatible tensor or matrix extents.
class DimensionError : public Error {
public:
    using Error::Error;
};

// Malformed motion CSV, checkpoint or config text.
class ParseError : public Error {
public:
    using Error::Error;
};

// Invalid hyperparameters or run settings.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Non-finite values where finite ones are required.
class NumericError : public Error {
public:
    using Error::Error;
};

// An occlusion pattern the chosen recovery strategy cannot handle.
class RecoveryError : public Error {
public:
    using Error::Error;
};

}  // namespace twoch
