#pragma once

#include <stdexcept>
#include <string>

namespace peftbench {

// Root of every error the library throws.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

// Invalid configuration, hyperparameters or arguments.
class ConfigError : public Error {
public:
    using Error::Error;
};

// PEFT method not applicable to the architecture.
class IncompatibleError : public ConfigError {
public:
    using ConfigError::ConfigError;
};

// Malformed or insufficient data (files, splits, sample counts).
class DataError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

class NumericError : public Error {
public:
    using Error::Error;
};

}  // namespace peftbench
