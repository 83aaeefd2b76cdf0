#pragma once

#include <stdexcept>
#include <string>

namespace unoranic {

/// Root of every error raised by the library. Each subclass maps to one CLI
/// exit code (see tools/unoranic.cpp).
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes or image dimensions.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// Invalid model, training or corruption configuration.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Malformed dataset or checkpoint file.
class FormatError : public Error {
public:
    using Error::Error;
};

/// Operation called in the wrong state (graph consumed, checkpoint missing).
class StateError : public Error {
public:
    using Error::Error;
};

/// NaN or Inf detected in a forward result, a loss or a gradient.
class NumericError : public Error {
public:
    using Error::Error;
};

/// A metric is mathematically undefined for its input (e.g. AUC without
/// both classes present).
class UndefinedMetricError : public Error {
public:
    using Error::Error;
};

/// Filesystem failure (unreadable input, unwritable output).
class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace unoranic
