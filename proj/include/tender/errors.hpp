#pragma once

#include <stdexcept>
#include <string>

namespace tender {

/// Operand shapes or granularities that do not fit together.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Invalid configuration (bit width, alpha, group count, array geometry).
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Malformed serialized data (tensor container, plan document).
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// An integer accumulator left its declared width.
class OverflowError : public std::overflow_error {
public:
    using std::overflow_error::overflow_error;
};

} // namespace tender
