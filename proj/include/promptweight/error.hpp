#pragma once

#include <stdexcept>
#include <string>

namespace promptweight {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid arguments or configuration: shapes that do not agree, out-of-range
/// hyperparameters, impossible schedules.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// Problems with input data: missing files, payload sizes that disagree with
/// the manifest, zero-norm rows, labels out of range.
class DataError : public Error {
public:
    using Error::Error;
};

namespace detail {

inline void require(bool condition, const std::string& message) {
    if (!condition) {
        throw ValidationError(message);
    }
}

} // namespace detail
} // namespace promptweight
