#pragma once

#include <stdexcept>
#include <string>

namespace sement {

/// Root of every exception thrown by the toolkit. The CLI maps each
/// subclass onto a distinct process exit code.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bad configuration or command-line input.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Malformed input records or violated domain invariants.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// A pipeline stage was requested out of order, or was already complete.
class StageError : public Error {
public:
    using Error::Error;
};

/// The generation or entailment backend failed to produce a usable reply.
class BackendError : public Error {
public:
    using Error::Error;
};

/// Transport-level failure that is worth retrying (timeouts, 429, 5xx).
class TransientError : public BackendError {
public:
    using BackendError::BackendError;
};

class NotFoundError : public Error {
public:
    using Error::Error;
};

}  // namespace sement
