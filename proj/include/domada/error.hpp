#pragma once

#include <stdexcept>
#include <string>

namespace domada {

/// Root of every error raised by the library. `kind()` is a short stable tag
/// used by the CLI for its one-line machine-parsable diagnostics.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
    virtual const char* kind() const noexcept { return "error"; }
};

/// A precondition on an argument was violated (bad rank, empty input, ...).
class InvalidArgument : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "invalid_argument"; }
};

/// File does not start with the expected magic or is otherwise malformed.
class FormatError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "format"; }
};

/// Magic family matches but the version does not.
class VersionError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "version"; }
};

/// File ended before the structure was complete.
class TruncatedError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "truncated"; }
};

class ChecksumError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "checksum"; }
};

class IoError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "io"; }
};

/// Rejected input data (duplicate ids, over-long examples, unknown config keys).
class DataError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "data"; }
};

/// Retrieval produced nothing usable.
class RetrievalError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "retrieval"; }
};

/// Training diverged (non-finite loss) or was misconfigured.
class TrainingError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "training"; }
};

}  // namespace domada
