#pragma once

#include <stdexcept>
#include <string>

namespace imagerag {

// Base for every error raised by the library. The CLI maps UsageError and
// FormatError to exit status 2 and everything else to 1.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Caller violated a documented precondition (bad argument, bad config).
class UsageError : public Error {
public:
    using Error::Error;
};

// Malformed on-disk input: index binary, metadata sidecar, profile, config.
class FormatError : public Error {
public:
    using Error::Error;
};

// A request would exceed what the generation backend can accept.
class CapabilityError : public UsageError {
public:
    using UsageError::UsageError;
};

// Network or service failure after the client retry budget is spent.
class TransportError : public Error {
public:
    using Error::Error;
};

// The model answered, but the answer could not be interpreted.
class ResponseError : public Error {
public:
    ResponseError(const std::string& what, std::string raw)
        : Error(what), raw_(std::move(raw)) {}

    const std::string& raw_response() const noexcept { return raw_; }

private:
    std::string raw_;
};

} // namespace imagerag
