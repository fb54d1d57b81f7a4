#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace memeqa {

// Root of every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class ValidationError : public Error {
public:
    using Error::Error;
};

class PreconditionError : public Error {
public:
    using Error::Error;
};

class CorpusTooSmall : public Error {
public:
    CorpusTooSmall(std::string instance_id, std::size_t wanted, std::size_t available)
        : Error("not enough distractor candidates for instance '" + instance_id + "': wanted " +
                std::to_string(wanted) + ", found " + std::to_string(available)),
          instance_id_(std::move(instance_id)) {}

    const std::string& instance_id() const noexcept { return instance_id_; }

private:
    std::string instance_id_;
};

// Prompt-configuration grammar error; position is a 0-based offset into the spec string.
class ConfigParseError : public Error {
public:
    ConfigParseError(const std::string& message, std::size_t position)
        : Error(message + " (at position " + std::to_string(position) + ")"), position_(position) {}

    std::size_t position() const noexcept { return position_; }

private:
    std::size_t position_;
};

class RenderError : public Error {
public:
    RenderError(const std::string& message, char element)
        : Error(message), element_(element) {}

    char element() const noexcept { return element_; }

private:
    char element_;
};

class BackendError : public Error {
public:
    BackendError(const std::string& message, int http_status = 0, bool retryable = false)
        : Error(message), http_status_(http_status), retryable_(retryable) {}

    int http_status() const noexcept { return http_status_; }
    bool retryable() const noexcept { return retryable_; }

private:
    int http_status_;
    bool retryable_;
};

class ProtocolError : public BackendError {
public:
    explicit ProtocolError(const std::string& message) : BackendError(message, 0, false) {}
};

class DiversificationFailed : public Error {
public:
    DiversificationFailed(const std::string& message, std::string raw)
        : Error(message), raw_(std::move(raw)) {}

    const std::string& raw() const noexcept { return raw_; }

private:
    std::string raw_;
};

class ConfoundError : public Error {
public:
    using Error::Error;
};

class RephraseError : public Error {
public:
    using Error::Error;
};

class RationaleUnavailable : public Error {
public:
    using Error::Error;
};

class ExplanationUnavailable : public Error {
public:
    using Error::Error;
};

class NumericError : public Error {
public:
    using Error::Error;
};

}  // namespace memeqa
