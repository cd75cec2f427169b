#pragma once

#include <stdexcept>
#include <string>

namespace gbmc {

/// Exception carrying a machine-readable reason tag (e.g. "non_positive_start").
class Error : public std::runtime_error {
public:
    Error(std::string tag, const std::string& message)
        : std::runtime_error(tag + ": " + message), tag_(std::move(tag)) {}

    [[nodiscard]] const std::string& tag() const noexcept { return tag_; }

private:
    std::string tag_;
};

/// Raised for malformed input; the CLI maps it to exit status 1.
class InputError : public Error {
public:
    using Error::Error;
};

/// Raised when a numerical result contradicts an analytic verdict; exit status 2.
class ConsistencyError : public Error {
public:
    using Error::Error;
};

inline void require(bool ok, const char* tag, const std::string& message) {
    if (!ok) throw InputError(tag, message);
}

}  // namespace gbmc
