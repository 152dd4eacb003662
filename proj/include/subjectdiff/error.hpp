#pragma once

#include <stdexcept>
#include <string>

namespace sdiff {

enum class ErrorKind {
    Config,       // bad dimensions, incompatible settings
    Input,        // invalid argument values at a public boundary
    State,        // operation not valid in the current state (untrained, wrong stage)
    Numeric,      // non-finite values, solver non-convergence
    Corruption,   // checkpoint hash mismatch or malformed file
    Io,           // filesystem / decode failures
};

inline const char* error_kind_name(ErrorKind k) {
    switch (k) {
        case ErrorKind::Config: return "config";
        case ErrorKind::Input: return "input";
        case ErrorKind::State: return "state";
        case ErrorKind::Numeric: return "numeric";
        case ErrorKind::Corruption: return "corruption";
        case ErrorKind::Io: return "io";
    }
    return "unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& msg)
        : std::runtime_error(std::string(error_kind_name(kind)) + ": " + msg), kind_(kind) {}
    ErrorKind kind() const { return kind_; }

private:
    ErrorKind kind_;
};

#define SDIFF_CHECK(cond, kind, msg)                    \
    do {                                                \
        if (!(cond)) throw ::sdiff::Error(kind, msg);   \
    } while (0)

}  // namespace sdiff
