#pragma once

#include <stdexcept>
#include <string>

namespace gmmrisk {

/// Broad failure classes. The CLI maps them onto exit codes.
enum class ErrorKind {
    parse,          // malformed input file
    validation,     // input violates a domain invariant
    insufficient,   // not enough data for the requested statistic
    shape,          // dimension mismatch between arguments
    factorization,  // matrix not positive (semi-)definite
    numeric,        // underflow / non-finite intermediate
    degenerate,     // zero variance or zero volatility
    config,         // invalid run configuration
    io,             // filesystem failure
    run             // too many invalid days in a backtest
};

inline const char* to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::parse: return "parse";
        case ErrorKind::validation: return "validation";
        case ErrorKind::insufficient: return "insufficient-data";
        case ErrorKind::shape: return "shape";
        case ErrorKind::factorization: return "factorization";
        case ErrorKind::numeric: return "numeric";
        case ErrorKind::degenerate: return "degenerate";
        case ErrorKind::config: return "config";
        case ErrorKind::io: return "io";
        case ErrorKind::run: return "run";
    }
    return "unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(std::string(to_string(kind)) + " error: " + what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

namespace detail {
[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }
}  // namespace detail

}  // namespace gmmrisk
