#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace aerovln {

// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A caller broke an operation's precondition.
class ContractViolation : public Error {
public:
    using Error::Error;
};

// Malformed text input. line() is 1-based; 0 when the input is not line oriented.
class ParseError : public Error {
public:
    ParseError(std::size_t line, const std::string& what)
        : Error(line > 0 ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

// Inconsistent configuration (bad split assignment, invalid scene spec, ...).
class ConfigError : public Error {
public:
    using Error::Error;
};

// Dataset integrity problem, e.g. duplicate episode ids.
class IntegrityError : public Error {
public:
    using Error::Error;
};

}  // namespace aerovln
