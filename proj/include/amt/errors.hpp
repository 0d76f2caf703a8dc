#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace amt {

// Error taxonomy shared by the library and the CLI. The CLI maps each class
// to a stable process exit code: usage 1, data 2, numeric 3.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class UsageError : public Error {
public:
    explicit UsageError(const std::string& msg) : Error(msg) {}
};

// Malformed or inconsistent input data (files, token text, manifests).
class DataError : public Error {
public:
    explicit DataError(const std::string& msg) : Error(msg) {}
};

// Byte-level parse failure; carries the offset where parsing stopped.
class ParseError : public DataError {
public:
    ParseError(const std::string& msg, std::size_t byte_offset)
        : DataError(msg + " (at byte " + std::to_string(byte_offset) + ")"),
          byte_offset_(byte_offset) {}

    std::size_t byte_offset() const { return byte_offset_; }

private:
    std::size_t byte_offset_;
};

// Non-finite losses, failed numeric sanity checks.
class NumericError : public Error {
public:
    explicit NumericError(const std::string& msg) : Error(msg) {}
};

}  // namespace amt
