#pragma once

#include <stdexcept>
#include <string>

namespace fluff {

// Bad or inconsistent configuration (CLI exit code 2).
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Dataset / checkpoint / tensor-file problems (CLI exit code 3).
class DataError : public std::runtime_error {
public:
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numeric failures: NaN loss, failed gradient checks (CLI exit code 4).
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

class TensorFileError : public DataError {
public:
    enum class Code {
        bad_magic,
        bad_version,
        truncated,
        bad_header,
        io_failure,
    };

    TensorFileError(Code c, const std::string& msg) : DataError(msg), code(c) {}

    Code code;
};

} // namespace fluff
