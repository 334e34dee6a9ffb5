#pragma once

#include <stdexcept>
#include <string>

namespace ncast {

// Error taxonomy mirrored by CLI exit codes: config -> 2, data -> 3, numeric -> 4.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error("config error: " + msg) {}
};

struct DataError : Error {
    explicit DataError(const std::string& msg) : Error("data error: " + msg) {}
};

struct NumericFault : Error {
    explicit NumericFault(const std::string& msg) : Error("numerical fault: " + msg) {}
};

}  // namespace ncast
