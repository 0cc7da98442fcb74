#pragma once

#include <stdexcept>
#include <string>

namespace slcf {

// Error taxonomy mirrors the CLI exit codes: config errors exit 2,
// data errors exit 3, numeric failures exit 4.
struct config_error : std::runtime_error {
    explicit config_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct data_error : std::runtime_error {
    explicit data_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct dimension_error : data_error {
    explicit dimension_error(const std::string& msg) : data_error(msg) {}
};

struct numeric_error : std::runtime_error {
    explicit numeric_error(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace slcf
