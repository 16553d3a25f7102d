#pragma once

#include <cstdio>
#include <stdexcept>
#include <string>
#include <utility>

namespace rsdpe {

// Error carrying a short machine-readable type tag alongside the message.
// The CLI layer turns these into JSON error objects.
class Error : public std::runtime_error {
public:
    Error(std::string type, const std::string& message)
        : std::runtime_error(message), type_(std::move(type)) {}

    const std::string& type() const { return type_; }

private:
    std::string type_;
};

[[noreturn]] inline void fail(const std::string& type, const std::string& message) {
    throw Error(type, message);
}

inline void require(bool cond, const std::string& type, const std::string& message) {
    if (!cond) fail(type, message);
}

// Round-trip decimal formatting.
inline std::string full_precision(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

// Bit-exact hexadecimal float formatting, used by the solution files.
inline std::string hex_float(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%a", v);
    return buf;
}

}  // namespace rsdpe
