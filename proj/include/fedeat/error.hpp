#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace fedeat {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Operand shapes do not conform for a primitive.
class ShapeError : public Error {
public:
    using Error::Error;
};

// Misuse of a tape: freed, already consumed, or a Var from another tape.
class TapeError : public Error {
public:
    using Error::Error;
};

// A configuration failed validation. Carries every violated invariant.
class ConfigError : public Error {
public:
    explicit ConfigError(std::vector<std::string> violations)
        : Error(join(violations)), violations_(std::move(violations)) {}

    const std::vector<std::string>& violations() const noexcept { return violations_; }

private:
    static std::string join(const std::vector<std::string>& v) {
        std::string out = "invalid configuration:";
        for (const auto& s : v) {
            out += "\n  - ";
            out += s;
        }
        return out;
    }

    std::vector<std::string> violations_;
};

inline void throw_if_invalid(std::vector<std::string> violations) {
    if (!violations.empty()) throw ConfigError(std::move(violations));
}

} // namespace fedeat
