#pragma once

#include <stdexcept>
#include <string>

namespace brainattr {

// Error taxonomy mirrored by CLI exit codes: config 2, dependency 3, numerical 4.
// invalid_input covers rejected preconditions (bad shapes, bad arguments).

class invalid_input : public std::runtime_error {
public:
    explicit invalid_input(const std::string& msg) : std::runtime_error(msg) {}
};

class config_error : public std::runtime_error {
public:
    explicit config_error(const std::string& msg) : std::runtime_error(msg) {}
};

class dependency_error : public std::runtime_error {
public:
    explicit dependency_error(const std::string& msg) : std::runtime_error(msg) {}
};

class numerical_error : public std::runtime_error {
public:
    explicit numerical_error(const std::string& msg) : std::runtime_error(msg) {}
};

inline constexpr const char* kProjectVersion = "1.0.0";

}  // namespace brainattr
