#pragma once

#include <stdexcept>
#include <string>

namespace masktune {

// Invalid network/run configuration (bad shapes, bad flag values).
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad runtime input to an operation (label out of range, empty logits, ...).
class InputError : public std::runtime_error {
public:
    explicit InputError(const std::string& msg) : std::runtime_error(msg) {}
};

// File ingestion failure; message names the file and byte offset.
class IngestError : public std::runtime_error {
public:
    explicit IngestError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numerical failure (singular or ill-conditioned system, divergence).
class NumericalError : public std::runtime_error {
public:
    explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace masktune
