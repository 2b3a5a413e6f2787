#pragma once

#include <stdexcept>
#include <string>

namespace persam {

// Shape/dimension mismatch; the message names the offending shapes.
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Input outside an operation's documented domain (e.g. log of x <= 0).
struct DomainError : std::runtime_error {
    explicit DomainError(const std::string& msg) : std::runtime_error(msg) {}
};

// API contract violation (non-scalar backward, too few epochs, ...).
struct ContractError : std::runtime_error {
    explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IndexError : std::out_of_range {
    explicit IndexError(const std::string& msg) : std::out_of_range(msg) {}
};

// File could not be parsed; carries the byte offset where parsing failed.
struct ParseError : std::runtime_error {
    ParseError(const std::string& msg, std::size_t byte_offset)
        : std::runtime_error(msg + " (byte offset " + std::to_string(byte_offset) + ")"),
          offset(byte_offset) {}
    std::size_t offset;
};

struct UnsupportedVersionError : std::runtime_error {
    explicit UnsupportedVersionError(const std::string& msg) : std::runtime_error(msg) {}
};

struct UnsupportedOperationError : std::runtime_error {
    explicit UnsupportedOperationError(const std::string& msg) : std::runtime_error(msg) {}
};

struct InsufficientPatchesError : std::runtime_error {
    explicit InsufficientPatchesError(const std::string& msg) : std::runtime_error(msg) {}
};

struct StratificationError : std::runtime_error {
    explicit StratificationError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DegenerateAttentionError : std::runtime_error {
    explicit DegenerateAttentionError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite loss during optimization; carries where it happened.
struct NumericError : std::runtime_error {
    NumericError(const std::string& msg, int epoch_, int step_, std::string component_)
        : std::runtime_error(msg + " (epoch " + std::to_string(epoch_) + ", step " +
                             std::to_string(step_) + ", component " + component_ + ")"),
          epoch(epoch_), step(step_), component(std::move(component_)) {}
    int epoch;
    int step;
    std::string component;
};

}  // namespace persam
