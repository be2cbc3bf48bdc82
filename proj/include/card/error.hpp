#pragma once

#include <stdexcept>
#include <string>

namespace card {

// Base for all library errors. exit_code() maps an escaped exception onto the
// CLI's process exit status: 1 config/usage, 2 data, 3 training/numerics,
// 4 metric preconditions.
class CardError : public std::runtime_error {
public:
    CardError(std::string msg, int code)
        : std::runtime_error(std::move(msg)), code_(code) {}
    int exit_code() const noexcept { return code_; }

private:
    int code_;
};

// Bad or inconsistent configuration / API misuse.
class ConfigError : public CardError {
public:
    explicit ConfigError(const std::string& msg) : CardError(msg, 1) {}
};

// Violated call contracts (non-scalar backward, unfrozen estimator queried,
// out-of-range timestep index, ...).
class ContractError : public ConfigError {
public:
    explicit ContractError(const std::string& msg) : ConfigError(msg) {}
};

// Shape mismatches surfaced with the offending layer/op name.
class DimensionError : public ConfigError {
public:
    explicit DimensionError(const std::string& msg) : ConfigError(msg) {}
};

// Malformed or inconsistent input data (CSV/IDX parsing, label range, ...).
class DataError : public CardError {
public:
    explicit DataError(const std::string& msg) : CardError(msg, 2) {}
};

// Divergence or non-finite values during optimization or sampling.
class TrainingError : public CardError {
public:
    explicit TrainingError(const std::string& msg) : CardError(msg, 3) {}
};

// NaN in the reverse chain; carries the timestep where it appeared.
class SamplingError : public TrainingError {
public:
    SamplingError(const std::string& msg, int timestep)
        : TrainingError(msg + " (timestep t=" + std::to_string(timestep) + ")"),
          timestep_(timestep) {}
    int timestep() const noexcept { return timestep_; }

private:
    int timestep_;
};

// Unsatisfied metric preconditions (too few samples, empty inputs, ...).
class MetricError : public CardError {
public:
    explicit MetricError(const std::string& msg) : CardError(msg, 4) {}
};

} // namespace card
