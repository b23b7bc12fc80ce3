#pragma once

#include <stdexcept>
#include <string>

namespace repst {

// Error taxonomy. The CLI maps these onto process exit codes:
//   ContractViolation / NumericalFailure -> 1 (runtime/numerical)
//   ConfigError / ProtocolError          -> 2 (usage/config)
//   InputError / CheckpointError         -> 3 (data/IO)

struct ContractViolation : std::logic_error {
    explicit ContractViolation(const std::string& what) : std::logic_error(what) {}
};

struct NumericalFailure : std::runtime_error {
    explicit NumericalFailure(const std::string& what) : std::runtime_error(what) {}
};

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

struct ProtocolError : std::runtime_error {
    explicit ProtocolError(const std::string& what) : std::runtime_error(what) {}
};

struct InputError : std::runtime_error {
    explicit InputError(const std::string& what) : std::runtime_error(what) {}
};

struct CheckpointError : std::runtime_error {
    explicit CheckpointError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace repst
