#pragma once

#include <stdexcept>
#include <string>

namespace mmsarc {

/// Base class for all library errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Tensor shape / dimension disagreements.
struct ShapeError : Error {
    using Error::Error;
};

/// Invalid configuration values (hyperparameters, flags, conv geometry).
struct ConfigError : Error {
    using Error::Error;
};

/// Broken call contract (preconditions such as scalar loss, nonempty input).
struct ContractError : Error {
    using Error::Error;
};

/// Dataset / file problems: parse failures, unknown vocabulary tokens,
/// checkpoint mismatches.
struct DataError : Error {
    using Error::Error;
};

/// Non-finite values or other numerical failures.
struct NumericError : Error {
    using Error::Error;
};

/// Masking violations (e.g. pooling over fully-masked rows).
struct MaskError : Error {
    using Error::Error;
};

/// Checkpoint/model disagreement (missing tensors, differing shapes).
struct CheckpointError : Error {
    using Error::Error;
};

}  // namespace mmsarc
