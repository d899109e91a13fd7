#pragma once

#include <stdexcept>
#include <string>

namespace dasp {

// Shape disagreement between tensors (reports both shapes in the message).
struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// A caller violated a documented precondition (non-scalar backward output,
// unnormalized probability rows, zero-variance column past the filter, ...).
struct ContractError : std::logic_error {
    using std::logic_error::logic_error;
};

// A feature batch is constant (or nearly so) in every dimension; redundancy
// is undefined and the modality must be treated as undiagnosable.
struct DegenerateBatchError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Fewer than two modalities survived filtering; the diagnosis rule cannot
// run and the caller falls back to an empty biased set.
struct DiagnosisUnavailableError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Checkpoint file problems, one type per failure mode.
struct CheckpointFormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct CheckpointVersionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct CheckpointManifestError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct CheckpointTruncatedError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Config file parse or validation failure (carries line/field diagnostics).
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Training diverged (NaN loss); message echoes the seed for reproduction.
struct TrainingError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Invalid data/stream specification.
struct SpecError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

}  // namespace dasp
