// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace ng {

// Invalid operand shapes or an op applied to tensors it cannot accept.
struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed config, bad CLI arguments, schema violations.  CLI exit code 2.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Non-finite loss during classical or generator training.  CLI exit code 3.
struct TrainingDivergence : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Artifact does not match the requested architecture / config.  CLI exit code 4.
struct ArtifactMismatch : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Phase-2-only failure mode: generated weights produce non-finite task loss
// while no soft clip is active.  CLI exit code 5.
struct UnboundedLogits : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// File missing, truncated, or carrying a bad magic.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace ng
