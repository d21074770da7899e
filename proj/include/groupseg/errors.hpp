// Copyright (c) 2026 groupseg contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace groupseg {

// Bad config file or bad construction arguments (CLI exit code 1).
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Corrupt or mismatched binary artifact (CLI exit code 2).
struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Ground truth that violates the physical-plausibility invariant.
struct PlausibilityError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Scene construction could not satisfy its geometric constraints within the
// retry budget; the scene is rejected, not fatal for a generation run.
struct PlacementError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Training hit a non-finite loss or gradient; the last completed epoch's
// checkpoint stays on disk.
struct DivergenceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace groupseg
