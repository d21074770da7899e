// Copyright (c) 2026 groupseg contributors
// SPDX-License-Identifier: Apache-2.0
//
// Dataset directories: a manifest.json index, a schema.cfg copy, and the
// sample files it lists. The manifest carries no timestamps or host
// details, so regenerating with the same inputs reproduces it byte for
// byte.

#pragma once

#include <string>
#include <vector>

#include "groupseg/sample.hpp"
#include "groupseg/schema.hpp"

#include "json.hpp"

namespace groupseg {

struct Dataset {
    GroupSchema schema;
    std::vector<Sample> train;
    std::vector<Sample> test;
    // Max depth value across all samples; inputs are fed to the network as
    // depth / depth_scale.
    float depth_scale = 1.0f;
    nlohmann::ordered_json manifest;
};

// Reads manifest.json + schema.cfg from `dir`, loads and validates every
// listed sample. Throws FormatError on a malformed manifest or sample,
// ConfigError on a missing directory.
Dataset load_dataset(const std::string& dir, int threads = 1);

}  // namespace groupseg
