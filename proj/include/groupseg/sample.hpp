// Copyright (c) 2026 groupseg contributors
// SPDX-License-Identifier: Apache-2.0
//
// One training example and its region algebra. A Sample stores the depth
// input, the visible label map, and one amodal map per group holding
// within-group indices (0 = void, j >= 1 = category j of that group is
// present at the pixel, visible or occluded).

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "groupseg/schema.hpp"
#include "groupseg/tensor.hpp"

namespace groupseg {

struct Sample {
    DepthMap depth;
    LabelMap visible;                   // category ids
    std::vector<LabelMap> group_maps;   // M+1 maps of within-group indices
    std::uint16_t n_categories = 0;     // N of the generating schema

    int height() const { return depth.h; }
    int width() const { return depth.w; }
    bool operator==(const Sample&) const = default;
};

// Pixel-index sets (sorted, row-major) for the loss and the metrics:
//   vis[c]  pixels where category c is the visible surface
//   pres[c] pixels where category c is present (visible or occluded)
//   occ[c]  pres[c] minus vis[c]
//   group_void[i] pixels where no category of group i is present
struct RegionSets {
    int h = 0;
    int w = 0;
    std::vector<std::vector<std::uint32_t>> vis;
    std::vector<std::vector<std::uint32_t>> pres;
    std::vector<std::vector<std::uint32_t>> occ;
    std::vector<std::vector<std::uint32_t>> group_void;

    std::size_t pixel_count() const { return static_cast<std::size_t>(h) * w; }
};

// Checks the Sample invariants against a schema. Throws PlausibilityError
// naming the first offending pixel and group: the visible category must be
// present in its own group map, and groups without a void slot must be
// present everywhere.
void validate_sample(const Sample& sample, const GroupSchema& schema);

// Region decomposition; validates first.
RegionSets regions_from_sample(const Sample& sample, const GroupSchema& schema);

// Binary sample file, bit-exact round trip (see README for the layout:
// magic "GSS1", u16 dims, f32/u16 little-endian payload).
void write_sample(const Sample& sample, const std::string& path);
Sample read_sample(const std::string& path);

std::vector<std::uint8_t> serialize_sample(const Sample& sample);
Sample deserialize_sample(const std::vector<std::uint8_t>& bytes, const std::string& origin);

}  // namespace groupseg
