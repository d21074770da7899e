// Copyright (c) 2026 groupseg contributors
// SPDX-License-Identifier: Apache-2.0
//
// Figure export: label maps as binary PPM (P6), depth as binary PGM (P5).
// Void entries are always rendered black.

#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "groupseg/schema.hpp"
#include "groupseg/tensor.hpp"

namespace groupseg {

using Rgb = std::array<std::uint8_t, 3>;

struct Palette {
    std::vector<Rgb> colors;  // indexed by category id
    Rgb void_color{0, 0, 0};

    const Rgb& color_for(int category_id) const;
};

// Deterministic palette with pairwise-distinct, non-black colors.
Palette default_palette(int n_categories);

// Text format, one line per category: `<name> <r> <g> <b>`.
Palette load_palette_config(const std::string& path, const GroupSchema& schema);

// `labelmap` holds category ids; entries equal to `void_id` go black.
// Pass void_id = -1 when the map has no void entries.
void export_labelmap_image(const LabelMap& labelmap, const Palette& palette,
                           const std::string& path, int void_id = -1);

// Group map (within-group indices, 0 = void) rendered through the schema's
// category palette.
void export_groupmap_image(const LabelMap& groupmap, int group, const GroupSchema& schema,
                           const Palette& palette, const std::string& path);

// Depth normalized to [0, 255] over its own range.
void export_depth_image(const DepthMap& depth, const std::string& path);

// Decoded back for tests; returns RGB triples row-major.
std::vector<Rgb> read_ppm(const std::string& path, int& h, int& w);

}  // namespace groupseg
