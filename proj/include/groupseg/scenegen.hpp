// Copyright (c) 2026 groupseg contributors
// SPDX-License-Identifier: Apache-2.0
//
// Synthetic scene factory: layered 2-D scenes of parametric shapes over a
// banded background. Each foreground object is an opaque surface at a
// sampled depth; visibility is the per-pixel depth argmin, while group
// maps record every object's full footprint whether occluded or not.
// Objects of one group are placed pairwise disjoint, so each group map
// stays single-valued per pixel.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "groupseg/dataset.hpp"
#include "groupseg/rng.hpp"
#include "groupseg/sample.hpp"
#include "groupseg/schema.hpp"

#include "json.hpp"

namespace groupseg {

struct ShapeSpec {
    enum class Kind { Rectangle, Ellipse, Triangle };
    Kind kind = Kind::Rectangle;
    // Object width/height sampled independently as canvas fractions.
    double min_frac = 0.10;
    double max_frac = 0.30;
    // Optional per-category depth band; negative = inherit the scene-wide
    // object_depth range. Disjoint bands give categories characteristic
    // distances (and fix the occlusion order between them).
    double depth_min = -1.0;
    double depth_max = -1.0;
};

struct SceneSpec {
    int h = 64, w = 64;
    // Background bands sit behind everything at a fixed depth.
    double background_depth = 1000.0;
    double object_depth_min = 100.0;
    double object_depth_max = 800.0;
    double depth_noise_std = 2.0;
    // Row split fractions assigning background categories to horizontal
    // bands: g_0 - 1 ascending values in (0,1). Empty = equal bands.
    std::vector<double> horizon;
    // Per-group object-count range; entry 0 (background) must stay {0,0}.
    std::vector<std::pair<int, int>> counts;
    // Per-category shape; defaults apply when a category has no stanza.
    std::vector<ShapeSpec> shapes;
    double paste_probability = 0.0;
    int paste_group = -1;  // group to duplicate from; required when pasting
    int max_place_attempts = 100;
};

struct RejectionThresholds {
    int min_foreground = 1;              // visible foreground objects required
    double max_object_coverage = 0.40;   // single visible object, canvas fraction
    double max_dontcare_coverage = 0.40;
};

struct SceneConfig {
    SceneSpec spec;
    RejectionThresholds thresholds;
};

// Throws ConfigError naming the offending field.
void validate_scene_spec(const SceneSpec& spec, const GroupSchema& schema);

// Same stanza style as the schema config; see docs/ for the key list.
SceneConfig parse_scene_config(std::istream& in, const GroupSchema& schema,
                               const std::string& origin = "<scene>");
SceneConfig load_scene_config(const std::string& path, const GroupSchema& schema);
std::string scene_config_to_string(const SceneConfig& config, const GroupSchema& schema);

// Optional record of what generate_scene placed, for inspection and tests.
struct PlacedObject {
    int group = 0;
    int category = 0;
    int within = 0;
    float depth = 0.0f;
    std::vector<std::uint32_t> pixels;  // footprint, row-major indices
};

struct SceneTrace {
    std::vector<PlacedObject> objects;
};

// Builds one scene from the spec using only draws from `rng`. Throws
// PlacementError when disjoint placement fails within the retry budget
// (callers treat that as a rejected scene).
Sample generate_scene(const SceneSpec& spec, const GroupSchema& schema, Rng& rng,
                      SceneTrace* trace = nullptr);

struct AcceptDecision {
    bool accepted = false;
    std::string reason;  // empty when accepted
};

// Rejection heuristics over a finished sample: (a) fewer visible foreground
// objects than required, (b) one visible object covering too much canvas,
// (c) too much dont-care coverage (skipped when the schema has no
// dont_care category). "Objects" are 4-connected components of a single
// visible category.
AcceptDecision accept_scene(const Sample& sample, const RejectionThresholds& thresholds,
                            const GroupSchema& schema);

// Clones one visible object of `paste_group` to a new spot over visible
// background, making it visible there and pushing what was visible into
// occlusion. Throws PlacementError when nothing is clonable or no
// placement is permitted within the budget.
Sample augment_paste(const Sample& sample, const GroupSchema& schema, int paste_group, Rng& rng,
                     int max_attempts = 100);

// Generates scenes until n_train + n_test pass the acceptance heuristics,
// writes them plus manifest.json and schema.cfg under out_dir, and returns
// the manifest. Scene index k always uses the RNG stream (seed, k), so any
// thread count yields the identical dataset. Aborts (ConfigError) when the
// acceptance rate stays under 1% after a trial window.
nlohmann::ordered_json generate_dataset(const SceneConfig& config, const GroupSchema& schema,
                                        int n_train, int n_test, std::uint64_t seed,
                                        const std::string& out_dir, int threads = 1);

}  // namespace groupseg
