// Copyright (c) 2026 groupseg contributors
// SPDX-License-Identifier: Apache-2.0
//
// Category taxonomy and group partition. Categories are grouped so that
// members of one group never occlude each other in a single view; every
// group except (by default) the background carries a "void" slot at
// within-group index 0 meaning "no category of this group is present".
// All index arithmetic used by the other modules lives here.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

namespace groupseg {

struct GroupSpec {
    std::string name;
    std::vector<std::string> categories;
};

class GroupSchema {
public:
    // Group count M+1 (group 0 is the background).
    int num_groups() const { return static_cast<int>(groups_.size()); }
    // Total category count N.
    int num_categories() const { return static_cast<int>(cat_group_.size()); }
    int group_size(int group) const;
    bool group_has_void(int group) const;
    // Channels in the q block of `group`: g_i plus the void slot if present.
    int block_dim(int group) const;
    // Head channels for the grouped output: (M+1) + sum_i block_dim(i).
    // With a void slot in every group this is exactly 2(M+1) + N.
    int activation_count() const;

    const std::string& group_name(int group) const;
    const std::string& category_name(int category_id) const;

    // (group_id, within_index >= 1) for a category id.
    std::pair<int, int> group_of(int category_id) const;
    // Inverse of group_of; within_index 0 is the void slot, not a category.
    int category_of(int group, int within_index) const;

    // -1 when the name is unknown.
    int find_category(const std::string& name) const;
    // Index of the designated "dont_care" category, or -1 if the schema
    // has none.
    int dont_care_category() const { return dont_care_; }

    bool void_in_background() const { return void_in_background_; }

    // Stable hash of the full schema; stored in checkpoints and reports so
    // mismatched artifacts are rejected instead of silently mis-indexed.
    std::uint64_t fingerprint() const;
    // The same hash as 16 lowercase hex digits (manifest/report form).
    std::string fingerprint_hex() const;

    // Canonical config-file serialization (parse_schema_config inverse).
    std::string to_config() const;

    friend GroupSchema build_schema(const std::vector<GroupSpec>& groups,
                                    bool void_in_background);

private:
    std::vector<GroupSpec> groups_;
    bool void_in_background_ = false;
    std::vector<std::pair<int, int>> cat_group_;   // category id -> (group, within)
    std::vector<int> group_first_cat_;             // group -> first category id
    int dont_care_ = -1;
};

// Category ids are assigned in declaration order. Throws ConfigError on
// empty groups or duplicate names, naming the offender.
GroupSchema build_schema(const std::vector<GroupSpec>& groups,
                         bool void_in_background = false);

// Line-oriented stanza format:
//   void_in_background false
//   group <name>
//     <category>
//     <category>
// Unknown keys are rejected with their line number.
GroupSchema parse_schema_config(std::istream& in, const std::string& origin = "<schema>");
GroupSchema load_schema_config(const std::string& path);

// The 5-group / 36-category indoor-scene partition used in tests and docs.
GroupSchema reference_indoor_schema(bool void_in_background = false);

// 3-group desk-scale schema (2 background + 3 + 3 categories).
GroupSchema toy_schema();

}  // namespace groupseg
