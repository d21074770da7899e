// Copyright (c) 2026 groupseg contributors
// SPDX-License-Identifier: Apache-2.0

#include "groupseg/schema.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include "groupseg/errors.hpp"

namespace groupseg {

namespace {

std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t\r");
    return s.substr(begin, end - begin + 1);
}

// FNV-1a, 64-bit.
std::uint64_t fnv1a(std::uint64_t h, const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001B3ull;
    }
    return h;
}

}  // namespace

int GroupSchema::group_size(int group) const {
    if (group < 0 || group >= num_groups())
        throw std::out_of_range("group id " + std::to_string(group) + " out of range");
    return static_cast<int>(groups_[group].categories.size());
}

bool GroupSchema::group_has_void(int group) const {
    if (group < 0 || group >= num_groups())
        throw std::out_of_range("group id " + std::to_string(group) + " out of range");
    return group != 0 || void_in_background_;
}

int GroupSchema::block_dim(int group) const {
    return group_size(group) + (group_has_void(group) ? 1 : 0);
}

int GroupSchema::activation_count() const {
    int total = num_groups();
    for (int i = 0; i < num_groups(); ++i) total += block_dim(i);
    return total;
}

const std::string& GroupSchema::group_name(int group) const {
    if (group < 0 || group >= num_groups())
        throw std::out_of_range("group id " + std::to_string(group) + " out of range");
    return groups_[group].name;
}

const std::string& GroupSchema::category_name(int category_id) const {
    const auto [g, j] = group_of(category_id);
    return groups_[g].categories[j - 1];
}

std::pair<int, int> GroupSchema::group_of(int category_id) const {
    if (category_id < 0 || category_id >= num_categories())
        throw std::out_of_range("category id " + std::to_string(category_id) +
                                " out of range (N=" + std::to_string(num_categories()) + ")");
    return cat_group_[category_id];
}

int GroupSchema::category_of(int group, int within_index) const {
    if (group < 0 || group >= num_groups())
        throw std::out_of_range("group id " + std::to_string(group) + " out of range");
    if (within_index == 0)
        throw std::out_of_range("within-group index 0 is the void slot of group '" +
                                groups_[group].name + "', not a category");
    if (within_index < 1 || within_index > group_size(group))
        throw std::out_of_range("within-group index " + std::to_string(within_index) +
                                " out of range for group '" + groups_[group].name + "' (g=" +
                                std::to_string(group_size(group)) + ")");
    return group_first_cat_[group] + within_index - 1;
}

int GroupSchema::find_category(const std::string& name) const {
    for (int c = 0; c < num_categories(); ++c)
        if (category_name(c) == name) return c;
    return -1;
}

std::uint64_t GroupSchema::fingerprint() const {
    std::uint64_t h = 0xCBF29CE484222325ull;
    const char flag = void_in_background_ ? 1 : 0;
    h = fnv1a(h, &flag, 1);
    for (const auto& g : groups_) {
        h = fnv1a(h, g.name.data(), g.name.size());
        h = fnv1a(h, "\x1f", 1);
        for (const auto& c : g.categories) {
            h = fnv1a(h, c.data(), c.size());
            h = fnv1a(h, "\x1e", 1);
        }
    }
    return h;
}

std::string GroupSchema::fingerprint_hex() const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fingerprint()));
    return buf;
}

std::string GroupSchema::to_config() const {
    std::ostringstream out;
    out << "void_in_background " << (void_in_background_ ? "true" : "false") << "\n";
    for (const auto& g : groups_) {
        out << "group " << g.name << "\n";
        for (const auto& c : g.categories) out << "  " << c << "\n";
    }
    return out.str();
}

GroupSchema build_schema(const std::vector<GroupSpec>& groups, bool void_in_background) {
    if (groups.empty()) throw ConfigError("schema needs at least one group");
    GroupSchema s;
    s.void_in_background_ = void_in_background;
    s.groups_ = groups;
    std::unordered_set<std::string> group_names;
    std::unordered_set<std::string> cat_names;
    for (int gi = 0; gi < static_cast<int>(groups.size()); ++gi) {
        const auto& g = groups[gi];
        if (g.name.empty()) throw ConfigError("group " + std::to_string(gi) + " has an empty name");
        if (!group_names.insert(g.name).second)
            throw ConfigError("duplicate group name '" + g.name + "'");
        if (g.categories.empty())
            throw ConfigError("group '" + g.name + "' has no categories");
        s.group_first_cat_.push_back(static_cast<int>(s.cat_group_.size()));
        for (int j = 0; j < static_cast<int>(g.categories.size()); ++j) {
            const auto& name = g.categories[j];
            if (name.empty())
                throw ConfigError("group '" + g.name + "' contains an empty category name");
            if (!cat_names.insert(name).second)
                throw ConfigError("duplicate category name '" + name + "'");
            if (name == "dont_care") s.dont_care_ = static_cast<int>(s.cat_group_.size());
            s.cat_group_.emplace_back(gi, j + 1);
        }
    }
    return s;
}

GroupSchema parse_schema_config(std::istream& in, const std::string& origin) {
    std::vector<GroupSpec> groups;
    bool void_in_background = false;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string stripped = trim(line);
        if (stripped.empty() || stripped[0] == '#') continue;
        const bool indented = line[0] == ' ' || line[0] == '\t';
        std::istringstream ls(stripped);
        std::string key;
        ls >> key;
        if (indented) {
            // Indented lines are category names of the open group stanza.
            if (groups.empty())
                throw ConfigError(origin + ":" + std::to_string(lineno) +
                                  ": category '" + stripped + "' outside a group stanza");
            groups.back().categories.push_back(stripped);
        } else if (key == "group") {
            std::string name;
            ls >> name;
            if (name.empty())
                throw ConfigError(origin + ":" + std::to_string(lineno) + ": group needs a name");
            groups.push_back({name, {}});
        } else if (key == "void_in_background") {
            std::string value;
            ls >> value;
            if (value == "true")
                void_in_background = true;
            else if (value == "false")
                void_in_background = false;
            else
                throw ConfigError(origin + ":" + std::to_string(lineno) +
                                  ": void_in_background expects true|false, got '" + value + "'");
        } else {
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": unknown key '" + key + "'");
        }
    }
    return build_schema(groups, void_in_background);
}

GroupSchema load_schema_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open schema config '" + path + "'");
    return parse_schema_config(in, path);
}

GroupSchema reference_indoor_schema(bool void_in_background) {
    return build_schema(
        {
            {"background", {"ceiling", "floor", "wall", "window", "door"}},
            {"chair_like", {"chair", "table_and_chair", "trash_can", "toilet"}},
            {"table_like", {"table", "side_table", "bookshelf", "desk"}},
            {"big_objects",
             {"bed", "kitchen_cabinet", "bathtub", "mirror", "closets_cabinets", "dont_care",
              "sofa"}},
            {"small_objects",
             {"lamp", "computer", "music", "gym", "pillow", "household_appliance",
              "kitchen_appliance", "pets", "car", "plants", "pool", "recreation", "night_stand",
              "shower", "tvs", "sink"}},
        },
        void_in_background);
}

GroupSchema toy_schema() {
    return build_schema({
        {"background", {"wall", "floor"}},
        {"boxes", {"crate", "cabinet", "panel"}},
        {"blobs", {"ball", "cone", "pillow"}},
    });
}

}  // namespace groupseg
