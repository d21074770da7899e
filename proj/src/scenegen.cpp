// Copyright (c) 2026 groupseg contributors
// SPDX-License-Identifier: Apache-2.0

#include "groupseg/scenegen.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "groupseg/errors.hpp"
#include "groupseg/parallel.hpp"

namespace groupseg {

namespace fs = std::filesystem;

namespace {

std::string shortest(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

const char* kind_name(ShapeSpec::Kind k) {
    switch (k) {
        case ShapeSpec::Kind::Rectangle: return "rectangle";
        case ShapeSpec::Kind::Ellipse: return "ellipse";
        case ShapeSpec::Kind::Triangle: return "triangle";
    }
    return "rectangle";
}

ShapeSpec::Kind parse_kind(const std::string& s, const std::string& where) {
    if (s == "rectangle") return ShapeSpec::Kind::Rectangle;
    if (s == "ellipse") return ShapeSpec::Kind::Ellipse;
    if (s == "triangle") return ShapeSpec::Kind::Triangle;
    throw ConfigError(where + ": unknown shape kind '" + s +
                      "' (expected rectangle|ellipse|triangle)");
}

// Row boundaries of the background bands: band k covers [rows[k], rows[k+1]).
std::vector<int> band_rows(const SceneSpec& spec, int bands) {
    std::vector<int> rows(static_cast<std::size_t>(bands) + 1, 0);
    rows[static_cast<std::size_t>(bands)] = spec.h;
    for (int k = 1; k < bands; ++k) {
        const double f = spec.horizon.empty() ? static_cast<double>(k) / bands
                                              : spec.horizon[static_cast<std::size_t>(k) - 1];
        rows[static_cast<std::size_t>(k)] = static_cast<int>(std::lround(f * spec.h));
    }
    return rows;
}

// Footprint of a shape centered at (cx, cy) with full extents (wpx, hpx),
// clipped to the canvas; pixel centers at +0.5.
std::vector<std::uint32_t> rasterize(ShapeSpec::Kind kind, double cx, double cy, double wpx,
                                     double hpx, int h, int w) {
    std::vector<std::uint32_t> pixels;
    const double hw = wpx / 2, hh = hpx / 2;
    const int y0 = std::max(0, static_cast<int>(std::floor(cy - hh)) - 1);
    const int y1 = std::min(h - 1, static_cast<int>(std::ceil(cy + hh)) + 1);
    const int x0 = std::max(0, static_cast<int>(std::floor(cx - hw)) - 1);
    const int x1 = std::min(w - 1, static_cast<int>(std::ceil(cx + hw)) + 1);
    for (int y = y0; y <= y1; ++y) {
        const double py = y + 0.5;
        for (int x = x0; x <= x1; ++x) {
            const double px = x + 0.5;
            bool inside = false;
            switch (kind) {
                case ShapeSpec::Kind::Rectangle:
                    inside = std::abs(px - cx) <= hw && std::abs(py - cy) <= hh;
                    break;
                case ShapeSpec::Kind::Ellipse: {
                    const double dx = (px - cx) / hw, dy = (py - cy) / hh;
                    inside = dx * dx + dy * dy <= 1.0;
                    break;
                }
                case ShapeSpec::Kind::Triangle: {
                    // Upward isoceles: apex on top, base at the bottom edge.
                    const double t = (py - (cy - hh)) / hpx;
                    inside = t >= 0.0 && t <= 1.0 && std::abs(px - cx) <= hw * t;
                    break;
                }
            }
            if (inside) pixels.push_back(static_cast<std::uint32_t>(y) * w + x);
        }
    }
    return pixels;
}

// 4-connected components over pixels holding the same nonzero value.
// Components come out ordered by their lowest pixel index.
std::vector<std::vector<std::uint32_t>> same_value_components(const std::vector<std::uint16_t>& v,
                                                              int h, int w) {
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    std::vector<std::uint8_t> seen(hw, 0);
    std::vector<std::vector<std::uint32_t>> comps;
    std::vector<std::uint32_t> stack;
    for (std::size_t start = 0; start < hw; ++start) {
        if (v[start] == 0 || seen[start]) continue;
        const std::uint16_t value = v[start];
        std::vector<std::uint32_t> comp;
        stack.assign(1, static_cast<std::uint32_t>(start));
        seen[start] = 1;
        while (!stack.empty()) {
            const std::uint32_t px = stack.back();
            stack.pop_back();
            comp.push_back(px);
            const int y = static_cast<int>(px) / w, x = static_cast<int>(px) % w;
            const int ny[4] = {y - 1, y + 1, y, y};
            const int nx[4] = {x, x, x - 1, x + 1};
            for (int k = 0; k < 4; ++k) {
                if (ny[k] < 0 || ny[k] >= h || nx[k] < 0 || nx[k] >= w) continue;
                const std::size_t q = static_cast<std::size_t>(ny[k]) * w + nx[k];
                if (!seen[q] && v[q] == value) {
                    seen[q] = 1;
                    stack.push_back(static_cast<std::uint32_t>(q));
                }
            }
        }
        std::sort(comp.begin(), comp.end());
        comps.push_back(std::move(comp));
    }
    return comps;
}

}  // namespace

void validate_scene_spec(const SceneSpec& spec, const GroupSchema& schema) {
    if (spec.h < 8 || spec.w < 8) {
        throw ConfigError("canvas must be at least 8x8, got " + std::to_string(spec.h) + "x" +
                          std::to_string(spec.w));
    }
    if (!(spec.object_depth_min > 0) || spec.object_depth_max < spec.object_depth_min) {
        throw ConfigError("object_depth range must satisfy 0 < min <= max");
    }
    if (spec.background_depth <= spec.object_depth_max) {
        throw ConfigError("background_depth must exceed the object depth range");
    }
    if (spec.depth_noise_std < 0) throw ConfigError("depth_noise_std must be nonnegative");
    const int bands = schema.group_size(0);
    if (!spec.horizon.empty()) {
        if (static_cast<int>(spec.horizon.size()) != bands - 1) {
            throw ConfigError("horizon needs " + std::to_string(bands - 1) +
                              " fractions for " + std::to_string(bands) +
                              " background categories, got " + std::to_string(spec.horizon.size()));
        }
        double prev = 0.0;
        for (double f : spec.horizon) {
            if (!(f > prev && f < 1.0)) {
                throw ConfigError("horizon fractions must be ascending inside (0,1)");
            }
            prev = f;
        }
    }
    if (static_cast<int>(spec.counts.size()) != schema.num_groups()) {
        throw ConfigError("counts must cover all " + std::to_string(schema.num_groups()) +
                          " groups");
    }
    if (spec.counts[0] != std::pair<int, int>{0, 0}) {
        throw ConfigError("background group takes no object count");
    }
    for (int i = 1; i < schema.num_groups(); ++i) {
        const auto [lo, hi] = spec.counts[static_cast<std::size_t>(i)];
        if (lo < 0 || hi < lo) {
            throw ConfigError("count range for group '" + schema.group_name(i) +
                              "' must satisfy 0 <= min <= max");
        }
    }
    if (static_cast<int>(spec.shapes.size()) != schema.num_categories()) {
        throw ConfigError("shapes must cover all categories");
    }
    for (int c = 0; c < schema.num_categories(); ++c) {
        const auto& s = spec.shapes[static_cast<std::size_t>(c)];
        if (!(s.min_frac > 0 && s.min_frac <= s.max_frac && s.max_frac <= 1.0)) {
            throw ConfigError("size fractions for '" + schema.category_name(c) +
                              "' must satisfy 0 < min <= max <= 1");
        }
    }
    if (spec.paste_probability < 0 || spec.paste_probability > 1) {
        throw ConfigError("paste_probability must lie in [0,1]");
    }
    if (spec.paste_probability > 0 &&
        (spec.paste_group < 1 || spec.paste_group >= schema.num_groups())) {
        throw ConfigError("paste_group must name a foreground group when pasting is on");
    }
    if (spec.max_place_attempts < 1) throw ConfigError("max_place_attempts must be positive");
}

SceneConfig parse_scene_config(std::istream& in, const GroupSchema& schema,
                               const std::string& origin) {
    SceneConfig cfg;
    cfg.spec.counts.assign(static_cast<std::size_t>(schema.num_groups()), {1, 2});
    cfg.spec.counts[0] = {0, 0};
    cfg.spec.shapes.assign(static_cast<std::size_t>(schema.num_categories()), ShapeSpec{});

    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto pos = line.find_first_not_of(" \t");
        if (pos == std::string::npos || line[pos] == '#') continue;
        const std::string where = origin + ":" + std::to_string(lineno);
        std::istringstream ls(line);
        std::string key;
        ls >> key;
        auto want = [&](bool ok, const char* usage) {
            if (!ok || ls.fail()) throw ConfigError(where + ": expected '" + usage + "'");
        };
        if (key == "canvas") {
            ls >> cfg.spec.h >> cfg.spec.w;
            want(!ls.fail(), "canvas H W");
        } else if (key == "background_depth") {
            ls >> cfg.spec.background_depth;
            want(!ls.fail(), "background_depth D");
        } else if (key == "object_depth") {
            ls >> cfg.spec.object_depth_min >> cfg.spec.object_depth_max;
            want(!ls.fail(), "object_depth MIN MAX");
        } else if (key == "depth_noise_std") {
            ls >> cfg.spec.depth_noise_std;
            want(!ls.fail(), "depth_noise_std S");
        } else if (key == "horizon") {
            cfg.spec.horizon.clear();
            double f;
            while (ls >> f) cfg.spec.horizon.push_back(f);
            ls.clear();  // failbit from the greedy read is expected
            want(!cfg.spec.horizon.empty(), "horizon F1 [F2 ...]");
        } else if (key == "count") {
            std::string group;
            int lo = 0, hi = 0;
            ls >> group >> lo >> hi;
            want(!ls.fail(), "count GROUP MIN MAX");
            int gi = -1;
            for (int i = 0; i < schema.num_groups(); ++i) {
                if (schema.group_name(i) == group) gi = i;
            }
            if (gi < 0) throw ConfigError(where + ": unknown group '" + group + "'");
            if (gi == 0) throw ConfigError(where + ": background group takes no object count");
            cfg.spec.counts[static_cast<std::size_t>(gi)] = {lo, hi};
        } else if (key == "shape") {
            std::string cat, kind;
            double lo = 0, hi = 0;
            ls >> cat >> kind >> lo >> hi;
            want(!ls.fail(), "shape CATEGORY KIND MIN MAX");
            const int c = schema.find_category(cat);
            if (c < 0) throw ConfigError(where + ": unknown category '" + cat + "'");
            cfg.spec.shapes[static_cast<std::size_t>(c)] = {parse_kind(kind, where), lo, hi};
        } else if (key == "paste_probability") {
            ls >> cfg.spec.paste_probability;
            want(!ls.fail(), "paste_probability P");
        } else if (key == "paste_group") {
            std::string group;
            ls >> group;
            want(!group.empty(), "paste_group GROUP");
            int gi = -1;
            for (int i = 0; i < schema.num_groups(); ++i) {
                if (schema.group_name(i) == group) gi = i;
            }
            if (gi < 0) throw ConfigError(where + ": unknown group '" + group + "'");
            cfg.spec.paste_group = gi;
        } else if (key == "max_place_attempts") {
            ls >> cfg.spec.max_place_attempts;
            want(!ls.fail(), "max_place_attempts K");
        } else if (key == "min_foreground") {
            ls >> cfg.thresholds.min_foreground;
            want(!ls.fail(), "min_foreground K");
        } else if (key == "max_object_coverage") {
            ls >> cfg.thresholds.max_object_coverage;
            want(!ls.fail(), "max_object_coverage F");
        } else if (key == "max_dontcare_coverage") {
            ls >> cfg.thresholds.max_dontcare_coverage;
            want(!ls.fail(), "max_dontcare_coverage F");
        } else {
            throw ConfigError(where + ": unknown key '" + key + "'");
        }
    }
    if (cfg.thresholds.max_object_coverage < 0 || cfg.thresholds.max_object_coverage > 1 ||
        cfg.thresholds.max_dontcare_coverage < 0 || cfg.thresholds.max_dontcare_coverage > 1) {
        throw ConfigError(origin + ": coverage thresholds must lie in [0,1]");
    }
    validate_scene_spec(cfg.spec, schema);
    return cfg;
}

SceneConfig load_scene_config(const std::string& path, const GroupSchema& schema) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open scene config '" + path + "'");
    return parse_scene_config(in, schema, path);
}

std::string scene_config_to_string(const SceneConfig& config, const GroupSchema& schema) {
    const SceneSpec& s = config.spec;
    std::ostringstream out;
    out << "canvas " << s.h << " " << s.w << "\n";
    out << "background_depth " << shortest(s.background_depth) << "\n";
    out << "object_depth " << shortest(s.object_depth_min) << " " << shortest(s.object_depth_max)
        << "\n";
    out << "depth_noise_std " << shortest(s.depth_noise_std) << "\n";
    if (!s.horizon.empty()) {
        out << "horizon";
        for (double f : s.horizon) out << " " << shortest(f);
        out << "\n";
    }
    for (int i = 1; i < schema.num_groups(); ++i) {
        const auto [lo, hi] = s.counts[static_cast<std::size_t>(i)];
        out << "count " << schema.group_name(i) << " " << lo << " " << hi << "\n";
    }
    for (int c = 0; c < schema.num_categories(); ++c) {
        const auto& sh = s.shapes[static_cast<std::size_t>(c)];
        out << "shape " << schema.category_name(c) << " " << kind_name(sh.kind) << " "
            << shortest(sh.min_frac) << " " << shortest(sh.max_frac) << "\n";
    }
    out << "paste_probability " << shortest(s.paste_probability) << "\n";
    if (s.paste_group >= 0) out << "paste_group " << schema.group_name(s.paste_group) << "\n";
    out << "max_place_attempts " << s.max_place_attempts << "\n";
    out << "min_foreground " << config.thresholds.min_foreground << "\n";
    out << "max_object_coverage " << shortest(config.thresholds.max_object_coverage) << "\n";
    out << "max_dontcare_coverage " << shortest(config.thresholds.max_dontcare_coverage) << "\n";
    return out.str();
}

Sample generate_scene(const SceneSpec& spec, const GroupSchema& schema, Rng& rng,
                      SceneTrace* trace) {
    validate_scene_spec(spec, schema);
    if (schema.num_groups() < 2) {
        throw ConfigError("scene generation needs a background and at least one foreground group");
    }
    const int h = spec.h, w = spec.w;
    const std::size_t hw = static_cast<std::size_t>(h) * w;

    Sample sample;
    sample.n_categories = static_cast<std::uint16_t>(schema.num_categories());
    sample.depth = DepthMap(h, w);
    sample.visible = LabelMap(h, w);
    sample.group_maps.assign(static_cast<std::size_t>(schema.num_groups()), LabelMap(h, w));

    // Background bands: always present everywhere, at maximal depth.
    const std::vector<int> rows = band_rows(spec, schema.group_size(0));
    std::vector<float> surface(hw, static_cast<float>(spec.background_depth));
    for (int band = 0; band < schema.group_size(0); ++band) {
        const int cat = schema.category_of(0, band + 1);
        for (int y = rows[static_cast<std::size_t>(band)];
             y < rows[static_cast<std::size_t>(band) + 1]; ++y) {
            for (int x = 0; x < w; ++x) {
                const std::size_t px = static_cast<std::size_t>(y) * w + x;
                sample.visible.v[px] = static_cast<std::uint16_t>(cat);
                sample.group_maps[0].v[px] = static_cast<std::uint16_t>(band + 1);
            }
        }
    }

    // Foreground groups, one at a time; footprints within a group must stay
    // pairwise disjoint. Draw order is part of the reproducibility contract:
    // per group its object count, then per object category, depth, and one
    // (size, position) tuple per placement attempt.
    std::vector<std::uint8_t> occupied(hw);
    for (int i = 1; i < schema.num_groups(); ++i) {
        std::fill(occupied.begin(), occupied.end(), 0);
        const auto [lo, hi] = spec.counts[static_cast<std::size_t>(i)];
        const int count = rng.uniform_int(lo, hi);
        for (int obj = 0; obj < count; ++obj) {
            const int within = static_cast<int>(rng.below(
                                   static_cast<std::uint64_t>(schema.group_size(i)))) + 1;
            const int cat = schema.category_of(i, within);
            const float depth =
                static_cast<float>(rng.uniform(spec.object_depth_min, spec.object_depth_max));
            const ShapeSpec& shape = spec.shapes[static_cast<std::size_t>(cat)];
            bool placed = false;
            for (int attempt = 0; attempt < spec.max_place_attempts && !placed; ++attempt) {
                const double wpx = rng.uniform(shape.min_frac, shape.max_frac) * w;
                const double hpx = rng.uniform(shape.min_frac, shape.max_frac) * h;
                const double cx = rng.uniform(0.0, static_cast<double>(w));
                const double cy = rng.uniform(0.0, static_cast<double>(h));
                auto pixels = rasterize(shape.kind, cx, cy, wpx, hpx, h, w);
                if (pixels.empty()) continue;
                bool clash = false;
                for (std::uint32_t px : pixels) {
                    if (occupied[px]) {
                        clash = true;
                        break;
                    }
                }
                if (clash) continue;
                for (std::uint32_t px : pixels) {
                    occupied[px] = 1;
                    sample.group_maps[static_cast<std::size_t>(i)].v[px] =
                        static_cast<std::uint16_t>(within);
                    if (depth < surface[px]) {
                        surface[px] = depth;
                        sample.visible.v[px] = static_cast<std::uint16_t>(cat);
                    }
                }
                if (trace) {
                    trace->objects.push_back({i, cat, within, depth, std::move(pixels)});
                }
                placed = true;
            }
            if (!placed) {
                throw PlacementError("cannot place object " + std::to_string(obj) + " of group '" +
                                     schema.group_name(i) + "' disjointly after " +
                                     std::to_string(spec.max_place_attempts) + " attempts");
            }
        }
    }

    for (std::size_t px = 0; px < hw; ++px) {
        float d = surface[px];
        if (spec.depth_noise_std > 0) {
            d += static_cast<float>(rng.normal(0.0, spec.depth_noise_std));
        }
        sample.depth.v[px] = std::max(0.0f, d);
    }
    return sample;
}

AcceptDecision accept_scene(const Sample& sample, const RejectionThresholds& thresholds,
                            const GroupSchema& schema) {
    const int h = sample.visible.h, w = sample.visible.w;
    const std::size_t hw = static_cast<std::size_t>(h) * w;

    // Visible foreground objects = 4-connected components of each visible
    // foreground category.
    std::vector<std::uint16_t> fg(hw, 0);
    for (std::size_t px = 0; px < hw; ++px) {
        const int c = sample.visible.v[px];
        if (schema.group_of(c).first != 0) fg[px] = static_cast<std::uint16_t>(c + 1);
    }
    const auto objects = same_value_components(fg, h, w);

    if (static_cast<int>(objects.size()) < thresholds.min_foreground) {
        return {false, "no foreground"};
    }
    for (const auto& comp : objects) {
        if (static_cast<double>(comp.size()) > thresholds.max_object_coverage * hw) {
            return {false, "object coverage"};
        }
    }
    const int dc = schema.dont_care_category();
    if (dc >= 0) {
        std::size_t n = 0;
        for (std::size_t px = 0; px < hw; ++px) n += (sample.visible.v[px] == dc);
        if (static_cast<double>(n) > thresholds.max_dontcare_coverage * hw) {
            return {false, "dont-care coverage"};
        }
    }
    return {true, ""};
}

Sample augment_paste(const Sample& sample, const GroupSchema& schema, int paste_group, Rng& rng,
                     int max_attempts) {
    if (paste_group < 1 || paste_group >= schema.num_groups()) {
        throw ConfigError("paste_group must be a foreground group");
    }
    const int h = sample.visible.h, w = sample.visible.w;

    // Objects of the paste group: same-value components of its group map.
    const auto comps =
        same_value_components(sample.group_maps[static_cast<std::size_t>(paste_group)].v, h, w);
    struct Candidate {
        const std::vector<std::uint32_t>* pixels;
        int within;
        int category;
    };
    std::vector<Candidate> clonable;
    for (const auto& comp : comps) {
        const int within = sample.group_maps[static_cast<std::size_t>(paste_group)].v[comp[0]];
        const int cat = schema.category_of(paste_group, within);
        for (std::uint32_t px : comp) {
            if (sample.visible.v[px] == cat) {
                clonable.push_back({&comp, within, cat});
                break;
            }
        }
    }
    if (clonable.empty()) {
        throw PlacementError("no visible object of group '" + schema.group_name(paste_group) +
                             "' to clone");
    }
    const Candidate& src = clonable[static_cast<std::size_t>(rng.below(clonable.size()))];

    int by0 = h, bx0 = w, by1 = 0, bx1 = 0;
    for (std::uint32_t px : *src.pixels) {
        const int y = static_cast<int>(px) / w, x = static_cast<int>(px) % w;
        by0 = std::min(by0, y);
        bx0 = std::min(bx0, x);
        by1 = std::max(by1, y);
        bx1 = std::max(bx1, x);
    }
    const int bh = by1 - by0 + 1, bw = bx1 - bx0 + 1;

    // Source depth pattern: true surface depth where the object is visible,
    // its mean elsewhere (the occluded parts' depths belong to the occluder).
    double depth_sum = 0.0;
    std::size_t n_vis = 0;
    for (std::uint32_t px : *src.pixels) {
        if (sample.visible.v[px] == src.category) {
            depth_sum += sample.depth.v[px];
            ++n_vis;
        }
    }
    const float mean_depth = static_cast<float>(depth_sum / static_cast<double>(n_vis));

    const auto& group_map = sample.group_maps[static_cast<std::size_t>(paste_group)];
    for (int attempt = 0; attempt < max_attempts; ++attempt) {
        const int ny0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(h - bh + 1)));
        const int nx0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(w - bw + 1)));
        const int dy = ny0 - by0, dx = nx0 - bx0;
        bool ok = true;
        for (std::uint32_t px : *src.pixels) {
            const int y = static_cast<int>(px) / w + dy, x = static_cast<int>(px) % w + dx;
            const std::size_t q = static_cast<std::size_t>(y) * w + x;
            // Destination must be visible background and free of the group.
            if (schema.group_of(sample.visible.v[q]).first != 0 || group_map.v[q] != 0) {
                ok = false;
                break;
            }
        }
        if (!ok) continue;
        Sample out = sample;
        for (std::uint32_t px : *src.pixels) {
            const int y = static_cast<int>(px) / w, x = static_cast<int>(px) % w;
            const std::size_t q = static_cast<std::size_t>(y + dy) * w + (x + dx);
            out.group_maps[static_cast<std::size_t>(paste_group)].v[q] =
                static_cast<std::uint16_t>(src.within);
            out.visible.v[q] = static_cast<std::uint16_t>(src.category);
            out.depth.v[q] =
                sample.visible.v[px] == src.category ? sample.depth.v[px] : mean_depth;
        }
        return out;
    }
    throw PlacementError("no permitted placement for pasted object after " +
                         std::to_string(max_attempts) + " attempts");
}

nlohmann::ordered_json generate_dataset(const SceneConfig& config, const GroupSchema& schema,
                                        int n_train, int n_test, std::uint64_t seed,
                                        const std::string& out_dir, int threads) {
    if (n_train < 1 || n_test < 1) throw ConfigError("need at least one train and one test sample");
    validate_scene_spec(config.spec, schema);

    const int needed = n_train + n_test;
    struct SceneResult {
        bool ok = false;
        Sample sample;
        std::string reject_reason;
        bool pasted = false;
        bool paste_failed = false;
    };

    std::vector<Sample> accepted;
    accepted.reserve(static_cast<std::size_t>(needed));
    std::uint64_t tried = 0;
    std::map<std::string, std::uint64_t> rejections;
    std::uint64_t paste_applied = 0, paste_failed = 0;
    constexpr std::uint64_t kRateWindow = 200;  // abort checks every this many scenes

    std::uint64_t next_index = 0;
    const std::size_t block = static_cast<std::size_t>(std::max(1, threads)) * 16;
    std::vector<SceneResult> results(block);
    while (static_cast<int>(accepted.size()) < needed) {
        parallel_for(block, threads, [&](std::size_t k) {
            SceneResult& r = results[k];
            r = SceneResult{};
            Rng rng = Rng::stream(seed, next_index + k);
            Sample sample;
            try {
                sample = generate_scene(config.spec, schema, rng);
            } catch (const PlacementError&) {
                r.reject_reason = "placement";
                return;
            }
            if (config.spec.paste_probability > 0 &&
                rng.uniform01() < config.spec.paste_probability) {
                try {
                    sample = augment_paste(sample, schema, config.spec.paste_group, rng,
                                           config.spec.max_place_attempts);
                    r.pasted = true;
                } catch (const PlacementError&) {
                    r.paste_failed = true;  // keep the unaugmented scene
                }
            }
            const AcceptDecision d = accept_scene(sample, config.thresholds, schema);
            if (!d.accepted) {
                r.reject_reason = d.reason;
                return;
            }
            r.ok = true;
            r.sample = std::move(sample);
        });
        next_index += block;
        for (std::size_t k = 0; k < block && static_cast<int>(accepted.size()) < needed; ++k) {
            SceneResult& r = results[k];
            ++tried;
            if (r.pasted) ++paste_applied;
            if (r.paste_failed) ++paste_failed;
            if (r.ok) {
                accepted.push_back(std::move(r.sample));
            } else {
                ++rejections[r.reject_reason];
            }
            if (tried % kRateWindow == 0 &&
                static_cast<double>(accepted.size()) < 0.01 * static_cast<double>(tried)) {
                std::string diag;
                for (const auto& [reason, count] : rejections) {
                    diag += "\n  " + reason + ": " + std::to_string(count);
                }
                throw ConfigError("acceptance rate " + std::to_string(accepted.size()) + "/" +
                                  std::to_string(tried) +
                                  " fell below 1%; rejection reasons:" + diag);
            }
        }
    }

    fs::create_directories(fs::path(out_dir) / "train");
    fs::create_directories(fs::path(out_dir) / "test");
    float depth_scale = 0.0f;
    nlohmann::ordered_json files = nlohmann::ordered_json::array();
    for (int k = 0; k < needed; ++k) {
        const bool is_train = k < n_train;
        char name[64];
        std::snprintf(name, sizeof name, "%s/sample_%05d.gss", is_train ? "train" : "test",
                      is_train ? k : k - n_train);
        write_sample(accepted[static_cast<std::size_t>(k)], (fs::path(out_dir) / name).string());
        files.push_back({{"path", name}, {"split", is_train ? "train" : "test"}});
        for (float d : accepted[static_cast<std::size_t>(k)].depth.v) {
            depth_scale = std::max(depth_scale, d);
        }
    }

    nlohmann::ordered_json manifest;
    manifest["manifest_version"] = 1;
    manifest["seed"] = seed;
    manifest["schema_file"] = "schema.cfg";
    manifest["scene_config_file"] = "scene.cfg";
    manifest["schema_fingerprint"] = schema.fingerprint_hex();
    manifest["counts"] = {{"train", n_train}, {"test", n_test}};
    manifest["depth_scale"] = depth_scale;
    nlohmann::ordered_json gen;
    gen["scenes_tried"] = tried;
    gen["accepted"] = accepted.size();
    gen["rejections"] = nlohmann::ordered_json::object();
    for (const auto& [reason, count] : rejections) gen["rejections"][reason] = count;
    gen["paste_applied"] = paste_applied;
    gen["paste_failed"] = paste_failed;
    manifest["generation"] = std::move(gen);
    manifest["files"] = std::move(files);

    {
        std::ofstream out(fs::path(out_dir) / "schema.cfg", std::ios::binary);
        out << schema.to_config();
    }
    {
        std::ofstream out(fs::path(out_dir) / "scene.cfg", std::ios::binary);
        out << scene_config_to_string(config, schema);
    }
    {
        std::ofstream out(fs::path(out_dir) / "manifest.json", std::ios::binary);
        out << manifest.dump(2) << "\n";
    }
    return manifest;
}

}  // namespace groupseg
