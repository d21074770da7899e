// Copyright (c) 2026 groupseg contributors
// SPDX-License-Identifier: Apache-2.0

#include "groupseg/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "groupseg/errors.hpp"

namespace groupseg {

namespace {

Rgb hsv_to_rgb(double h, double s, double v) {
    const double c = v * s;
    const double hp = h * 6.0;
    const double x = c * (1.0 - std::fabs(std::fmod(hp, 2.0) - 1.0));
    double r = 0, g = 0, b = 0;
    if (hp < 1)      { r = c; g = x; }
    else if (hp < 2) { r = x; g = c; }
    else if (hp < 3) { g = c; b = x; }
    else if (hp < 4) { g = x; b = c; }
    else if (hp < 5) { r = x; b = c; }
    else             { r = c; b = x; }
    const double m = v - c;
    auto q = [m](double t) { return static_cast<std::uint8_t>(std::lround((t + m) * 255.0)); };
    return {q(r), q(g), q(b)};
}

void write_binary(const std::string& path, const std::string& header,
                  const std::uint8_t* data, std::size_t n) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot open '" + path + "' for writing");
    out << header;
    out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n));
    if (!out) throw FormatError("short write to '" + path + "'");
}

}  // namespace

const Rgb& Palette::color_for(int category_id) const {
    if (category_id < 0 || category_id >= static_cast<int>(colors.size()))
        throw ConfigError("palette has no entry for category id " + std::to_string(category_id));
    return colors[static_cast<std::size_t>(category_id)];
}

Palette default_palette(int n_categories) {
    Palette p;
    p.colors.reserve(static_cast<std::size_t>(n_categories));
    std::set<Rgb> used;
    used.insert(p.void_color);  // black stays reserved for void
    for (int c = 0; c < n_categories; ++c) {
        // Golden-ratio hue walk; nudge value until the quantized color is
        // distinct from everything assigned so far.
        double hue = std::fmod(0.1 + c * 0.61803398875, 1.0);
        double value = (c % 2 == 0) ? 0.95 : 0.70;
        Rgb rgb = hsv_to_rgb(hue, 0.78, value);
        while (used.count(rgb)) {
            value = std::max(0.25, value - 0.07);
            rgb = hsv_to_rgb(hue, 0.78, value);
        }
        used.insert(rgb);
        p.colors.push_back(rgb);
    }
    return p;
}

Palette load_palette_config(const std::string& path, const GroupSchema& schema) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open palette config '" + path + "'");
    Palette p;
    p.colors.assign(static_cast<std::size_t>(schema.num_categories()), Rgb{0, 0, 0});
    std::vector<bool> seen(static_cast<std::size_t>(schema.num_categories()), false);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::istringstream ls(line);
        std::string name;
        if (!(ls >> name) || name[0] == '#') continue;
        int r, g, b;
        if (!(ls >> r >> g >> b) || r < 0 || r > 255 || g < 0 || g > 255 || b < 0 || b > 255)
            throw ConfigError(path + ":" + std::to_string(lineno) +
                              ": expected '<category> <r> <g> <b>' with components in 0..255");
        const int c = schema.find_category(name);
        if (c < 0)
            throw ConfigError(path + ":" + std::to_string(lineno) + ": unknown category '" +
                              name + "'");
        p.colors[static_cast<std::size_t>(c)] = {static_cast<std::uint8_t>(r),
                                                 static_cast<std::uint8_t>(g),
                                                 static_cast<std::uint8_t>(b)};
        seen[static_cast<std::size_t>(c)] = true;
    }
    for (int c = 0; c < schema.num_categories(); ++c)
        if (!seen[static_cast<std::size_t>(c)])
            throw ConfigError(path + ": no color for category '" + schema.category_name(c) + "'");
    return p;
}

void export_labelmap_image(const LabelMap& labelmap, const Palette& palette,
                           const std::string& path, int void_id) {
    std::vector<std::uint8_t> rgb(labelmap.size() * 3);
    for (std::size_t i = 0; i < labelmap.size(); ++i) {
        const int id = labelmap[i];
        const Rgb& c = (id == void_id) ? palette.void_color : palette.color_for(id);
        rgb[3 * i + 0] = c[0];
        rgb[3 * i + 1] = c[1];
        rgb[3 * i + 2] = c[2];
    }
    std::ostringstream header;
    header << "P6\n" << labelmap.w << " " << labelmap.h << "\n255\n";
    write_binary(path, header.str(), rgb.data(), rgb.size());
}

void export_groupmap_image(const LabelMap& groupmap, int group, const GroupSchema& schema,
                           const Palette& palette, const std::string& path) {
    LabelMap as_categories(groupmap.h, groupmap.w);
    const std::uint16_t void_marker = 0xFFFF;
    for (std::size_t i = 0; i < groupmap.size(); ++i) {
        const int j = groupmap[i];
        as_categories[i] = (j == 0) ? void_marker
                                    : static_cast<std::uint16_t>(schema.category_of(group, j));
    }
    export_labelmap_image(as_categories, palette, path, void_marker);
}

void export_depth_image(const DepthMap& depth, const std::string& path) {
    float lo = depth.v.empty() ? 0.0f : depth.v[0];
    float hi = lo;
    for (float d : depth.v) {
        lo = std::min(lo, d);
        hi = std::max(hi, d);
    }
    const float span = (hi > lo) ? (hi - lo) : 1.0f;
    std::vector<std::uint8_t> gray(depth.size());
    for (std::size_t i = 0; i < depth.size(); ++i)
        gray[i] = static_cast<std::uint8_t>(std::lround((depth[i] - lo) / span * 255.0f));
    std::ostringstream header;
    header << "P5\n" << depth.w << " " << depth.h << "\n255\n";
    write_binary(path, header.str(), gray.data(), gray.size());
}

std::vector<Rgb> read_ppm(const std::string& path, int& h, int& w) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open image '" + path + "'");
    std::string magic;
    int maxval = 0;
    in >> magic >> w >> h >> maxval;
    if (magic != "P6" || maxval != 255) throw FormatError(path + ": not a P6/255 image");
    in.get();  // single whitespace after header
    std::vector<Rgb> pixels(static_cast<std::size_t>(h) * w);
    in.read(reinterpret_cast<char*>(pixels.data()),
            static_cast<std::streamsize>(pixels.size() * 3));
    if (!in) throw FormatError(path + ": truncated pixel data");
    return pixels;
}

}  // namespace groupseg
