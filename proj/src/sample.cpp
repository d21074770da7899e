// Copyright (c) 2026 groupseg contributors
// SPDX-License-Identifier: Apache-2.0

#include "groupseg/sample.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "groupseg/errors.hpp"

namespace groupseg {

namespace {

constexpr char kMagic[4] = {'G', 'S', 'S', '1'};
constexpr std::size_t kMaxDim = 65535;

static_assert(std::endian::native == std::endian::little,
              "sample serialization assumes a little-endian host");

template <typename T>
void put(std::vector<std::uint8_t>& out, const T& value) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
    out.insert(out.end(), p, p + sizeof(T));
}

template <typename T>
void put_all(std::vector<std::uint8_t>& out, const std::vector<T>& values) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(values.data());
    out.insert(out.end(), p, p + values.size() * sizeof(T));
}

struct Reader {
    const std::vector<std::uint8_t>& bytes;
    std::size_t pos = 0;
    const std::string& origin;

    template <typename T>
    T get() {
        if (pos + sizeof(T) > bytes.size())
            throw FormatError(origin + ": truncated sample file (need " +
                              std::to_string(pos + sizeof(T)) + " bytes, have " +
                              std::to_string(bytes.size()) + ")");
        T value;
        std::memcpy(&value, bytes.data() + pos, sizeof(T));
        pos += sizeof(T);
        return value;
    }

    template <typename T>
    void get_all(std::vector<T>& out) {
        const std::size_t n = out.size() * sizeof(T);
        if (pos + n > bytes.size())
            throw FormatError(origin + ": truncated sample file payload");
        std::memcpy(out.data(), bytes.data() + pos, n);
        pos += n;
    }
};

}  // namespace

void validate_sample(const Sample& sample, const GroupSchema& schema) {
    const int h = sample.height();
    const int w = sample.width();
    const int n_groups = schema.num_groups();
    if (!sample.visible.same_shape(sample.depth))
        throw FormatError("visible map shape differs from depth map");
    if (static_cast<int>(sample.group_maps.size()) != n_groups)
        throw FormatError("sample has " + std::to_string(sample.group_maps.size()) +
                          " group maps, schema expects " + std::to_string(n_groups));
    if (sample.n_categories != 0 && sample.n_categories != schema.num_categories())
        throw FormatError("sample encodes N=" + std::to_string(sample.n_categories) +
                          " categories, schema has N=" + std::to_string(schema.num_categories()));
    for (const auto& m : sample.group_maps)
        if (!m.same_shape(sample.depth)) throw FormatError("group map shape differs from depth map");

    const std::size_t pixels = sample.depth.size();
    for (std::size_t x = 0; x < pixels; ++x) {
        const int c = sample.visible[x];
        if (c >= schema.num_categories())
            throw PlausibilityError("pixel " + std::to_string(x) + ": visible category id " +
                                    std::to_string(c) + " out of range");
        const auto [gi, ji] = schema.group_of(c);
        for (int i = 0; i < n_groups; ++i) {
            const int j = sample.group_maps[i][x];
            if (j > schema.group_size(i))
                throw PlausibilityError("pixel " + std::to_string(x) + ", group '" +
                                        schema.group_name(i) + "': within-group index " +
                                        std::to_string(j) + " out of range");
            if (j == 0 && !schema.group_has_void(i))
                throw PlausibilityError("pixel " + std::to_string(x) + ", group '" +
                                        schema.group_name(i) +
                                        "': void entry in a group without a void slot");
        }
        // The visible surface must be present in its own group map,
        // otherwise p_i(x) <= 1 - q^i_0(x) cannot hold on this data.
        if (sample.group_maps[gi][x] != ji)
            throw PlausibilityError("pixel " + std::to_string(x) + ", group '" +
                                    schema.group_name(gi) + "': visible category '" +
                                    schema.category_name(c) +
                                    "' is missing from its own group map (entry " +
                                    std::to_string(sample.group_maps[gi][x]) + ")");
    }
    (void)h;
    (void)w;
}

RegionSets regions_from_sample(const Sample& sample, const GroupSchema& schema) {
    validate_sample(sample, schema);
    RegionSets r;
    r.h = sample.height();
    r.w = sample.width();
    const int n_cats = schema.num_categories();
    const int n_groups = schema.num_groups();
    r.vis.resize(n_cats);
    r.pres.resize(n_cats);
    r.occ.resize(n_cats);
    r.group_void.resize(n_groups);

    const std::size_t pixels = sample.depth.size();
    for (std::size_t x = 0; x < pixels; ++x) {
        const std::uint32_t px = static_cast<std::uint32_t>(x);
        const int visible_cat = sample.visible[x];
        r.vis[visible_cat].push_back(px);
        for (int i = 0; i < n_groups; ++i) {
            const int j = sample.group_maps[i][x];
            if (j == 0) {
                r.group_void[i].push_back(px);
                continue;
            }
            const int c = schema.category_of(i, j);
            r.pres[c].push_back(px);
            if (c != visible_cat) r.occ[c].push_back(px);
        }
    }
    return r;
}

std::vector<std::uint8_t> serialize_sample(const Sample& sample) {
    const std::size_t h = sample.height();
    const std::size_t w = sample.width();
    if (h == 0 || w == 0 || h > kMaxDim || w > kMaxDim)
        throw FormatError("sample dimensions " + std::to_string(h) + "x" + std::to_string(w) +
                          " outside [1, 65535]");
    if (sample.group_maps.size() > kMaxDim)
        throw FormatError("too many group maps");

    std::vector<std::uint8_t> out;
    out.reserve(12 + h * w * (4 + 2 + 2 * sample.group_maps.size()));
    out.insert(out.end(), kMagic, kMagic + 4);
    put<std::uint16_t>(out, static_cast<std::uint16_t>(h));
    put<std::uint16_t>(out, static_cast<std::uint16_t>(w));
    put<std::uint16_t>(out, static_cast<std::uint16_t>(sample.group_maps.size()));
    put<std::uint16_t>(out, sample.n_categories);
    put_all(out, sample.depth.v);
    put_all(out, sample.visible.v);
    for (const auto& m : sample.group_maps) put_all(out, m.v);
    return out;
}

Sample deserialize_sample(const std::vector<std::uint8_t>& bytes, const std::string& origin) {
    Reader rd{bytes, 0, origin};
    char magic[4];
    for (char& ch : magic) ch = rd.get<char>();
    if (std::memcmp(magic, kMagic, 4) != 0)
        throw FormatError(origin + ": bad magic, not a sample file");
    const int h = rd.get<std::uint16_t>();
    const int w = rd.get<std::uint16_t>();
    const int n_maps = rd.get<std::uint16_t>();
    const std::uint16_t n_categories = rd.get<std::uint16_t>();
    if (h == 0 || w == 0) throw FormatError(origin + ": zero dimension");

    Sample s;
    s.n_categories = n_categories;
    s.depth = DepthMap(h, w);
    s.visible = LabelMap(h, w);
    rd.get_all(s.depth.v);
    rd.get_all(s.visible.v);
    s.group_maps.resize(n_maps);
    for (auto& m : s.group_maps) {
        m = LabelMap(h, w);
        rd.get_all(m.v);
    }
    if (rd.pos != bytes.size())
        throw FormatError(origin + ": " + std::to_string(bytes.size() - rd.pos) +
                          " trailing bytes after sample payload");
    return s;
}

void write_sample(const Sample& sample, const std::string& path) {
    const auto bytes = serialize_sample(sample);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot open '" + path + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError("short write to '" + path + "'");
}

Sample read_sample(const std::string& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw ConfigError("cannot open sample file '" + path + "'");
    const auto size = static_cast<std::size_t>(in.tellg());
    in.seekg(0);
    std::vector<std::uint8_t> bytes(size);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size));
    if (!in) throw FormatError("failed reading '" + path + "'");
    return deserialize_sample(bytes, path);
}

}  // namespace groupseg
