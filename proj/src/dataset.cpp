// Copyright (c) 2026 groupseg contributors
// SPDX-License-Identifier: Apache-2.0

#include "groupseg/dataset.hpp"

#include <filesystem>
#include <fstream>

#include "groupseg/errors.hpp"
#include "groupseg/parallel.hpp"

namespace groupseg {

namespace fs = std::filesystem;

Dataset load_dataset(const std::string& dir, int threads) {
    const fs::path root(dir);
    std::ifstream in(root / "manifest.json", std::ios::binary);
    if (!in) throw ConfigError("cannot open dataset manifest '" + (root / "manifest.json").string() + "'");

    Dataset ds;
    try {
        ds.manifest = nlohmann::ordered_json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError("malformed dataset manifest: " + std::string(e.what()));
    }
    if (ds.manifest.value("manifest_version", 0) != 1) {
        throw FormatError("unsupported manifest_version in '" + dir + "'");
    }
    const std::string schema_file = ds.manifest.value("schema_file", "");
    if (schema_file.empty()) throw FormatError("manifest lacks schema_file");
    ds.schema = load_schema_config((root / schema_file).string());
    const std::string want_fp = ds.manifest.value("schema_fingerprint", "");
    if (want_fp != ds.schema.fingerprint_hex()) {
        throw FormatError("schema fingerprint mismatch: manifest says " + want_fp + ", '" +
                          schema_file + "' hashes to " + ds.schema.fingerprint_hex());
    }
    const double scale = ds.manifest.value("depth_scale", 0.0);
    if (!(scale > 0)) throw FormatError("manifest depth_scale must be positive");
    ds.depth_scale = static_cast<float>(scale);

    if (!ds.manifest.contains("files") || !ds.manifest["files"].is_array()) {
        throw FormatError("manifest lacks a files array");
    }
    const auto& files = ds.manifest["files"];
    std::vector<Sample> samples(files.size());
    std::vector<int> split(files.size());  // 0 train, 1 test
    std::vector<std::string> paths(files.size());
    for (std::size_t k = 0; k < files.size(); ++k) {
        const auto& entry = files[k];
        paths[k] = entry.value("path", "");
        const std::string tag = entry.value("split", "");
        if (paths[k].empty() || (tag != "train" && tag != "test")) {
            throw FormatError("manifest files[" + std::to_string(k) +
                              "] needs a path and a train|test split");
        }
        split[k] = tag == "test";
    }
    parallel_for(files.size(), threads, [&](std::size_t k) {
        samples[k] = read_sample((root / paths[k]).string());
        validate_sample(samples[k], ds.schema);
    });
    for (std::size_t k = 0; k < samples.size(); ++k) {
        (split[k] ? ds.test : ds.train).push_back(std::move(samples[k]));
    }
    return ds;
}

}  // namespace groupseg
