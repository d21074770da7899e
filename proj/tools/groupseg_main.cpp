// Copyright (c) 2026 groupseg contributors
// SPDX-License-Identifier: Apache-2.0
//
// Batch CLI: `groupseg gen|train|eval|render`. All experiment state lives
// in files; a run_manifest.json lands next to every command's outputs.
// Exit codes: 0 success, 1 usage or config error, 2 runtime failure.

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "groupseg/dataset.hpp"
#include "groupseg/errors.hpp"
#include "groupseg/head.hpp"
#include "groupseg/image.hpp"
#include "groupseg/metrics.hpp"
#include "groupseg/net.hpp"
#include "groupseg/sample.hpp"
#include "groupseg/scenegen.hpp"
#include "groupseg/schema.hpp"

namespace {

constexpr const char* kToolVersion = "1.0.0";

using namespace groupseg;

int default_threads() {
    const unsigned n = std::thread::hardware_concurrency();
    return n == 0 ? 1 : static_cast<int>(n);
}

std::string utc_now() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%04d-%02d-%02dT%02d:%02d:%02dZ", tm.tm_year + 1900,
                  tm.tm_mon + 1, tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec);
    return buf;
}

// The run manifest is the one artifact that may differ between identical
// reruns (it records wall-clock); everything else must be byte-stable.
struct ManifestWriter {
    nlohmann::ordered_json j;
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();

    ManifestWriter(const std::string& command, int argc, char** argv) {
        j["command"] = command;
        j["argv"] = nlohmann::ordered_json::array();
        for (int i = 0; i < argc; ++i) j["argv"].push_back(argv[i]);
        j["tool_version"] = kToolVersion;
        j["started_utc"] = utc_now();
        j["configs"] = nlohmann::ordered_json::object();
        j["outputs"] = nlohmann::ordered_json::array();
    }

    void config(const std::string& key, const std::string& path) { j["configs"][key] = path; }
    void output(const std::string& path) { j["outputs"].push_back(path); }

    void write(const std::string& out_dir) {
        const double elapsed =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        j["elapsed_seconds"] = elapsed;
        std::ofstream f(out_dir + "/run_manifest.json");
        if (!f) throw std::runtime_error("cannot write " + out_dir + "/run_manifest.json");
        f << j.dump(2) << "\n";
    }
};

struct GenArgs {
    std::string schema_path, scene_path, out_dir;
    int scenes = 600;
    double test_fraction = 1.0 / 6.0;
    int train_count = -1, test_count = -1;  // override --scenes when both set
    std::uint64_t seed = 0;
    int threads = default_threads();
};

int cmd_gen(const GenArgs& a, int argc, char** argv) {
    ManifestWriter manifest("gen", argc, argv);
    manifest.config("schema", a.schema_path);
    manifest.config("scene", a.scene_path);
    manifest.j["seed"] = a.seed;

    int n_train = a.train_count, n_test = a.test_count;
    if (n_train < 0 || n_test < 0) {
        if (a.scenes < 2) throw ConfigError("--scenes must be at least 2");
        if (!(a.test_fraction > 0.0 && a.test_fraction < 1.0)) {
            throw ConfigError("--test-fraction must be in (0, 1)");
        }
        n_test = std::max(1, static_cast<int>(std::lround(a.scenes * a.test_fraction)));
        n_train = a.scenes - n_test;
        if (n_train < 1) throw ConfigError("--scenes/--test-fraction leave no training samples");
    }

    const GroupSchema schema = load_schema_config(a.schema_path);
    const SceneConfig scene = load_scene_config(a.scene_path, schema);

    std::filesystem::create_directories(a.out_dir);
    generate_dataset(scene, schema, n_train, n_test, a.seed, a.out_dir, a.threads);

    manifest.j["counts"] = {{"train", n_train}, {"test", n_test}};
    manifest.output(a.out_dir + "/manifest.json");
    manifest.output(a.out_dir + "/schema.cfg");
    manifest.output(a.out_dir + "/scene.cfg");
    manifest.write(a.out_dir);
    std::cout << "generated " << n_train << " train + " << n_test << " test samples in "
              << a.out_dir << "\n";
    return 0;
}

struct TrainArgs {
    std::string data_dir, out_dir, mode = "gss";
    int width = 16, levels = 3;
    TrainConfig tc;
    bool resume = false;
};

int cmd_train(const TrainArgs& a, int argc, char** argv) {
    ManifestWriter manifest("train", argc, argv);
    manifest.config("data", a.data_dir);
    manifest.j["seed"] = a.tc.seed;
    manifest.j["mode"] = a.mode;

    const Dataset dataset = load_dataset(a.data_dir, a.tc.threads);

    ModelConfig mc;
    mc.width = a.width;
    mc.levels = a.levels;
    mc.head = a.mode == "dss" ? HeadMode::Flat : HeadMode::Grouped;

    const TrainResult result = train(dataset, mc, a.tc, a.out_dir, a.resume);

    manifest.output(a.out_dir + "/checkpoint.gssm");
    manifest.output(a.out_dir + "/history.jsonl");
    manifest.write(a.out_dir);
    if (!result.history.empty()) {
        const EpochRecord& last = result.history.back();
        std::cout << "epoch " << last.epoch << ": train_loss " << last.train_loss
                  << ", val_pa_vis " << last.val_pa_vis << "\n";
    } else {
        std::cout << "checkpoint already at " << a.tc.epochs << " epochs; nothing to do\n";
    }
    return 0;
}

struct EvalArgs {
    std::string data_dir, out_dir, checkpoint, split = "test", pooling = "max";
    bool oracle = false;
    int threads = default_threads();
};

PredictionOutput oracle_prediction(const Sample& sample, const GroupSchema& schema) {
    const RegionSets regions = regions_from_sample(sample, schema);
    PredictionOutput out;
    out.masks.h = sample.height();
    out.masks.w = sample.width();
    out.masks.vis = sample.visible;
    out.masks.pres.assign(static_cast<std::size_t>(schema.num_categories()),
                          std::vector<std::uint8_t>(regions.pixel_count(), 0));
    for (int c = 0; c < schema.num_categories(); ++c) {
        for (std::uint32_t px : regions.pres[static_cast<std::size_t>(c)]) {
            out.masks.pres[static_cast<std::size_t>(c)][px] = 1;
        }
    }
    return out;
}

int cmd_eval(const EvalArgs& a, int argc, char** argv) {
    if (a.oracle != a.checkpoint.empty()) {
        // exactly one prediction source
        throw ConfigError("eval needs --checkpoint or --oracle (not both)");
    }
    ManifestWriter manifest("eval", argc, argv);
    manifest.config("data", a.data_dir);

    const Dataset dataset = load_dataset(a.data_dir, a.threads);
    const std::vector<Sample>& split = a.split == "train" ? dataset.train : dataset.test;
    if (split.empty()) throw ConfigError("split '" + a.split + "' is empty");

    const VoidPooling pooling = a.pooling == "sum" ? VoidPooling::Sum : VoidPooling::Max;

    Predictor predictor;
    Model<float> model;
    if (a.oracle) {
        predictor = [&](const Sample& sample, std::size_t) {
            return oracle_prediction(sample, dataset.schema);
        };
    } else {
        manifest.config("checkpoint", a.checkpoint);
        Checkpoint ck = load_checkpoint(a.checkpoint);
        if (ck.model.schema_fingerprint != dataset.schema.fingerprint()) {
            throw ConfigError("checkpoint '" + a.checkpoint +
                              "' does not match the dataset schema (fingerprint mismatch)");
        }
        model = std::move(ck.model);
        predictor = [&](const Sample& sample, std::size_t) {
            const Tensor<float> logits = infer(model, sample, dataset.depth_scale);
            if (model.config.head == HeadMode::Grouped) {
                return prediction_from_gss(grouped_softmax(logits, dataset.schema),
                                           dataset.schema);
            }
            return prediction_from_dss(flat_softmax(logits), dataset.schema, pooling);
        };
    }

    EvalOptions options;
    options.threads = a.threads;
    const EvalReport report = evaluate(predictor, split, dataset.schema, options);

    std::filesystem::create_directories(a.out_dir);
    const std::string report_path = a.out_dir + "/report.json";
    {
        std::ofstream f(report_path);
        if (!f) throw std::runtime_error("cannot write " + report_path);
        f << report.to_json().dump(2) << "\n";
    }
    manifest.output(report_path);
    manifest.write(a.out_dir);
    std::cout << "evaluated " << report.samples << " samples: PA_vis "
              << report.vis_without.pa_literal << ", MIoU_pres(void) " << report.pres_with.miou
              << " -> " << report_path << "\n";
    return 0;
}

struct RenderArgs {
    std::string sample_path, schema_path, out_dir, checkpoint, palette_path, pooling = "max";
};

// Per-group present map (within indices) from possibly-overlapping masks;
// the lowest within index wins if a pixel is claimed twice.
LabelMap groupmap_from_masks(const PredictionMasks& masks, const GroupSchema& schema, int group) {
    LabelMap map(masks.h, masks.w, 0);
    for (int j = schema.group_size(group); j >= 1; --j) {
        const int c = schema.category_of(group, j);
        const auto& mask = masks.pres[static_cast<std::size_t>(c)];
        for (std::size_t px = 0; px < mask.size(); ++px) {
            if (mask[px]) map[px] = static_cast<std::uint16_t>(j);
        }
    }
    return map;
}

int cmd_render(const RenderArgs& a, int argc, char** argv) {
    ManifestWriter manifest("render", argc, argv);
    manifest.config("sample", a.sample_path);
    manifest.config("schema", a.schema_path);

    const GroupSchema schema = load_schema_config(a.schema_path);
    const Sample sample = read_sample(a.sample_path);
    validate_sample(sample, schema);

    const Palette palette = a.palette_path.empty()
                                ? default_palette(schema.num_categories())
                                : load_palette_config(a.palette_path, schema);
    if (!a.palette_path.empty()) manifest.config("palette", a.palette_path);

    std::filesystem::create_directories(a.out_dir);
    auto emit = [&](const std::string& name) {
        manifest.output(a.out_dir + "/" + name);
        return a.out_dir + "/" + name;
    };

    export_depth_image(sample.depth, emit("depth.pgm"));
    if (a.checkpoint.empty()) {
        export_labelmap_image(sample.visible, palette, emit("visible.ppm"));
        for (int i = 0; i < schema.num_groups(); ++i) {
            export_groupmap_image(sample.group_maps[static_cast<std::size_t>(i)], i, schema,
                                  palette, emit("group_" + std::to_string(i) + ".ppm"));
        }
    } else {
        manifest.config("checkpoint", a.checkpoint);
        Checkpoint ck = load_checkpoint(a.checkpoint);
        if (ck.model.schema_fingerprint != schema.fingerprint()) {
            throw ConfigError("checkpoint '" + a.checkpoint +
                              "' does not match the schema (fingerprint mismatch)");
        }
        // Depth scale is not stored in the checkpoint; normalize by the
        // sample's own max to stay self-contained.
        float scale = 0.0f;
        for (float d : sample.depth.v) scale = std::max(scale, d);
        if (scale <= 0.0f) scale = 1.0f;
        const Tensor<float> logits = infer(ck.model, sample, scale);
        const PredictionMasks masks =
            ck.model.config.head == HeadMode::Grouped
                ? masks_from_gss(grouped_softmax(logits, schema), schema)
                : masks_from_dss(flat_softmax(logits), schema,
                                 a.pooling == "sum" ? VoidPooling::Sum : VoidPooling::Max);
        export_labelmap_image(masks.vis, palette, emit("visible.ppm"));
        for (int i = 0; i < schema.num_groups(); ++i) {
            export_groupmap_image(groupmap_from_masks(masks, schema, i), i, schema, palette,
                                  emit("group_" + std::to_string(i) + ".ppm"));
        }
    }

    manifest.write(a.out_dir);
    std::cout << "rendered " << (schema.num_groups() + 2) << " images to " << a.out_dir << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Grouped amodal segmentation toolkit"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kToolVersion);

    GenArgs gen;
    CLI::App* cgen = app.add_subcommand("gen", "Generate a synthetic layered-scene dataset");
    cgen->add_option("--schema", gen.schema_path, "Schema config file")->required();
    cgen->add_option("--scene", gen.scene_path, "Scene config file")->required();
    cgen->add_option("--out", gen.out_dir, "Output dataset directory")->required();
    cgen->add_option("--scenes", gen.scenes, "Total samples (train + test)");
    cgen->add_option("--test-fraction", gen.test_fraction, "Fraction of --scenes for test");
    cgen->add_option("--train", gen.train_count, "Explicit train count (with --test)");
    cgen->add_option("--test", gen.test_count, "Explicit test count (with --train)");
    cgen->add_option("--seed", gen.seed, "Generation seed");
    cgen->add_option("--threads", gen.threads, "Worker cap");

    TrainArgs tr;
    CLI::App* ctrain = app.add_subcommand("train", "Train a model on a generated dataset");
    ctrain->add_option("--data", tr.data_dir, "Dataset directory")->required();
    ctrain->add_option("--out", tr.out_dir, "Output directory")->required();
    ctrain->add_option("--mode", tr.mode, "dss (flat baseline) or gss (grouped)")
        ->check(CLI::IsMember({"dss", "gss"}));
    ctrain->add_option("--width", tr.width, "Channels at full resolution");
    ctrain->add_option("--levels", tr.levels, "Encoder stages");
    ctrain->add_option("--epochs", tr.tc.epochs, "Total epochs (resume target included)");
    ctrain->add_option("--batch", tr.tc.batch, "Batch size");
    ctrain->add_option("--lr", tr.tc.lr, "Initial learning rate");
    ctrain->add_option("--lr-decay", tr.tc.lr_decay, "Staircase decay factor");
    ctrain->add_option("--lr-step", tr.tc.lr_step_epochs, "Epochs per decay step");
    ctrain->add_option("--weight-decay", tr.tc.weight_decay, "Decoupled weight decay");
    ctrain->add_option("--lambda", tr.tc.lambda, "Occlusion/void supervision weight");
    ctrain->add_option("--seed", tr.tc.seed, "Init/shuffle seed");
    ctrain->add_option("--threads", tr.tc.threads, "Worker cap")->default_val(default_threads());
    ctrain->add_flag("--resume", tr.resume, "Continue from the checkpoint in --out");

    EvalArgs ev;
    CLI::App* ceval = app.add_subcommand("eval", "Evaluate a checkpoint (or the ground truth)");
    ceval->add_option("--data", ev.data_dir, "Dataset directory")->required();
    ceval->add_option("--out", ev.out_dir, "Output directory for report.json")->required();
    ceval->add_option("--checkpoint", ev.checkpoint, "Model checkpoint");
    ceval->add_flag("--oracle", ev.oracle, "Score the ground truth against itself");
    ceval->add_option("--split", ev.split, "Which split to score")
        ->check(CLI::IsMember({"train", "test"}));
    ceval->add_option("--pooling", ev.pooling, "Void pooling for flat-head present sets")
        ->check(CLI::IsMember({"max", "sum"}));
    ceval->add_option("--threads", ev.threads, "Worker cap");

    RenderArgs rn;
    CLI::App* crender = app.add_subcommand("render", "Export sample or prediction images");
    crender->add_option("--sample", rn.sample_path, "Sample file (.gss)")->required();
    crender->add_option("--schema", rn.schema_path, "Schema config file")->required();
    crender->add_option("--out", rn.out_dir, "Output directory")->required();
    crender->add_option("--checkpoint", rn.checkpoint, "Render this model's prediction instead");
    crender->add_option("--palette", rn.palette_path, "Palette config (name r g b per line)");
    crender->add_option("--pooling", rn.pooling, "Void pooling for flat-head present sets")
        ->check(CLI::IsMember({"max", "sum"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    try {
        if (cgen->parsed()) return cmd_gen(gen, argc, argv);
        if (ctrain->parsed()) return cmd_train(tr, argc, argv);
        if (ceval->parsed()) return cmd_eval(ev, argc, argv);
        if (crender->parsed()) return cmd_render(rn, argc, argv);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
