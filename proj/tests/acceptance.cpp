// Copyright (c) 2026 groupseg contributors
// SPDX-License-Identifier: Apache-2.0
//
// Acceptance gate: ten go/no-go checks over the assembled system, run in
// order with exactly one [PASS]/[FAIL] line each. The exit code is the
// number of failed checks. Checks 8 and 9 share one desk-scale training
// run (the only slow part; everything else stays in seconds).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include "groupseg/dataset.hpp"
#include "groupseg/errors.hpp"
#include "groupseg/head.hpp"
#include "groupseg/metrics.hpp"
#include "groupseg/net.hpp"
#include "groupseg/rng.hpp"
#include "groupseg/sample.hpp"
#include "groupseg/scenegen.hpp"
#include "groupseg/schema.hpp"
#include "groupseg/tensor.hpp"
#include "oracles.hpp"

using namespace groupseg;
namespace fs = std::filesystem;

namespace {

const fs::path kBase = fs::temp_directory_path() / "groupseg_acceptance";

int hw_threads() {
    const unsigned n = std::thread::hardware_concurrency();
    return n == 0 ? 1 : static_cast<int>(n);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string sci(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2e", v);
    return buf;
}

std::string fixed3(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return buf;
}

struct Check {
    bool pass = false;
    std::string detail;
};

GroupSchema six_cat_schema() {
    return build_schema({{"bg", {"a", "b"}}, {"mid", {"c"}}, {"top", {"d", "e", "f"}}});
}

std::vector<std::uint8_t> slurp_bytes(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return {};
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::map<std::string, std::vector<std::uint8_t>> tree_bytes(const fs::path& root) {
    std::map<std::string, std::vector<std::uint8_t>> out;
    for (const auto& entry : fs::recursive_directory_iterator(root)) {
        if (!entry.is_regular_file()) continue;
        out[fs::relative(entry.path(), root).string()] = slurp_bytes(entry.path());
    }
    return out;
}

// The desk-scale benchmark scene: one horizon split, 1-3 boxes and 1-3
// blobs per scene, every category with its own shape-kind/size signature
// so appearance determines identity, and a 25% duplicate-paste rate to
// guarantee cross-group occlusion.
SceneConfig desk_scene(int side) {
    SceneConfig cfg;
    cfg.spec.h = side;
    cfg.spec.w = side;
    cfg.spec.horizon = {0.5};
    cfg.spec.counts = {{0, 0}, {1, 3}, {1, 3}};
    cfg.spec.shapes.assign(8, ShapeSpec{ShapeSpec::Kind::Rectangle, 0.12, 0.22});  // crate
    cfg.spec.shapes[3] = {ShapeSpec::Kind::Rectangle, 0.30, 0.45};                 // cabinet
    cfg.spec.shapes[4] = {ShapeSpec::Kind::Triangle, 0.30, 0.45};                  // panel
    cfg.spec.shapes[5] = {ShapeSpec::Kind::Ellipse, 0.12, 0.22};                   // ball
    cfg.spec.shapes[6] = {ShapeSpec::Kind::Triangle, 0.12, 0.22};                  // cone
    cfg.spec.shapes[7] = {ShapeSpec::Kind::Ellipse, 0.30, 0.45};                   // pillow
    cfg.spec.paste_probability = 0.25;
    cfg.spec.paste_group = 1;
    return cfg;
}

// ---- 1: analytic loss gradients vs central finite differences --------------

Check check_loss_gradients() {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng = Rng::stream(101, 0);
    const std::vector<GroupSchema> schemas = {
        toy_schema(), six_cat_schema(),
        build_schema({{"bg", {"a", "b"}}, {"mid", {"c"}}, {"top", {"d", "e", "f"}}}, true),
        build_schema({{"room", {"w"}}, {"obj", {"x", "y"}}})};

    double worst_flat = 0.0, worst_grouped = 0.0;
    int instances = 0;
    for (int it = 0; it < 60; ++it) {
        const GroupSchema& s = schemas[static_cast<std::size_t>(it) % schemas.size()];
        const int h = 1 + static_cast<int>(rng.below(3));
        const int w = 1 + static_cast<int>(rng.below(3));
        const Sample sample = oracle::random_sample(s, h, w, rng);
        const RegionSets regions = regions_from_sample(sample, s);

        Tensor<double> zf = oracle::random_logits(s.num_categories(), h, w, rng);
        const LossValue<double> lf = loss_ce(zf, sample.visible, s);
        const std::vector<double> fdf = oracle::finite_diff(
            [&](const std::vector<double>& x) {
                Tensor<double> t = zf;
                t.v = x;
                return loss_ce(t, sample.visible, s).loss;
            },
            zf.v);
        worst_flat = std::max(worst_flat, oracle::max_rel_error(lf.grad.v, fdf, 1e-8));

        Tensor<double> zg = oracle::random_logits(s.activation_count(), h, w, rng);
        const LossValue<double> lg = loss_grouped(zg, regions, s, 0.1);
        const std::vector<double> fdg = oracle::finite_diff(
            [&](const std::vector<double>& x) {
                Tensor<double> t = zg;
                t.v = x;
                return loss_grouped(t, regions, s, 0.1).loss;
            },
            zg.v);
        worst_grouped = std::max(worst_grouped, oracle::max_rel_error(lg.grad.v, fdg, 1e-8));
        ++instances;
    }
    const double secs = seconds_since(t0);
    const bool ok = instances >= 50 && worst_flat < 1e-4 && worst_grouped < 1e-4 && secs < 10.0;
    return {ok, std::to_string(instances) + " instances, max rel err flat " + sci(worst_flat) +
                    " grouped " + sci(worst_grouped)};
}

// ---- 2: end-to-end network gradients --------------------------------------

Check check_network_gradients() {
    const auto t0 = std::chrono::steady_clock::now();
    const GroupSchema schema = toy_schema();
    Rng rng = Rng::stream(102, 0);
    Tensor<double> input(1, 8, 8);
    for (auto& x : input.v) x = rng.uniform(0.1, 1.0);
    const Sample s = oracle::random_sample(schema, 8, 8, rng);
    const RegionSets regions = regions_from_sample(s, schema);

    double worst = 0.0;
    int probes = 0;
    for (const HeadMode head : {HeadMode::Flat, HeadMode::Grouped}) {
        ModelConfig mc;
        mc.width = 4;
        mc.levels = 2;
        mc.head = head;
        auto model = build_model<double>(mc, schema, 17);
        const auto loss_of = [&]() {
            const Tensor<double> logits = forward(model, input);
            return head == HeadMode::Flat ? loss_ce(logits, s.visible, schema).loss
                                          : loss_grouped(logits, regions, schema, 0.1).loss;
        };

        Workspace<double> ws;
        const Tensor<double> logits = forward(model, input, &ws);
        const LossValue<double> lv = head == HeadMode::Flat
                                         ? loss_ce(logits, s.visible, schema)
                                         : loss_grouped(logits, regions, schema, 0.1);
        auto grads = zero_grads(model);
        backward(model, ws, lv.grad, grads);

        for (std::size_t b = 0; b < model.convs.size(); ++b) {
            auto probe = [&](std::vector<double>& param, const std::vector<double>& analytic,
                             int count) {
                for (int t = 0; t < count; ++t) {
                    const std::size_t i = rng.below(param.size());
                    const double save = param[i];
                    const double eps = 1e-5 * std::max(1.0, std::abs(save));
                    param[i] = save + eps;
                    const double hi = loss_of();
                    param[i] = save - eps;
                    const double lo = loss_of();
                    param[i] = save;
                    const double fd = (hi - lo) / (2.0 * eps);
                    const double rel = std::abs(fd - analytic[i]) /
                                       std::max({1e-6, std::abs(fd), std::abs(analytic[i])});
                    worst = std::max(worst, rel);
                    ++probes;
                }
            };
            probe(model.convs[b].w, grads.convs[b].w, 6);
            probe(model.convs[b].b, grads.convs[b].b, 2);
        }
    }
    const double secs = seconds_since(t0);
    const bool ok = worst < 1e-3 && secs < 60.0;
    return {ok, std::to_string(probes) + " sampled parameters, max rel err " + sci(worst)};
}

// ---- 3: blockwise normalization and shift invariance -----------------------

Check check_block_normalization() {
    Rng rng = Rng::stream(103, 0);
    double worst_sum = 0.0, worst_shift = 0.0;
    std::size_t pixels = 0;
    for (const GroupSchema& s : {toy_schema(), six_cat_schema()}) {
        const BlockLayout layout = BlockLayout::of(s);
        for (int it = 0; it < 50; ++it) {
            const int h = 10, w = 10;
            const std::size_t hw = static_cast<std::size_t>(h) * w;
            const Tensor<double> z = oracle::random_logits(layout.total, h, w, rng);
            const GroupedPrediction<double> pred = grouped_softmax(z, s);

            auto block_sum = [&](int offset, int dim, std::size_t px) {
                double sum = 0.0;
                for (int k = 0; k < dim; ++k) {
                    sum += pred.probs.v[static_cast<std::size_t>(offset + k) * hw + px];
                }
                return sum;
            };
            for (std::size_t px = 0; px < hw; ++px) {
                worst_sum = std::max(worst_sum,
                                     std::abs(block_sum(layout.p_offset, layout.p_dim, px) - 1.0));
                for (int g = 0; g < s.num_groups(); ++g) {
                    worst_sum = std::max(
                        worst_sum, std::abs(block_sum(layout.q_offset[static_cast<std::size_t>(g)],
                                                      layout.q_dim[static_cast<std::size_t>(g)],
                                                      px) -
                                            1.0));
                }
            }

            // Per-pixel, per-block constant shifts must not move the output.
            Tensor<double> shifted = z;
            auto shift_block = [&](int offset, int dim, std::size_t px, double c) {
                for (int k = 0; k < dim; ++k) {
                    shifted.v[static_cast<std::size_t>(offset + k) * hw + px] += c;
                }
            };
            for (std::size_t px = 0; px < hw; ++px) {
                shift_block(layout.p_offset, layout.p_dim, px, rng.uniform(-7.0, 7.0));
                for (int g = 0; g < s.num_groups(); ++g) {
                    shift_block(layout.q_offset[static_cast<std::size_t>(g)],
                                layout.q_dim[static_cast<std::size_t>(g)], px,
                                rng.uniform(-7.0, 7.0));
                }
            }
            const GroupedPrediction<double> pred2 = grouped_softmax(shifted, s);
            for (std::size_t i = 0; i < pred.probs.v.size(); ++i) {
                worst_shift = std::max(worst_shift, std::abs(pred2.probs.v[i] - pred.probs.v[i]));
            }
            pixels += hw;
        }
    }
    const bool ok = pixels >= 10000 && worst_sum <= 1e-6 && worst_shift <= 1e-9;
    return {ok, std::to_string(pixels) + " pixels, max |sum-1| " + sci(worst_sum) +
                    ", max shift drift " + sci(worst_shift)};
}

// ---- 4: activation-count arithmetic ----------------------------------------

Check check_activation_count() {
    Rng rng = Rng::stream(104, 0);
    int checked = 0;
    std::string bad;
    for (int it = 0; it < 100 && bad.empty(); ++it) {
        const int m1 = 1 + static_cast<int>(rng.below(6));
        std::vector<GroupSpec> gs;
        int n = 0;
        for (int i = 0; i < m1; ++i) {
            GroupSpec g;
            g.name = "g" + std::to_string(i);
            const int size = 1 + static_cast<int>(rng.below(5));
            for (int j = 0; j < size; ++j) g.categories.push_back(g.name + "c" + std::to_string(j));
            n += size;
            gs.push_back(std::move(g));
        }
        const GroupSchema s = build_schema(gs, true);  // a void slot in every group
        if (s.activation_count() != 2 * m1 + n) {
            bad = "schema with " + std::to_string(m1) + " groups / " + std::to_string(n) +
                  " categories gave " + std::to_string(s.activation_count());
        }
        ++checked;
    }
    const int indoor = reference_indoor_schema(true).activation_count();
    const bool ok = bad.empty() && indoor == 46;
    return {ok, bad.empty() ? std::to_string(checked) +
                                  " random all-void schemas = 2(M+1)+N, indoor reference " +
                                  std::to_string(indoor)
                            : bad};
}

// ---- 5: metrics vs brute-force set enumeration ------------------------------

Check check_metric_enumeration() {
    const auto t0 = std::chrono::steady_clock::now();
    const GroupSchema s = six_cat_schema();  // 6 categories in 3 groups

    // Every single-pixel ground-truth state: bg has no void (values 1-2),
    // mid 0-1, top 0-3; the visible surface ranges over the present layers.
    std::vector<Sample> gts;
    for (int bg = 1; bg <= 2; ++bg) {
        for (int mid = 0; mid <= 1; ++mid) {
            for (int top = 0; top <= 3; ++top) {
                std::vector<int> present = {s.category_of(0, bg)};
                if (mid > 0) present.push_back(s.category_of(1, mid));
                if (top > 0) present.push_back(s.category_of(2, top));
                for (int vis : present) {
                    Sample smp;
                    smp.depth = DepthMap(1, 1, 1.0f);
                    smp.visible = LabelMap(1, 1, static_cast<std::uint16_t>(vis));
                    smp.group_maps = {LabelMap(1, 1, static_cast<std::uint16_t>(bg)),
                                      LabelMap(1, 1, static_cast<std::uint16_t>(mid)),
                                      LabelMap(1, 1, static_cast<std::uint16_t>(top))};
                    smp.n_categories = 6;
                    gts.push_back(std::move(smp));
                }
            }
        }
    }

    // Every single-pixel prediction: 6 visible labels x 2^6 present sets.
    std::vector<PredictionMasks> preds;
    for (int vis = 0; vis < 6; ++vis) {
        for (int bits = 0; bits < 64; ++bits) {
            PredictionMasks m;
            m.h = m.w = 1;
            m.vis = LabelMap(1, 1, static_cast<std::uint16_t>(vis));
            m.pres.assign(6, std::vector<std::uint8_t>(1, 0));
            for (int c = 0; c < 6; ++c) m.pres[static_cast<std::size_t>(c)][0] = (bits >> c) & 1;
            preds.push_back(std::move(m));
        }
    }

    int pairs = 0;
    std::string mismatch;
    for (const Sample& gt : gts) {
        for (const PredictionMasks& m : preds) {
            if (mismatch.empty()) mismatch = oracle::metrics_mismatch(gt, m, s);
            ++pairs;
        }
    }

    // Random sweeps of every image size up to 4x4.
    Rng rng = Rng::stream(105, 0);
    int instances = 0;
    for (int h = 1; h <= 4; ++h) {
        for (int w = 1; w <= 4; ++w) {
            for (int rep = 0; rep < 8; ++rep) {
                const Sample smp = oracle::random_sample(s, h, w, rng);
                const PredictionMasks m = oracle::random_masks(s, h, w, rng);
                if (mismatch.empty()) mismatch = oracle::metrics_mismatch(smp, m, s);
                ++instances;
            }
        }
    }
    const double secs = seconds_since(t0);
    const bool ok = mismatch.empty() && pairs == 36 * 384 && instances == 128 && secs < 30.0;
    return {ok, mismatch.empty() ? std::to_string(pairs) + " exhaustive single-pixel pairs + " +
                                       std::to_string(instances) + " random multi-pixel instances"
                                 : mismatch};
}

// ---- 6: visible derivation and one-hot round trips --------------------------

Check check_visible_derivation() {
    Rng rng = Rng::stream(106, 0);
    const std::vector<GroupSchema> schemas = {toy_schema(), six_cat_schema()};
    std::string bad;
    int derivations = 0;
    for (int it = 0; it < 1000 && bad.empty(); ++it) {
        const GroupSchema& s = schemas[static_cast<std::size_t>(it % 2)];
        const BlockLayout layout = BlockLayout::of(s);
        const int h = 1 + static_cast<int>(rng.below(3));
        const int w = 1 + static_cast<int>(rng.below(3));
        const std::size_t hw = static_cast<std::size_t>(h) * w;
        const Tensor<double> z = oracle::random_logits(layout.total, h, w, rng);
        const GroupedPrediction<double> pred = grouped_softmax(z, s);
        const PredictionMasks m = masks_from_gss(pred, s);

        for (std::size_t px = 0; px < hw && bad.empty(); ++px) {
            auto at = [&](int ch) {
                return pred.probs.v[static_cast<std::size_t>(ch) * hw + px];
            };
            int gi = 0;
            for (int i = 1; i < s.num_groups(); ++i) {
                if (at(layout.p_offset + i) > at(layout.p_offset + gi)) gi = i;
            }
            const int start = s.group_has_void(gi) ? 1 : 0;
            const int off = layout.q_offset[static_cast<std::size_t>(gi)];
            int bc = start;
            for (int ch = start + 1; ch < layout.q_dim[static_cast<std::size_t>(gi)]; ++ch) {
                if (at(off + ch) > at(off + bc)) bc = ch;
            }
            const int within = s.group_has_void(gi) ? bc : bc + 1;
            const int want = s.category_of(gi, within);
            if (m.vis[px] != want) {
                bad = "pixel " + std::to_string(px) + ": derived " + std::to_string(m.vis[px]) +
                      ", group-argmax decomposition wants " + std::to_string(want);
            }
            ++derivations;
        }
    }

    int trips = 0;
    for (int it = 0; it < 200 && bad.empty(); ++it) {
        const GroupSchema& s = schemas[static_cast<std::size_t>(it % 2)];
        const int h = 2 + static_cast<int>(rng.below(3));
        const int w = 2 + static_cast<int>(rng.below(3));
        const Sample smp = oracle::random_sample(s, h, w, rng);
        const PredictionMasks m = masks_from_gss(oracle::gt_prediction(smp, s), s);
        if (!(m.vis == smp.visible)) {
            bad = "one-hot round trip changed the visible map";
            break;
        }
        for (int c = 0; c < s.num_categories() && bad.empty(); ++c) {
            const auto [g, j] = s.group_of(c);
            const LabelMap& map = smp.group_maps[static_cast<std::size_t>(g)];
            for (std::uint32_t px = 0; px < map.size(); ++px) {
                const bool want = map[px] == j;
                if ((m.pres[static_cast<std::size_t>(c)][px] != 0) != want) {
                    bad = "one-hot round trip lost category " + s.category_name(c);
                    break;
                }
            }
        }
        ++trips;
    }
    const bool ok = bad.empty() && derivations >= 1000 && trips == 200;
    return {ok, bad.empty() ? std::to_string(derivations) + " pixel derivations, " +
                                  std::to_string(trips) + " one-hot round trips"
                            : bad};
}

// ---- 7: closed-form loss values ---------------------------------------------

Check check_closed_form_losses() {
    std::string bad;

    // Uniform logits: flat cross-entropy is exactly ln N.
    for (const GroupSchema& s : {six_cat_schema(), toy_schema()}) {
        const Tensor<double> z(s.num_categories(), 2, 2, 0.0);
        Sample smp;
        smp.depth = DepthMap(2, 2, 1.0f);
        smp.visible = LabelMap(2, 2, 0);
        const double want = std::log(static_cast<double>(s.num_categories()));
        const double got = loss_ce(z, smp.visible, s).loss;
        if (std::abs(got - want) > 1e-9) {
            bad = "uniform flat loss " + sci(got) + " != ln N " + sci(want);
        }
    }

    // One pixel, two groups of two slots each, lambda 0.1: (2 + lambda) ln 2.
    const GroupSchema two = build_schema({{"bg", {"a", "b"}}, {"fg", {"x"}}});
    const Tensor<double> z(two.activation_count(), 1, 1, 0.0);
    Sample smp;
    smp.depth = DepthMap(1, 1, 1.0f);
    smp.visible = LabelMap(1, 1, 0);                              // "a" visible
    smp.group_maps = {LabelMap(1, 1, 1), LabelMap(1, 1, 0)};      // fg absent
    smp.n_categories = 3;
    const RegionSets regions = regions_from_sample(smp, two);
    const double lambda = 0.1;
    const double want = (2.0 + lambda) * std::log(2.0);
    const double got = loss_grouped(z, regions, two, lambda).loss;
    if (bad.empty() && std::abs(got - want) > 1e-9) {
        bad = "uniform grouped loss " + sci(got) + " != (2+lambda) ln 2 " + sci(want);
    }
    return {bad.empty(), bad.empty() ? "ln N and (2+lambda) ln 2 reproduced to 1e-9" : bad};
}

// ---- 8 + 9: the desk-scale benchmark ----------------------------------------

struct DeskRun {
    bool ran = false;
    std::string error;
    EvalReport gss, dss;
    std::uint64_t train_gt_violations = 0;
    double minutes = 0.0;
};

DeskRun g_desk;

Check check_desk_benchmark() {
    const auto t0 = std::chrono::steady_clock::now();
    const GroupSchema schema = toy_schema();
    const SceneConfig cfg = desk_scene(64);
    const int threads = hw_threads();
    const fs::path dir = kBase / "desk";

    generate_dataset(cfg, schema, 500, 100, 7, (dir / "data").string(), threads);
    const Dataset ds = load_dataset((dir / "data").string(), threads);

    TrainConfig tc;
    tc.seed = 5;
    tc.threads = threads;
    ModelConfig mc;
    mc.width = 16;
    mc.levels = 3;

    mc.head = HeadMode::Grouped;
    const TrainResult gss = train(ds, mc, tc, (dir / "gss").string());
    mc.head = HeadMode::Flat;
    const TrainResult dss = train(ds, mc, tc, (dir / "dss").string());

    EvalOptions eo;
    eo.threads = threads;
    const Predictor predict_gss = [&](const Sample& s, std::size_t) {
        return prediction_from_gss(grouped_softmax(infer(gss.model, s, ds.depth_scale), schema),
                                   schema);
    };
    const Predictor predict_dss = [&](const Sample& s, std::size_t) {
        return prediction_from_dss(flat_softmax(infer(dss.model, s, ds.depth_scale)), schema,
                                   VoidPooling::Max);
    };
    g_desk.gss = evaluate(predict_gss, ds.test, schema, eo);
    g_desk.dss = evaluate(predict_dss, ds.test, schema, eo);

    // For check 9: generated ground truth never violates vis within pres,
    // neither as region sets nor through the plausibility functional on its
    // one-hot encoding.
    for (const Sample& s : ds.train) {
        const RegionSets regions = regions_from_sample(s, schema);
        for (int c = 0; c < schema.num_categories(); ++c) {
            std::vector<std::uint8_t> pres(regions.pixel_count(), 0);
            for (std::uint32_t px : regions.pres[static_cast<std::size_t>(c)]) pres[px] = 1;
            for (std::uint32_t px : regions.vis[static_cast<std::size_t>(c)]) {
                if (!pres[px]) ++g_desk.train_gt_violations;
            }
        }
        if (plausibility_violation(oracle::gt_prediction(s, schema), schema).max > 0.0) {
            ++g_desk.train_gt_violations;
        }
    }

    g_desk.minutes = seconds_since(t0) / 60.0;
    g_desk.ran = true;

    const EvalReport& g = g_desk.gss;
    const EvalReport& d = g_desk.dss;
    const double dpa_vis = std::abs(g.vis_without.pa_literal - d.vis_without.pa_literal);
    const bool ok = g.pres_with.pa_literal > d.pres_with.pa_literal &&
                    g.pres_with.miou_defined && d.pres_with.miou_defined &&
                    g.pres_with.miou > d.pres_with.miou && dpa_vis <= 0.05 &&
                    g_desk.minutes < 45.0;
    return {ok, "PA_pres " + fixed3(g.pres_with.pa_literal) + " vs " +
                    fixed3(d.pres_with.pa_literal) + ", MIoU_pres " + fixed3(g.pres_with.miou) +
                    " vs " + fixed3(d.pres_with.miou) + " (grouped vs flat), |dPA_vis| " +
                    fixed3(dpa_vis) + ", " + fixed3(g_desk.minutes) + " min"};
}

Check check_plausibility() {
    if (!g_desk.ran) return {false, "desk benchmark unavailable: " + g_desk.error};
    const EvalReport& g = g_desk.gss;
    const bool ok =
        g.plausibility_evaluated && g.plausibility_mean < 0.05 && g_desk.train_gt_violations == 0;
    return {ok, "mean violation " + sci(g.plausibility_mean) + " (max " +
                    sci(g.plausibility_max) + "), " + std::to_string(g_desk.train_gt_violations) +
                    " ground-truth violations in 500 training samples"};
}

// ---- 10: byte-level determinism ----------------------------------------------

Check check_determinism() {
    const GroupSchema schema = toy_schema();
    SceneConfig cfg = desk_scene(16);
    cfg.thresholds.max_object_coverage = 0.6;  // small canvas, chunky objects

    const fs::path a = kBase / "det_a", b = kBase / "det_b";
    generate_dataset(cfg, schema, 6, 3, 11, (a / "data").string(), 1);
    generate_dataset(cfg, schema, 6, 3, 11, (b / "data").string(), 3);
    if (tree_bytes(a / "data") != tree_bytes(b / "data")) {
        return {false, "regenerated dataset trees differ"};
    }

    TrainConfig tc;
    tc.epochs = 2;
    tc.batch = 2;
    tc.seed = 3;
    ModelConfig mc;
    mc.width = 4;
    mc.levels = 2;
    const Dataset da = load_dataset((a / "data").string(), 1);
    const Dataset db = load_dataset((b / "data").string(), 3);
    tc.threads = 1;
    train(da, mc, tc, (a / "model").string());
    tc.threads = 3;
    train(db, mc, tc, (b / "model").string());
    const auto ck_a = slurp_bytes(a / "model" / "checkpoint.gssm");
    if (ck_a.empty() || ck_a != slurp_bytes(b / "model" / "checkpoint.gssm")) {
        return {false, "retrained checkpoints differ"};
    }
    if (slurp_bytes(a / "model" / "history.jsonl") != slurp_bytes(b / "model" / "history.jsonl")) {
        return {false, "training histories differ"};
    }

    const Checkpoint ck = load_checkpoint((a / "model" / "checkpoint.gssm").string());
    auto report_dump = [&](const Dataset& ds, int threads) {
        const Predictor p = [&](const Sample& s, std::size_t) {
            return prediction_from_gss(grouped_softmax(infer(ck.model, s, ds.depth_scale), schema),
                                       schema);
        };
        EvalOptions eo;
        eo.threads = threads;
        return evaluate(p, ds.test, schema, eo).to_json().dump(2);
    };
    const std::string rep_a = report_dump(da, 1);
    const std::string rep_b = report_dump(db, 4);
    if (rep_a != rep_b) return {false, "evaluation reports differ"};

    return {true, "dataset tree, checkpoint (" + std::to_string(ck_a.size()) +
                      " bytes), history, and report byte-identical across reruns"};
}

}  // namespace

int main() {
    fs::remove_all(kBase);
    fs::create_directories(kBase);

    struct Entry {
        int num;
        const char* label;
        std::function<Check()> fn;
    };
    const std::vector<Entry> entries = {
        {1, "loss gradients match central finite differences", check_loss_gradients},
        {2, "network gradients match finite differences end to end", check_network_gradients},
        {3, "grouped softmax blocks normalize and ignore shifts", check_block_normalization},
        {4, "activation counts follow the schema arithmetic", check_activation_count},
        {5, "metrics equal brute-force set enumeration", check_metric_enumeration},
        {6, "visible derivation decomposes and round-trips", check_visible_derivation},
        {7, "closed-form loss values reproduced", check_closed_form_losses},
        {8, "grouped head beats the flat baseline on present-region metrics",
         check_desk_benchmark},
        {9, "plausibility violations are reported and small", check_plausibility},
        {10, "identical configurations reproduce every byte", check_determinism},
    };

    int failures = 0;
    for (const Entry& e : entries) {
        const auto t0 = std::chrono::steady_clock::now();
        Check c;
        try {
            c = e.fn();
        } catch (const std::exception& ex) {
            c = {false, std::string("exception: ") + ex.what()};
        }
        std::printf("[%s] %2d %s (%s; %.1fs)\n", c.pass ? "PASS" : "FAIL", e.num, e.label,
                    c.detail.c_str(), seconds_since(t0));
        std::fflush(stdout);
        if (!c.pass) ++failures;
    }

    std::printf("acceptance: %d/10 passed\n", 10 - failures);
    fs::remove_all(kBase);
    return failures;
}
