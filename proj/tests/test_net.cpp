// Copyright (c) 2026 groupseg contributors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "groupseg/dataset.hpp"
#include "groupseg/errors.hpp"
#include "groupseg/head.hpp"
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

std::vector<std::uint8_t> slurp_bytes(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE_MESSAGE(in.good(), "missing file " << path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit_bytes(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    REQUIRE(out.good());
}

std::size_t line_count(const fs::path& path) {
    std::ifstream in(path);
    std::size_t n = 0;
    std::string line;
    while (std::getline(in, line)) ++n;
    return n;
}

// A 16x16 scene with a fixed layout: wall band at 1000, floor band at 940,
// one crate at 320, one ball at 160, positions varying with the index.
// Used where the content does not matter (determinism, resume, errors).
Sample depth_keyed_sample(int k) {
    Sample s;
    s.depth = DepthMap(16, 16, 1000.0f);
    s.visible = LabelMap(16, 16, 0);
    s.group_maps = {LabelMap(16, 16, 1), LabelMap(16, 16, 0), LabelMap(16, 16, 0)};
    s.n_categories = 8;
    for (int y = 8; y < 16; ++y) {
        for (int x = 0; x < 16; ++x) {
            s.depth.at(y, x) = 940.0f;
            s.visible.at(y, x) = 1;
            s.group_maps[0].at(y, x) = 2;
        }
    }
    const int cx = 1 + k;  // crate slides right with the sample index
    for (int y = 2; y <= 5; ++y) {
        for (int x = cx; x < cx + 4; ++x) {
            s.depth.at(y, x) = 320.0f;
            s.visible.at(y, x) = 2;
            s.group_maps[1].at(y, x) = 1;
        }
    }
    const int bx = 2 + (k % 6);
    for (int y = 9; y <= 12; ++y) {
        for (int x = bx; x < bx + 4; ++x) {
            s.depth.at(y, x) = 160.0f;
            s.visible.at(y, x) = 5;
            s.group_maps[2].at(y, x) = 1;
        }
    }
    return s;
}

Dataset tiny_dataset(int n_train) {
    Dataset ds;
    ds.schema = toy_schema();
    for (int k = 0; k < n_train; ++k) ds.train.push_back(depth_keyed_sample(k));
    ds.test = ds.train;  // memorization target
    ds.depth_scale = 1000.0f;
    return ds;
}

// Generated 24x24 scenes where every category has a distinct shape-kind and
// size signature, so the labels are recoverable from appearance.
Dataset scene_dataset(int n) {
    const GroupSchema schema = toy_schema();
    SceneSpec spec;
    spec.h = 24;
    spec.w = 24;
    spec.depth_noise_std = 2.0;
    spec.horizon = {0.5};
    spec.counts = {{0, 0}, {1, 2}, {1, 2}};
    spec.shapes.assign(8, ShapeSpec{ShapeSpec::Kind::Rectangle, 0.12, 0.22});
    spec.shapes[3] = {ShapeSpec::Kind::Rectangle, 0.30, 0.45};  // cabinet: big box
    spec.shapes[4] = {ShapeSpec::Kind::Triangle, 0.30, 0.45};   // panel: big wedge
    spec.shapes[5] = {ShapeSpec::Kind::Ellipse, 0.12, 0.22};    // ball
    spec.shapes[6] = {ShapeSpec::Kind::Triangle, 0.12, 0.22};   // cone
    spec.shapes[7] = {ShapeSpec::Kind::Ellipse, 0.30, 0.45};    // pillow
    const RejectionThresholds thresholds;

    Dataset ds;
    ds.schema = schema;
    for (int k = 0; static_cast<int>(ds.train.size()) < n; ++k) {
        Rng rng = Rng::stream(77, static_cast<std::uint64_t>(k));
        try {
            Sample s = generate_scene(spec, schema, rng);
            if (accept_scene(s, thresholds, schema).accepted) ds.train.push_back(std::move(s));
        } catch (const PlacementError&) {
        }
    }
    ds.test = ds.train;  // memorization target
    float dmax = 1.0f;
    for (const auto& s : ds.train) {
        for (float d : s.depth.v) dmax = std::max(dmax, d);
    }
    ds.depth_scale = dmax;
    return ds;
}

ModelConfig small_config(HeadMode head, int width = 4, int levels = 2) {
    ModelConfig mc;
    mc.in_channels = 1;
    mc.width = width;
    mc.levels = levels;
    mc.head = head;
    return mc;
}

bool conv_equal(const ConvParam<float>& a, const ConvParam<float>& b) {
    return a.name == b.name && a.in == b.in && a.out == b.out && a.k == b.k && a.w == b.w &&
           a.b == b.b;
}

}  // namespace

TEST_CASE("model layout follows the fixed block plan") {
    const GroupSchema schema = toy_schema();
    CHECK(head_channels_for(HeadMode::Flat, schema) == 8);
    CHECK(head_channels_for(HeadMode::Grouped, schema) == 13);

    const auto model = build_model<float>(small_config(HeadMode::Grouped, 4, 3), schema, 7);
    REQUIRE(model.convs.size() == 5 * 3 - 2);
    const char* names[] = {"enc0a", "enc0b", "enc1a", "enc1b", "enc2a", "enc2b", "up1",
                           "dec1a", "dec1b", "up0",   "dec0a", "dec0b", "head"};
    const int ins[] = {1, 4, 4, 8, 8, 16, 16, 16, 8, 8, 8, 4, 4};
    const int outs[] = {4, 4, 8, 8, 16, 16, 8, 8, 8, 4, 4, 4, 13};
    for (std::size_t i = 0; i < model.convs.size(); ++i) {
        const auto& c = model.convs[i];
        CHECK(c.name == names[i]);
        CHECK(c.in == ins[i]);
        CHECK(c.out == outs[i]);
        CHECK(c.k == (c.name == "head" ? 1 : 3));
        CHECK(c.w.size() == static_cast<std::size_t>(c.out) * c.in * c.k * c.k);
        CHECK(c.b.size() == static_cast<std::size_t>(c.out));
        // Zero biases everywhere; fan-in-limited weights off the head.
        for (float b : c.b) CHECK(b == 0.0f);
        const double limit = std::sqrt(3.0 / (static_cast<double>(c.in) * c.k * c.k));
        for (float w : c.w) {
            if (c.name == "head") {
                CHECK(w == 0.0f);
            } else {
                CHECK(std::abs(w) <= limit);
            }
        }
    }
    std::size_t want_params = 0;
    for (const auto& c : model.convs) want_params += c.w.size() + c.b.size();
    CHECK(parameter_count(model) == want_params);

    CHECK_THROWS_WITH_AS(build_model<float>(small_config(HeadMode::Flat, 0), schema, 1),
                         doctest::Contains("positive"), ConfigError);
}

TEST_CASE("flat and grouped heads share a bitwise-identical trunk") {
    const GroupSchema schema = toy_schema();
    const int width = 6;
    const auto flat = build_model<float>(small_config(HeadMode::Flat, width), schema, 123);
    const auto grouped = build_model<float>(small_config(HeadMode::Grouped, width), schema, 123);
    REQUIRE(flat.convs.size() == grouped.convs.size());
    for (std::size_t i = 0; i + 1 < flat.convs.size(); ++i) {
        CHECK(conv_equal(flat.convs[i], grouped.convs[i]));
    }
    // The only difference is the 1x1 head: activation_count - N extra rows.
    const int extra = schema.activation_count() - schema.num_categories();
    CHECK(extra == 5);
    CHECK(parameter_count(grouped) - parameter_count(flat) ==
          static_cast<std::size_t>(extra) * (width + 1));

    // With a void slot in every group the overhead is 2(M+1) rows.
    const GroupSchema allvoid =
        build_schema({{"bg", {"a", "b"}}, {"fg", {"c", "d"}}}, /*void_in_background=*/true);
    const auto f2 = build_model<float>(small_config(HeadMode::Flat, width), allvoid, 9);
    const auto g2 = build_model<float>(small_config(HeadMode::Grouped, width), allvoid, 9);
    CHECK(parameter_count(g2) - parameter_count(f2) ==
          static_cast<std::size_t>(2 * allvoid.num_groups()) * (width + 1));

    // Different seeds give different trunks.
    const auto other = build_model<float>(small_config(HeadMode::Flat, width), schema, 124);
    CHECK(params_fingerprint(other) != params_fingerprint(flat));
    CHECK(params_fingerprint(flat) ==
          params_fingerprint(build_model<float>(small_config(HeadMode::Flat, width), schema, 123)));
}

TEST_CASE("untrained forward is exactly uniform through the zero head") {
    const GroupSchema schema = toy_schema();
    Rng rng = Rng::stream(41, 0);
    Tensor<float> input(1, 8, 8);
    for (auto& x : input.v) x = static_cast<float>(rng.uniform(0.1, 1.0));

    const auto flat = build_model<float>(small_config(HeadMode::Flat), schema, 5);
    const Tensor<float> logits = forward(flat, input);
    CHECK(logits.c == 8);
    CHECK(logits.h == 8);
    CHECK(logits.w == 8);
    for (float z : logits.v) CHECK(z == 0.0f);
    // Zero logits mean a uniform posterior, so the flat loss is exactly
    // ln N no matter the labels.
    const Sample s = oracle::random_sample(schema, 8, 8, rng);
    CHECK(loss_ce(logits, s.visible, schema).loss ==
          doctest::Approx(std::log(8.0)).epsilon(1e-6));

    const auto grouped = build_model<float>(small_config(HeadMode::Grouped), schema, 5);
    const Tensor<float> glogits = forward(grouped, input);
    CHECK(glogits.c == 13);
    const auto pred = grouped_softmax(glogits, schema);
    const BlockLayout l = BlockLayout::of(schema);
    for (int i = 0; i < l.p_dim; ++i) {
        CHECK(pred.probs.at(l.p_offset + i, 3, 3) ==
              doctest::Approx(1.0 / l.p_dim).epsilon(1e-6));
    }
    for (int g = 0; g < l.p_dim; ++g) {
        for (int k = 0; k < l.q_dim[static_cast<std::size_t>(g)]; ++k) {
            CHECK(pred.probs.at(l.q_offset[static_cast<std::size_t>(g)] + k, 5, 2) ==
                  doctest::Approx(1.0 / l.q_dim[static_cast<std::size_t>(g)]).epsilon(1e-6));
        }
    }
}

TEST_CASE("forward and backward reject malformed calls") {
    const GroupSchema schema = toy_schema();
    const auto model = build_model<float>(small_config(HeadMode::Flat), schema, 3);

    Tensor<float> two_channel(2, 8, 8, 0.5f);
    CHECK_THROWS_WITH_AS(forward(model, two_channel), doctest::Contains("forward expects"),
                         std::invalid_argument);
    Tensor<float> ragged(1, 7, 8, 0.5f);
    CHECK_THROWS_WITH_AS(forward(model, ragged), doctest::Contains("7x8"), std::invalid_argument);

    Tensor<float> input(1, 8, 8, 0.25f);
    Workspace<float> ws;
    auto grads = zero_grads(model);
    Tensor<float> upstream(8, 8, 8, 0.0f);
    CHECK_THROWS_WITH_AS(backward(model, ws, upstream, grads),
                         doctest::Contains("without a cached forward"), std::logic_error);
    forward(model, input, &ws);
    Tensor<float> wrong_shape(8, 4, 4, 0.0f);
    CHECK_THROWS_WITH_AS(backward(model, ws, wrong_shape, grads),
                         doctest::Contains("shape does not match"), std::logic_error);
    const auto deeper = build_model<float>(small_config(HeadMode::Flat, 4, 3), schema, 3);
    auto deeper_grads = zero_grads(deeper);
    CHECK_THROWS_WITH_AS(backward(model, ws, upstream, deeper_grads),
                         doctest::Contains("does not match the model"), std::logic_error);
}

TEST_CASE("analytic network gradients match finite differences") {
    const GroupSchema schema = toy_schema();
    Rng rng = Rng::stream(42, 0);
    Tensor<double> input(1, 8, 8);
    for (auto& x : input.v) x = rng.uniform(0.1, 1.0);
    const Sample s = oracle::random_sample(schema, 8, 8, rng);
    const RegionSets regions = regions_from_sample(s, schema);

    for (const HeadMode head : {HeadMode::Flat, HeadMode::Grouped}) {
        auto model = build_model<double>(small_config(head, 4, 2), schema, 17);
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

        double worst = 0.0;
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
                    const double an = analytic[i];
                    const double rel =
                        std::abs(fd - an) / std::max({1e-6, std::abs(fd), std::abs(an)});
                    worst = std::max(worst, rel);
                }
            };
            probe(model.convs[b].w, grads.convs[b].w, 6);
            probe(model.convs[b].b, grads.convs[b].b, 2);
        }
        CHECK_MESSAGE(worst < 1e-3, "head mode " << static_cast<int>(head) << " worst rel err "
                                                 << worst);
    }
}

TEST_CASE("adam_update matches an independent reference") {
    Rng rng = Rng::stream(43, 0);
    const std::size_t n = 17;
    std::vector<double> p(n), m(n, 0.0), v(n, 0.0), pref, mref, vref;
    for (auto& x : p) x = rng.uniform(-1.0, 1.0);
    pref = p;
    mref = m;
    vref = v;

    const double lr = 1e-3, b1 = 0.9, b2 = 0.999, eps = 1e-8, wd = 1e-2;
    for (std::uint64_t step = 1; step <= 5; ++step) {
        std::vector<double> g(n);
        for (auto& x : g) x = rng.uniform(-2.0, 2.0);
        adam_update<double>(p, g, m, v, step, lr, b1, b2, eps, wd);
        // Decoupled-decay reference, written out longhand.
        const double bc1 = 1.0 - std::pow(b1, static_cast<double>(step));
        const double bc2 = 1.0 - std::pow(b2, static_cast<double>(step));
        for (std::size_t i = 0; i < n; ++i) {
            mref[i] = b1 * mref[i] + (1.0 - b1) * g[i];
            vref[i] = b2 * vref[i] + (1.0 - b2) * g[i] * g[i];
            const double mhat = mref[i] / bc1;
            const double vhat = vref[i] / bc2;
            pref[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + wd * pref[i]);
        }
        for (std::size_t i = 0; i < n; ++i) {
            CHECK(p[i] == doctest::Approx(pref[i]).epsilon(1e-12));
        }
    }

    std::vector<double> short_g(n - 1, 0.0);
    CHECK_THROWS_WITH_AS(adam_update<double>(p, short_g, m, v, 1, lr, b1, b2, eps, wd),
                         doctest::Contains("mismatched sizes"), std::invalid_argument);
    std::vector<double> g(n, 0.0);
    CHECK_THROWS_WITH_AS(adam_update<double>(p, g, m, v, 0, lr, b1, b2, eps, wd),
                         doctest::Contains("1-based"), std::invalid_argument);
}

TEST_CASE("learning rate follows an exact staircase") {
    TrainConfig tc;  // lr 1e-3, decay 0.1, step 10
    CHECK(lr_at_epoch(tc, 0) == 1e-3);
    CHECK(lr_at_epoch(tc, 9) == 1e-3);
    CHECK(lr_at_epoch(tc, 10) == 1e-3 * std::pow(0.1, 1));
    CHECK(lr_at_epoch(tc, 19) == 1e-3 * std::pow(0.1, 1));
    CHECK(lr_at_epoch(tc, 20) == 1e-3 * std::pow(0.1, 2));
    tc.lr = 0.5;
    tc.lr_decay = 0.25;
    tc.lr_step_epochs = 4;
    CHECK(lr_at_epoch(tc, 3) == 0.5);
    CHECK(lr_at_epoch(tc, 4) == 0.5 * 0.25);
    CHECK(lr_at_epoch(tc, 11) == 0.5 * std::pow(0.25, 2));
    CHECK_THROWS_AS(lr_at_epoch(tc, -1), ConfigError);
    tc.lr_step_epochs = 0;
    CHECK_THROWS_AS(lr_at_epoch(tc, 0), ConfigError);
}

TEST_CASE("adam_step rejects broken inputs") {
    const GroupSchema schema = toy_schema();
    auto model = build_model<float>(small_config(HeadMode::Flat), schema, 2);
    auto adam = zero_adam(model);
    auto grads = zero_grads(model);
    TrainConfig tc;

    grads.convs[1].w[0] = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_WITH_AS(adam_step(model, grads, adam, tc, 0),
                         doctest::Contains("non-finite gradient"), DivergenceError);

    const auto other = build_model<float>(small_config(HeadMode::Grouped), schema, 2);
    auto other_grads = zero_grads(other);
    auto mismatched = zero_adam(model);
    mismatched.convs.pop_back();
    auto ok = zero_grads(model);
    CHECK_THROWS_WITH_AS(adam_step(model, ok, mismatched, tc, 0),
                         doctest::Contains("does not match the model"), std::logic_error);
}

TEST_CASE("input_from_sample scales depth and infer equals forward") {
    const Sample s = depth_keyed_sample(0);
    const auto in = input_from_sample<float>(s, 1000.0f);
    CHECK(in.c == 1);
    CHECK(in.h == 16);
    CHECK(in.w == 16);
    CHECK(in.at(0, 0, 0) == 1.0f);
    CHECK(in.at(0, 15, 15) == 0.94f);
    CHECK(in.at(0, 3, 2) == 0.32f);
    CHECK_THROWS_WITH_AS(input_from_sample<float>(s, 0.0f), doctest::Contains("positive"),
                         std::invalid_argument);

    const auto model = build_model<float>(small_config(HeadMode::Grouped), toy_schema(), 6);
    CHECK(infer(model, s, 1000.0f) == forward(model, input_from_sample<float>(s, 1000.0f)));
}

TEST_CASE("training fits a small scene dataset") {
    const fs::path dir = fs::temp_directory_path() / "groupseg_net_overfit";
    fs::remove_all(dir);
    const Dataset ds = scene_dataset(10);

    TrainConfig tc;
    tc.epochs = 120;
    tc.batch = 1;
    tc.lr_step_epochs = 80;
    tc.seed = 21;
    const TrainResult res =
        train(ds, small_config(HeadMode::Grouped, 8, 2), tc, dir.string());

    REQUIRE(res.history.size() == 120);
    CHECK(res.history.front().epoch == 0);
    CHECK(res.history.back().epoch == 119);
    CHECK(res.history.front().lr == 1e-3);
    CHECK(res.history.back().lr == 1e-4);
    CHECK(res.history.back().train_loss < 0.5 * res.history.front().train_loss);
    CHECK(res.history.back().val_pa_vis > res.history.front().val_pa_vis);
    CHECK(res.history.back().val_pa_vis >= 0.80);

    CHECK(fs::exists(dir / "checkpoint.gssm"));
    CHECK(line_count(dir / "history.jsonl") == 120);
    const Checkpoint ck = load_checkpoint((dir / "checkpoint.gssm").string());
    CHECK(ck.epochs_completed == 120);
    CHECK(params_fingerprint(ck.model) == params_fingerprint(res.model));

    // The trained grouped model stays close to plausible on its own data.
    const auto pred = grouped_softmax(infer(res.model, ds.test[0], ds.depth_scale), ds.schema);
    const auto stats = plausibility_violation(pred, ds.schema);
    CHECK(stats.mean < 0.05);
    fs::remove_all(dir);
}

TEST_CASE("identical runs and thread counts reproduce checkpoints byte for byte") {
    const Dataset ds = tiny_dataset(5);
    TrainConfig tc;
    tc.epochs = 3;
    tc.batch = 2;
    tc.seed = 31;

    auto run = [&](const char* name, int threads) {
        const fs::path dir = fs::temp_directory_path() / name;
        fs::remove_all(dir);
        TrainConfig cfg = tc;
        cfg.threads = threads;
        train(ds, small_config(HeadMode::Grouped, 4, 2), cfg, dir.string());
        auto bytes = slurp_bytes(dir / "checkpoint.gssm");
        auto history = slurp_bytes(dir / "history.jsonl");
        fs::remove_all(dir);
        return std::pair{bytes, history};
    };

    const auto a = run("groupseg_net_det_a", 1);
    const auto b = run("groupseg_net_det_b", 1);
    const auto c = run("groupseg_net_det_c", 3);
    CHECK(a.first == b.first);
    CHECK(a.second == b.second);
    CHECK(a.first == c.first);
    CHECK(a.second == c.second);
}

TEST_CASE("resuming continues the exact interrupted trajectory") {
    const Dataset ds = tiny_dataset(5);
    TrainConfig tc;
    tc.epochs = 6;
    tc.batch = 2;
    tc.seed = 32;
    const ModelConfig mc = small_config(HeadMode::Flat, 4, 2);

    const fs::path full_dir = fs::temp_directory_path() / "groupseg_net_full";
    const fs::path split_dir = fs::temp_directory_path() / "groupseg_net_split";
    fs::remove_all(full_dir);
    fs::remove_all(split_dir);

    train(ds, mc, tc, full_dir.string());
    TrainConfig first_half = tc;
    first_half.epochs = 3;
    train(ds, mc, first_half, split_dir.string());
    const TrainResult resumed = train(ds, mc, tc, split_dir.string(), /*resume=*/true);
    REQUIRE(resumed.history.size() == 3);  // only the new epochs
    CHECK(resumed.history.front().epoch == 3);

    CHECK(slurp_bytes(full_dir / "checkpoint.gssm") == slurp_bytes(split_dir / "checkpoint.gssm"));
    CHECK(slurp_bytes(full_dir / "history.jsonl") == slurp_bytes(split_dir / "history.jsonl"));

    SUBCASE("resume validates the stored configuration") {
        ModelConfig wider = mc;
        wider.width = 8;
        CHECK_THROWS_WITH_AS(train(ds, wider, tc, split_dir.string(), true),
                             doctest::Contains("different model configuration"), ConfigError);
        Dataset other = ds;
        other.schema =
            build_schema({{"bg", {"a", "b", "c", "d"}}, {"fg", {"e", "f", "g", "h"}}});
        for (auto& sample : other.train) sample.n_categories = 8;
        for (auto& sample : other.test) sample.n_categories = 8;
        CHECK_THROWS_WITH_AS(train(other, mc, tc, split_dir.string(), true),
                             doctest::Contains("different schema"), ConfigError);
    }

    fs::remove_all(full_dir);
    fs::remove_all(split_dir);
}

TEST_CASE("checkpoints round-trip and reject corruption") {
    const GroupSchema schema = toy_schema();
    auto model = build_model<float>(small_config(HeadMode::Grouped, 4, 2), schema, 77);
    auto adam = zero_adam(model);
    // Touch the state so the round trip is not all zeros.
    auto grads = zero_grads(model);
    Rng rng = Rng::stream(44, 0);
    for (auto& e : grads.convs) {
        for (auto& g : e.w) g = static_cast<float>(rng.uniform(-0.5, 0.5));
        for (auto& g : e.b) g = static_cast<float>(rng.uniform(-0.5, 0.5));
    }
    TrainConfig tc;
    adam_step(model, grads, adam, tc, 0);

    const fs::path dir = fs::temp_directory_path() / "groupseg_net_ckpt";
    fs::remove_all(dir);
    fs::create_directories(dir);
    const fs::path path = dir / "model.gssm";
    save_checkpoint(path.string(), model, adam, 4);

    const Checkpoint ck = load_checkpoint(path.string());
    CHECK(ck.epochs_completed == 4);
    CHECK(ck.adam.step == adam.step);
    CHECK(ck.model.config.head == HeadMode::Grouped);
    CHECK(ck.model.head_channels == 13);
    CHECK(ck.model.schema_fingerprint == schema.fingerprint());
    REQUIRE(ck.model.convs.size() == model.convs.size());
    for (std::size_t i = 0; i < model.convs.size(); ++i) {
        CHECK(conv_equal(ck.model.convs[i], model.convs[i]));
        CHECK(ck.adam.convs[i].mw == adam.convs[i].mw);
        CHECK(ck.adam.convs[i].vw == adam.convs[i].vw);
        CHECK(ck.adam.convs[i].mb == adam.convs[i].mb);
        CHECK(ck.adam.convs[i].vb == adam.convs[i].vb);
    }
    // Saving the loaded state reproduces the file bit for bit.
    const fs::path copy = dir / "copy.gssm";
    save_checkpoint(copy.string(), ck.model, ck.adam, ck.epochs_completed);
    CHECK(slurp_bytes(copy) == slurp_bytes(path));

    const std::vector<std::uint8_t> good = slurp_bytes(path);
    const fs::path bad = dir / "bad.gssm";
    auto corrupt = [&](auto mutate, const char* needle) {
        std::vector<std::uint8_t> bytes = good;
        mutate(bytes);
        spit_bytes(bad, bytes);
        CHECK_THROWS_WITH_AS(load_checkpoint(bad.string()), doctest::Contains(needle),
                             FormatError);
    };
    corrupt([](auto& b) { b[0] = 'X'; }, "not a GSSM checkpoint");
    corrupt([](auto& b) { b[4] = 2; }, "unsupported checkpoint version");
    corrupt([](auto& b) { b[8] = 7; }, "invalid head mode");
    corrupt([](auto& b) { b[16] = 0; }, "invalid model dimensions");
    corrupt([](auto& b) { b[54] ^= 1; }, "parameter block");
    corrupt([](auto& b) { b.resize(b.size() - 5); }, "truncated checkpoint");
    corrupt([](auto& b) { b.push_back(0); }, "trailing bytes");
    CHECK_THROWS_WITH_AS(load_checkpoint((dir / "missing.gssm").string()),
                         doctest::Contains("cannot open checkpoint"), ConfigError);
    fs::remove_all(dir);
}

TEST_CASE("train validates its configuration up front") {
    const Dataset ds = tiny_dataset(2);
    const fs::path dir = fs::temp_directory_path() / "groupseg_net_cfg";
    fs::remove_all(dir);
    TrainConfig tc;
    tc.epochs = 0;
    CHECK_THROWS_WITH_AS(train(ds, small_config(HeadMode::Flat), tc, dir.string()),
                         doctest::Contains("epochs"), ConfigError);
    tc.epochs = 1;
    tc.batch = 0;
    CHECK_THROWS_WITH_AS(train(ds, small_config(HeadMode::Flat), tc, dir.string()),
                         doctest::Contains("batch"), ConfigError);
    tc.batch = 1;
    Dataset empty = ds;
    empty.train.clear();
    CHECK_THROWS_WITH_AS(train(empty, small_config(HeadMode::Flat), tc, dir.string()),
                         doctest::Contains("training split is empty"), ConfigError);
    fs::remove_all(dir);
}
