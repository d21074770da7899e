// Copyright (c) 2026 groupseg contributors
// SPDX-License-Identifier: Apache-2.0

#include "groupseg/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <stdexcept>

#include "groupseg/parallel.hpp"

namespace groupseg {

namespace {

// Block channel of within-group index j (>= 1); channel 0 is the void slot
// when the group has one.
int channel_of_within(const GroupSchema& schema, int group, int j) {
    return schema.group_has_void(group) ? j : j - 1;
}

// Per group: block channel -> category id, -1 for the void slot.
std::vector<std::vector<int>> channel_categories(const GroupSchema& schema) {
    std::vector<std::vector<int>> map(schema.num_groups());
    for (int i = 0; i < schema.num_groups(); ++i) {
        map[i].assign(schema.block_dim(i), -1);
        for (int j = 1; j <= schema.group_size(i); ++j) {
            map[i][channel_of_within(schema, i, j)] = schema.category_of(i, j);
        }
    }
    return map;
}

// Argmax with ties to the lowest index over `dim` values strided by `stride`.
template <typename T>
int argmax_strided(const T* p, int dim, std::size_t stride) {
    int best = 0;
    for (int k = 1; k < dim; ++k) {
        if (p[static_cast<std::size_t>(k) * stride] > p[static_cast<std::size_t>(best) * stride]) {
            best = k;
        }
    }
    return best;
}

void check_masks(const PredictionMasks& pred, const RegionSets& gt, const GroupSchema& schema) {
    if (pred.h != gt.h || pred.w != gt.w) {
        throw std::invalid_argument("metrics: prediction is " + std::to_string(pred.h) + "x" +
                                    std::to_string(pred.w) + ", ground truth " +
                                    std::to_string(gt.h) + "x" + std::to_string(gt.w));
    }
    if (static_cast<int>(pred.pres.size()) != schema.num_categories() ||
        static_cast<int>(gt.vis.size()) != schema.num_categories()) {
        throw std::invalid_argument("metrics: category arity mismatch with schema");
    }
}

// The ground-truth visible label per pixel, reconstructed from the
// partitioning visible sets.
std::vector<std::uint16_t> gt_visible_labels(const RegionSets& gt, const GroupSchema& schema) {
    const std::size_t hw = static_cast<std::size_t>(gt.h) * gt.w;
    std::vector<std::uint16_t> labels(hw, 0xFFFF);
    for (int c = 0; c < schema.num_categories(); ++c) {
        for (std::uint32_t px : gt.vis[c]) labels[px] = static_cast<std::uint16_t>(c);
    }
    for (std::size_t px = 0; px < hw; ++px) {
        if (labels[px] == 0xFFFF) {
            throw std::invalid_argument("metrics: ground-truth visible sets do not cover pixel " +
                                        std::to_string(px));
        }
    }
    return labels;
}

nlohmann::ordered_json variant_json(const VariantMetrics& m) {
    nlohmann::ordered_json j;
    j["pa_literal"] = m.pa_literal;
    j["pa_literal_exceeds_one"] = m.pa_literal > 1.0;
    j["pa_normalized"] = m.pa_normalized;
    if (m.miou_defined) {
        j["miou"] = m.miou;
    } else {
        j["miou"] = nullptr;
    }
    j["miou_defined"] = m.miou_defined;
    return j;
}

nlohmann::ordered_json class_table_json(const TaskCounts& counts) {
    nlohmann::ordered_json j = nlohmann::ordered_json::object();
    for (const auto& row : counts.classes) {
        nlohmann::ordered_json r;
        r["gt"] = row.gt;
        r["pred"] = row.pred;
        r["inter"] = row.inter;
        if (row.unions() > 0) {
            r["iou"] = static_cast<double>(row.inter) / static_cast<double>(row.unions());
        } else {
            r["iou"] = nullptr;
        }
        r["void_pseudo_class"] = row.is_void;
        j[row.name] = std::move(r);
    }
    return j;
}

VariantMetrics metrics_from_counts(const TaskCounts& counts, bool with_void) {
    VariantMetrics m;
    m.pa_literal = pa_from_counts(counts, with_void, /*normalized=*/false);
    m.pa_normalized = pa_from_counts(counts, with_void, /*normalized=*/true);
    try {
        m.miou = miou_from_counts(counts, with_void);
        m.miou_defined = true;
    } catch (const std::domain_error&) {
        m.miou = 0.0;
        m.miou_defined = false;
    }
    return m;
}

}  // namespace

// --- derivations -------------------------------------------------------------

template <typename T>
LabelMap derive_vis_from_flat(const Tensor<T>& posterior) {
    LabelMap out(posterior.h, posterior.w);
    const std::size_t hw = static_cast<std::size_t>(posterior.h) * posterior.w;
    for (std::size_t px = 0; px < hw; ++px) {
        out.v[px] =
            static_cast<std::uint16_t>(argmax_strided(posterior.v.data() + px, posterior.c, hw));
    }
    return out;
}

template <typename T>
LabelMap derive_vis_from_gss(const GroupedPrediction<T>& pred, const GroupSchema& schema) {
    const BlockLayout layout = BlockLayout::of(schema);
    if (pred.probs.c != layout.total) {
        throw std::invalid_argument("derive_vis_from_gss: prediction/schema channel mismatch");
    }
    const auto chan_cat = channel_categories(schema);
    LabelMap out(pred.probs.h, pred.probs.w);
    const std::size_t hw = static_cast<std::size_t>(pred.probs.h) * pred.probs.w;
    for (std::size_t px = 0; px < hw; ++px) {
        const T* base = pred.probs.v.data() + px;
        const int i_hat = argmax_strided(base + layout.p_offset * hw, layout.p_dim, hw);
        // Within-group argmax over categories only: the void slot (channel 0
        // of a voided group) never wins the visible label.
        const T* block = base + static_cast<std::size_t>(layout.q_offset[i_hat]) * hw;
        const int start = schema.group_has_void(i_hat) ? 1 : 0;
        int best = start;
        for (int k = start + 1; k < layout.q_dim[i_hat]; ++k) {
            if (block[static_cast<std::size_t>(k) * hw] >
                block[static_cast<std::size_t>(best) * hw]) {
                best = k;
            }
        }
        out.v[px] = static_cast<std::uint16_t>(chan_cat[i_hat][best]);
    }
    return out;
}

template <typename T>
std::vector<std::vector<std::uint8_t>> derive_pres_from_gss(const GroupedPrediction<T>& pred,
                                                            const GroupSchema& schema) {
    const BlockLayout layout = BlockLayout::of(schema);
    if (pred.probs.c != layout.total) {
        throw std::invalid_argument("derive_pres_from_gss: prediction/schema channel mismatch");
    }
    const auto chan_cat = channel_categories(schema);
    const std::size_t hw = static_cast<std::size_t>(pred.probs.h) * pred.probs.w;
    std::vector<std::vector<std::uint8_t>> pres(schema.num_categories(),
                                                std::vector<std::uint8_t>(hw, 0));
    for (int i = 0; i < schema.num_groups(); ++i) {
        const T* block = pred.probs.v.data() + static_cast<std::size_t>(layout.q_offset[i]) * hw;
        for (std::size_t px = 0; px < hw; ++px) {
            const int k = argmax_strided(block + px, layout.q_dim[i], hw);
            const int c = chan_cat[i][k];
            if (c >= 0) pres[c][px] = 1;  // -1 = void slot won: group absent
        }
    }
    return pres;
}

template <typename T>
std::vector<std::vector<std::uint8_t>> derive_pres_from_dss(const Tensor<T>& posterior,
                                                            const GroupSchema& schema,
                                                            VoidPooling pooling) {
    if (posterior.c != schema.num_categories()) {
        throw std::invalid_argument("derive_pres_from_dss: posterior/schema channel mismatch");
    }
    const std::size_t hw = static_cast<std::size_t>(posterior.h) * posterior.w;
    std::vector<std::vector<std::uint8_t>> pres(schema.num_categories(),
                                                std::vector<std::uint8_t>(hw, 0));
    std::vector<std::vector<int>> members(schema.num_groups());
    for (int c = 0; c < schema.num_categories(); ++c) {
        members[schema.group_of(c).first].push_back(c);
    }

    for (std::size_t px = 0; px < hw; ++px) {
        const T* p = posterior.v.data() + px;
        // Pooled background probability: the void pseudo-entry of every
        // foreground group's restricted vector.
        T void_entry = T(0);
        for (std::size_t n = 0; n < members[0].size(); ++n) {
            const T v = p[static_cast<std::size_t>(members[0][n]) * hw];
            if (pooling == VoidPooling::Max) {
                void_entry = (n == 0) ? v : std::max(void_entry, v);
            } else {
                void_entry += v;
            }
        }
        // Background categories: argmax over G_0 alone, no pooling.
        if (!members[0].empty()) {
            int best = members[0][0];
            for (int c : members[0]) {
                if (p[static_cast<std::size_t>(c) * hw] >
                    p[static_cast<std::size_t>(best) * hw]) {
                    best = c;
                }
            }
            pres[best][px] = 1;
        }
        // Foreground groups: restricted vector [void_entry, cat_1, ...],
        // argmax with ties to the lowest index (void first).
        for (int i = 1; i < schema.num_groups(); ++i) {
            int best = -1;  // -1 = the void pseudo-entry
            T best_v = void_entry;
            for (int c : members[i]) {
                const T v = p[static_cast<std::size_t>(c) * hw];
                if (v > best_v) {
                    best_v = v;
                    best = c;
                }
            }
            if (best >= 0) pres[best][px] = 1;
        }
    }
    return pres;
}

template <typename T>
PredictionMasks masks_from_gss(const GroupedPrediction<T>& pred, const GroupSchema& schema) {
    PredictionMasks m;
    m.h = pred.probs.h;
    m.w = pred.probs.w;
    m.vis = derive_vis_from_gss(pred, schema);
    m.pres = derive_pres_from_gss(pred, schema);
    return m;
}

template <typename T>
PredictionMasks masks_from_dss(const Tensor<T>& posterior, const GroupSchema& schema,
                               VoidPooling pooling) {
    PredictionMasks m;
    m.h = posterior.h;
    m.w = posterior.w;
    m.vis = derive_vis_from_flat(posterior);
    m.pres = derive_pres_from_dss(posterior, schema, pooling);
    return m;
}

template <typename T>
PredictionOutput prediction_from_gss(const GroupedPrediction<T>& pred, const GroupSchema& schema) {
    PredictionOutput out;
    out.masks = masks_from_gss(pred, schema);
    const ViolationStats<T> v = plausibility_violation(pred, schema);
    out.has_violation = true;
    out.violation_max = static_cast<double>(v.max);
    out.violation_mean = static_cast<double>(v.mean);
    out.violation_fraction = v.fraction_positive;
    return out;
}

template <typename T>
PredictionOutput prediction_from_dss(const Tensor<T>& posterior, const GroupSchema& schema,
                                     VoidPooling pooling) {
    PredictionOutput out;
    out.masks = masks_from_dss(posterior, schema, pooling);
    return out;
}

// --- counting ----------------------------------------------------------------

void TaskCounts::add(const TaskCounts& other) {
    if (classes.empty()) {
        *this = other;
        return;
    }
    if (classes.size() != other.classes.size()) {
        throw std::invalid_argument("TaskCounts::add: class table size mismatch");
    }
    omega += other.omega;
    for (std::size_t k = 0; k < classes.size(); ++k) {
        classes[k].inter += other.classes[k].inter;
        classes[k].gt += other.classes[k].gt;
        classes[k].pred += other.classes[k].pred;
    }
}

TaskCounts count_visible(const RegionSets& gt, const PredictionMasks& pred,
                         const GroupSchema& schema) {
    check_masks(pred, gt, schema);
    const std::size_t hw = static_cast<std::size_t>(gt.h) * gt.w;
    TaskCounts out;
    out.omega = hw;

    const std::vector<std::uint16_t> gt_vis = gt_visible_labels(gt, schema);
    for (int c = 0; c < schema.num_categories(); ++c) {
        ClassCounts row;
        row.name = schema.category_name(c);
        row.gt = gt.vis[c].size();
        for (std::uint32_t px : gt.vis[c]) {
            if (pred.vis.v[px] == c) ++row.inter;
        }
        out.classes.push_back(std::move(row));
    }
    for (std::size_t px = 0; px < hw; ++px) {
        const std::uint16_t c = pred.vis.v[px];
        if (c >= static_cast<std::uint16_t>(schema.num_categories())) {
            throw std::invalid_argument("count_visible: predicted label " + std::to_string(c) +
                                        " out of range");
        }
        ++out.classes[c].pred;
    }

    // Void pseudo-classes for the visible task: the region where no category
    // of the group is visible.
    for (int i = 0; i < schema.num_groups(); ++i) {
        if (!schema.group_has_void(i)) continue;
        ClassCounts row;
        row.name = "void:" + schema.group_name(i);
        row.is_void = true;
        for (std::size_t px = 0; px < hw; ++px) {
            const bool gt_away = schema.group_of(gt_vis[px]).first != i;
            const bool pred_away = schema.group_of(pred.vis.v[px]).first != i;
            row.gt += gt_away;
            row.pred += pred_away;
            row.inter += gt_away && pred_away;
        }
        out.classes.push_back(std::move(row));
    }
    return out;
}

TaskCounts count_present(const RegionSets& gt, const PredictionMasks& pred,
                         const GroupSchema& schema) {
    check_masks(pred, gt, schema);
    const std::size_t hw = static_cast<std::size_t>(gt.h) * gt.w;
    TaskCounts out;
    out.omega = hw;

    for (int c = 0; c < schema.num_categories(); ++c) {
        ClassCounts row;
        row.name = schema.category_name(c);
        row.gt = gt.pres[c].size();
        const auto& mask = pred.pres[c];
        if (mask.size() != hw) {
            throw std::invalid_argument("count_present: present mask size mismatch for '" +
                                        row.name + "'");
        }
        for (std::uint8_t b : mask) row.pred += (b != 0);
        for (std::uint32_t px : gt.pres[c]) row.inter += (mask[px] != 0);
        out.classes.push_back(std::move(row));
    }

    for (int i = 0; i < schema.num_groups(); ++i) {
        if (!schema.group_has_void(i)) continue;
        ClassCounts row;
        row.name = "void:" + schema.group_name(i);
        row.is_void = true;
        row.gt = gt.group_void[i].size();
        // Predicted void for the group: no member category predicted present.
        std::vector<std::uint8_t> any(hw, 0);
        for (int j = 1; j <= schema.group_size(i); ++j) {
            const auto& mask = pred.pres[static_cast<std::size_t>(schema.category_of(i, j))];
            for (std::size_t px = 0; px < hw; ++px) any[px] |= mask[px];
        }
        for (std::size_t px = 0; px < hw; ++px) row.pred += (any[px] == 0);
        for (std::uint32_t px : gt.group_void[i]) row.inter += (any[px] == 0);
        out.classes.push_back(std::move(row));
    }
    return out;
}

double pa_from_counts(const TaskCounts& counts, bool with_void, bool normalized) {
    std::uint64_t inter = 0, gt = 0;
    for (const auto& row : counts.classes) {
        if (row.is_void && !with_void) continue;
        inter += row.inter;
        gt += row.gt;
    }
    const std::uint64_t den = normalized ? gt : counts.omega;
    if (den == 0) throw std::domain_error("pixel accuracy undefined: empty denominator");
    return static_cast<double>(inter) / static_cast<double>(den);
}

double miou_from_counts(const TaskCounts& counts, bool with_void) {
    double sum = 0.0;
    int considered = 0;
    for (const auto& row : counts.classes) {
        if (row.is_void && !with_void) continue;
        const std::uint64_t u = row.unions();
        if (u == 0) continue;  // absent in GT and prediction: excluded
        sum += static_cast<double>(row.inter) / static_cast<double>(u);
        ++considered;
    }
    if (considered == 0) throw std::domain_error("mean IoU undefined: all class unions empty");
    return sum / considered;
}

double pa_vis(const RegionSets& gt, const PredictionMasks& pred, const GroupSchema& schema,
              bool with_void, bool normalized) {
    return pa_from_counts(count_visible(gt, pred, schema), with_void, normalized);
}

double miou_vis(const RegionSets& gt, const PredictionMasks& pred, const GroupSchema& schema,
                bool with_void) {
    return miou_from_counts(count_visible(gt, pred, schema), with_void);
}

double pa_pres(const RegionSets& gt, const PredictionMasks& pred, const GroupSchema& schema,
               bool with_void, bool normalized) {
    return pa_from_counts(count_present(gt, pred, schema), with_void, normalized);
}

double miou_pres(const RegionSets& gt, const PredictionMasks& pred, const GroupSchema& schema,
                 bool with_void) {
    return miou_from_counts(count_present(gt, pred, schema), with_void);
}

// --- aggregated evaluation -----------------------------------------------------

namespace {

struct PerSample {
    TaskCounts vis, pres;
    VariantMetrics variants[4];  // vis w/o, vis w/, pres w/o, pres w/
    std::uint64_t vis_in_pres = 0;
    bool has_violation = false;
    double vmax = 0, vmean = 0, vfrac = 0;
};

}  // namespace

EvalReport evaluate(const Predictor& predictor, std::span<const Sample> split,
                    const GroupSchema& schema, const EvalOptions& options) {
    if (split.empty()) throw std::invalid_argument("evaluate: empty split");

    std::vector<PerSample> per(split.size());
    parallel_for(split.size(), options.threads, [&](std::size_t s) {
        const Sample& sample = split[s];
        const RegionSets regions = regions_from_sample(sample, schema);
        const PredictionOutput out = predictor(sample, s);

        PerSample& slot = per[s];
        slot.vis = count_visible(regions, out.masks, schema);
        slot.pres = count_present(regions, out.masks, schema);
        slot.variants[0] = metrics_from_counts(slot.vis, false);
        slot.variants[1] = metrics_from_counts(slot.vis, true);
        slot.variants[2] = metrics_from_counts(slot.pres, false);
        slot.variants[3] = metrics_from_counts(slot.pres, true);

        const std::size_t hw = static_cast<std::size_t>(out.masks.h) * out.masks.w;
        for (std::size_t px = 0; px < hw; ++px) {
            slot.vis_in_pres += (out.masks.pres[out.masks.vis.v[px]][px] != 0);
        }
        slot.has_violation = out.has_violation;
        slot.vmax = out.violation_max;
        slot.vmean = out.violation_mean;
        slot.vfrac = out.violation_fraction;
    });

    EvalReport report;
    report.samples = split.size();
    report.schema_fingerprint = schema.fingerprint_hex();

    // Micro: counts summed in sample order, then ratios.
    std::uint64_t vis_in_pres = 0;
    std::size_t n_viol = 0;
    double macro_sum[4][3] = {};  // per variant: pa_literal, pa_normalized, miou
    std::size_t miou_defined[4] = {};
    for (const PerSample& slot : per) {
        report.vis_counts.add(slot.vis);
        report.pres_counts.add(slot.pres);
        vis_in_pres += slot.vis_in_pres;
        for (int v = 0; v < 4; ++v) {
            macro_sum[v][0] += slot.variants[v].pa_literal;
            macro_sum[v][1] += slot.variants[v].pa_normalized;
            if (slot.variants[v].miou_defined) {
                macro_sum[v][2] += slot.variants[v].miou;
                ++miou_defined[v];
            }
        }
        if (slot.has_violation) {
            ++n_viol;
            report.plausibility_max = std::max(report.plausibility_max, slot.vmax);
            report.plausibility_mean += slot.vmean;
            report.plausibility_fraction += slot.vfrac;
        }
    }
    report.omega = report.vis_counts.omega;
    report.vis_without = metrics_from_counts(report.vis_counts, false);
    report.vis_with = metrics_from_counts(report.vis_counts, true);
    report.pres_without = metrics_from_counts(report.pres_counts, false);
    report.pres_with = metrics_from_counts(report.pres_counts, true);

    const double n = static_cast<double>(split.size());
    VariantMetrics* macro[4] = {&report.macro_vis_without, &report.macro_vis_with,
                                &report.macro_pres_without, &report.macro_pres_with};
    std::size_t* macro_n[4] = {
        &report.macro_miou_samples_vis_without, &report.macro_miou_samples_vis_with,
        &report.macro_miou_samples_pres_without, &report.macro_miou_samples_pres_with};
    for (int v = 0; v < 4; ++v) {
        macro[v]->pa_literal = macro_sum[v][0] / n;
        macro[v]->pa_normalized = macro_sum[v][1] / n;
        macro[v]->miou_defined = miou_defined[v] > 0;
        macro[v]->miou =
            miou_defined[v] > 0 ? macro_sum[v][2] / static_cast<double>(miou_defined[v]) : 0.0;
        *macro_n[v] = miou_defined[v];
    }

    report.vis_in_pres_fraction =
        static_cast<double>(vis_in_pres) / static_cast<double>(report.omega);
    report.plausibility_evaluated = n_viol > 0;
    if (n_viol > 0) {
        report.plausibility_mean /= static_cast<double>(n_viol);
        report.plausibility_fraction /= static_cast<double>(n_viol);
    }
    return report;
}

nlohmann::ordered_json EvalReport::to_json() const {
    nlohmann::ordered_json j;
    j["report_version"] = report_version;
    j["samples"] = samples;
    j["omega_pixels"] = omega;
    j["schema_fingerprint"] = schema_fingerprint;

    nlohmann::ordered_json metrics;
    metrics["visible"]["without_void"] = variant_json(vis_without);
    metrics["visible"]["with_void"] = variant_json(vis_with);
    metrics["present"]["without_void"] = variant_json(pres_without);
    metrics["present"]["with_void"] = variant_json(pres_with);
    j["metrics"] = std::move(metrics);

    nlohmann::ordered_json macro;
    macro["visible"]["without_void"] = variant_json(macro_vis_without);
    macro["visible"]["without_void"]["miou_samples"] = macro_miou_samples_vis_without;
    macro["visible"]["with_void"] = variant_json(macro_vis_with);
    macro["visible"]["with_void"]["miou_samples"] = macro_miou_samples_vis_with;
    macro["present"]["without_void"] = variant_json(macro_pres_without);
    macro["present"]["without_void"]["miou_samples"] = macro_miou_samples_pres_without;
    macro["present"]["with_void"] = variant_json(macro_pres_with);
    macro["present"]["with_void"]["miou_samples"] = macro_miou_samples_pres_with;
    j["macro"] = std::move(macro);

    nlohmann::ordered_json per_class;
    per_class["visible"] = class_table_json(vis_counts);
    per_class["present"] = class_table_json(pres_counts);
    j["per_class"] = std::move(per_class);

    j["containment"]["vis_in_pres_fraction"] = vis_in_pres_fraction;

    nlohmann::ordered_json plaus;
    plaus["evaluated"] = plausibility_evaluated;
    plaus["max"] = plausibility_max;
    plaus["mean"] = plausibility_mean;
    plaus["fraction_positive"] = plausibility_fraction;
    j["plausibility"] = std::move(plaus);
    return j;
}

template LabelMap derive_vis_from_flat(const Tensor<float>&);
template LabelMap derive_vis_from_flat(const Tensor<double>&);
template LabelMap derive_vis_from_gss(const GroupedPrediction<float>&, const GroupSchema&);
template LabelMap derive_vis_from_gss(const GroupedPrediction<double>&, const GroupSchema&);
template std::vector<std::vector<std::uint8_t>> derive_pres_from_gss(
    const GroupedPrediction<float>&, const GroupSchema&);
template std::vector<std::vector<std::uint8_t>> derive_pres_from_gss(
    const GroupedPrediction<double>&, const GroupSchema&);
template std::vector<std::vector<std::uint8_t>> derive_pres_from_dss(const Tensor<float>&,
                                                                     const GroupSchema&,
                                                                     VoidPooling);
template std::vector<std::vector<std::uint8_t>> derive_pres_from_dss(const Tensor<double>&,
                                                                     const GroupSchema&,
                                                                     VoidPooling);
template PredictionMasks masks_from_gss(const GroupedPrediction<float>&, const GroupSchema&);
template PredictionMasks masks_from_gss(const GroupedPrediction<double>&, const GroupSchema&);
template PredictionMasks masks_from_dss(const Tensor<float>&, const GroupSchema&, VoidPooling);
template PredictionMasks masks_from_dss(const Tensor<double>&, const GroupSchema&, VoidPooling);
template PredictionOutput prediction_from_gss(const GroupedPrediction<float>&, const GroupSchema&);
template PredictionOutput prediction_from_gss(const GroupedPrediction<double>&,
                                              const GroupSchema&);
template PredictionOutput prediction_from_dss(const Tensor<float>&, const GroupSchema&,
                                              VoidPooling);
template PredictionOutput prediction_from_dss(const Tensor<double>&, const GroupSchema&,
                                              VoidPooling);

}  // namespace groupseg
