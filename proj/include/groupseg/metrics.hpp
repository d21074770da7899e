// Copyright (c) 2026 groupseg contributors
// SPDX-License-Identifier: Apache-2.0
//
// Occlusion-aware evaluation: derivations between the flat and grouped
// prediction spaces, the visible/present pixel-accuracy and mean-IoU
// metrics, and aggregated JSON reports.
//
// Conventions used throughout:
//   - Argmax ties break to the lowest index, everywhere.
//   - MIoU excludes classes whose union is empty from the mean.
//   - PA comes in a literal form (denominator |Omega|, may exceed 1 for
//     present sets, which overlap) and a normalized form (denominator
//     sum of ground-truth set sizes, always in [0,1]).
//   - "With void" accounting adds one pseudo-class per voided group: the
//     region where no category of the group is present (or visible, for
//     the visible task).

#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "groupseg/head.hpp"
#include "groupseg/sample.hpp"
#include "groupseg/schema.hpp"
#include "groupseg/tensor.hpp"

#include "json.hpp"

namespace groupseg {

// How a flat posterior's background probabilities collapse into the void
// pseudo-entry when restricting to G_0 union G_i. Max keeps the rule
// scale-free under per-class monotone recalibration; Sum treats the
// background as a single merged event.
enum class VoidPooling { Max, Sum };

struct PredictionMasks {
    int h = 0, w = 0;
    // Predicted visible category per pixel; a partition of Omega by
    // construction.
    LabelMap vis;
    // pres[c][pixel] != 0 iff category c is predicted present. Sets of
    // different groups may overlap.
    std::vector<std::vector<std::uint8_t>> pres;
};

// --- prediction-space derivations -----------------------------------------

// Plain per-pixel argmax over the flat posterior.
template <typename T>
LabelMap derive_vis_from_flat(const Tensor<T>& posterior);

// i_hat = argmax_i p_i, j_hat = argmax_{j>=1} q^{i_hat}_j (void excluded),
// label = C(i_hat, j_hat).
template <typename T>
LabelMap derive_vis_from_gss(const GroupedPrediction<T>& pred, const GroupSchema& schema);

// Category c = C(i,j) is present at x iff j is the argmax of q^i(x), void
// slot included.
template <typename T>
std::vector<std::vector<std::uint8_t>> derive_pres_from_gss(const GroupedPrediction<T>& pred,
                                                            const GroupSchema& schema);

// For c in G_i (i >= 1): restrict the posterior to G_0 union G_i, pool the
// G_0 entries into a void pseudo-entry, take the argmax. For c in G_0:
// argmax over G_0 alone.
template <typename T>
std::vector<std::vector<std::uint8_t>> derive_pres_from_dss(const Tensor<T>& posterior,
                                                            const GroupSchema& schema,
                                                            VoidPooling pooling = VoidPooling::Max);

template <typename T>
PredictionMasks masks_from_gss(const GroupedPrediction<T>& pred, const GroupSchema& schema);

template <typename T>
PredictionMasks masks_from_dss(const Tensor<T>& posterior, const GroupSchema& schema,
                               VoidPooling pooling = VoidPooling::Max);

// --- counting --------------------------------------------------------------

struct ClassCounts {
    std::string name;
    bool is_void = false;  // per-group void pseudo-class
    std::uint64_t inter = 0;
    std::uint64_t gt = 0;
    std::uint64_t pred = 0;

    std::uint64_t unions() const { return gt + pred - inter; }
};

// N category rows followed by one void pseudo-row per voided group.
struct TaskCounts {
    std::vector<ClassCounts> classes;
    std::uint64_t omega = 0;

    void add(const TaskCounts& other);
};

TaskCounts count_visible(const RegionSets& gt, const PredictionMasks& pred,
                         const GroupSchema& schema);
TaskCounts count_present(const RegionSets& gt, const PredictionMasks& pred,
                         const GroupSchema& schema);

double pa_from_counts(const TaskCounts& counts, bool with_void, bool normalized);
// Throws std::domain_error if every considered class has an empty union.
double miou_from_counts(const TaskCounts& counts, bool with_void);

// --- single-sample metrics ---------------------------------------------------

double pa_vis(const RegionSets& gt, const PredictionMasks& pred, const GroupSchema& schema,
              bool with_void = false, bool normalized = false);
double miou_vis(const RegionSets& gt, const PredictionMasks& pred, const GroupSchema& schema,
                bool with_void = false);
double pa_pres(const RegionSets& gt, const PredictionMasks& pred, const GroupSchema& schema,
               bool with_void = false, bool normalized = false);
double miou_pres(const RegionSets& gt, const PredictionMasks& pred, const GroupSchema& schema,
                 bool with_void = false);

// --- aggregated evaluation ---------------------------------------------------

struct PredictionOutput {
    PredictionMasks masks;
    // Plausibility-violation summary, when the predictor exposes grouped
    // probabilities (GSS). Flat baselines leave has_violation false.
    bool has_violation = false;
    double violation_max = 0.0;
    double violation_mean = 0.0;
    double violation_fraction = 0.0;
};

template <typename T>
PredictionOutput prediction_from_gss(const GroupedPrediction<T>& pred, const GroupSchema& schema);
template <typename T>
PredictionOutput prediction_from_dss(const Tensor<T>& posterior, const GroupSchema& schema,
                                     VoidPooling pooling = VoidPooling::Max);

struct VariantMetrics {
    double pa_literal = 0.0;
    double pa_normalized = 0.0;
    double miou = 0.0;
    bool miou_defined = false;
};

struct EvalReport {
    int report_version = 1;
    std::size_t samples = 0;
    std::uint64_t omega = 0;
    std::string schema_fingerprint;

    // Micro-averaged (counts summed across samples, then ratios).
    VariantMetrics vis_without, vis_with, pres_without, pres_with;
    TaskCounts vis_counts, pres_counts;  // per-class tables

    // Macro diagnostics: unweighted means of per-sample values; miou means
    // run over the samples where the per-sample value is defined.
    VariantMetrics macro_vis_without, macro_vis_with, macro_pres_without, macro_pres_with;
    std::size_t macro_miou_samples_vis_without = 0;
    std::size_t macro_miou_samples_vis_with = 0;
    std::size_t macro_miou_samples_pres_without = 0;
    std::size_t macro_miou_samples_pres_with = 0;

    // Fraction of pixels whose predicted visible category is also predicted
    // present there. 1.0 means vis subset-of pres held everywhere; it is
    // measured, not assumed.
    double vis_in_pres_fraction = 0.0;

    bool plausibility_evaluated = false;
    double plausibility_max = 0.0;
    double plausibility_mean = 0.0;       // mean of per-sample means
    double plausibility_fraction = 0.0;   // mean of per-sample fractions

    nlohmann::ordered_json to_json() const;
};

struct EvalOptions {
    int threads = 1;
};

using Predictor = std::function<PredictionOutput(const Sample& sample, std::size_t index)>;

// Runs the predictor over every sample and micro/macro-aggregates. Sample
// order fixes the aggregation order, so the report is identical for any
// thread count. Throws std::invalid_argument on an empty split.
EvalReport evaluate(const Predictor& predictor, std::span<const Sample> split,
                    const GroupSchema& schema, const EvalOptions& options = {});

extern template LabelMap derive_vis_from_flat(const Tensor<float>&);
extern template LabelMap derive_vis_from_flat(const Tensor<double>&);
extern template LabelMap derive_vis_from_gss(const GroupedPrediction<float>&, const GroupSchema&);
extern template LabelMap derive_vis_from_gss(const GroupedPrediction<double>&, const GroupSchema&);
extern template std::vector<std::vector<std::uint8_t>> derive_pres_from_gss(
    const GroupedPrediction<float>&, const GroupSchema&);
extern template std::vector<std::vector<std::uint8_t>> derive_pres_from_gss(
    const GroupedPrediction<double>&, const GroupSchema&);
extern template std::vector<std::vector<std::uint8_t>> derive_pres_from_dss(const Tensor<float>&,
                                                                            const GroupSchema&,
                                                                            VoidPooling);
extern template std::vector<std::vector<std::uint8_t>> derive_pres_from_dss(const Tensor<double>&,
                                                                            const GroupSchema&,
                                                                            VoidPooling);
extern template PredictionMasks masks_from_gss(const GroupedPrediction<float>&,
                                               const GroupSchema&);
extern template PredictionMasks masks_from_gss(const GroupedPrediction<double>&,
                                               const GroupSchema&);
extern template PredictionMasks masks_from_dss(const Tensor<float>&, const GroupSchema&,
                                               VoidPooling);
extern template PredictionMasks masks_from_dss(const Tensor<double>&, const GroupSchema&,
                                               VoidPooling);
extern template PredictionOutput prediction_from_gss(const GroupedPrediction<float>&,
                                                     const GroupSchema&);
extern template PredictionOutput prediction_from_gss(const GroupedPrediction<double>&,
                                                     const GroupSchema&);
extern template PredictionOutput prediction_from_dss(const Tensor<float>&, const GroupSchema&,
                                                     VoidPooling);
extern template PredictionOutput prediction_from_dss(const Tensor<double>&, const GroupSchema&,
                                                     VoidPooling);

}  // namespace groupseg
