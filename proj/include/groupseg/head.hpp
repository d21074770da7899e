// Copyright (c) 2026 groupseg contributors
// SPDX-License-Identifier: Apache-2.0
//
// The structured output head and both training losses.
//
// The flat head is an N-way softmax with cross-entropy on the visible
// label. The grouped head predicts, per pixel, a distribution p over the
// M+1 groups (which group is visible) and one distribution q^i per group
// over that group's categories plus its void slot (which category of the
// group is present, if any). Supervision: the visible category's q entry
// gets full weight, occluded-present entries and void entries get weight
// lambda. Losses are mean negative log-likelihood per pixel and return
// analytic gradients with respect to the logits.

#pragma once

#include <vector>

#include "groupseg/sample.hpp"
#include "groupseg/schema.hpp"
#include "groupseg/tensor.hpp"

namespace groupseg {

// Channel layout of the grouped head: the p block first, then q^0..q^M in
// schema order.
struct BlockLayout {
    int p_offset = 0;
    int p_dim = 0;
    std::vector<int> q_offset;
    std::vector<int> q_dim;
    int total = 0;

    static BlockLayout of(const GroupSchema& schema);
};

template <typename T>
struct GroupedPrediction {
    Tensor<T> probs;  // activation_count(schema) channels, blockwise normalized

    int height() const { return probs.h; }
    int width() const { return probs.w; }
};

template <typename T>
struct LossValue {
    T loss = T(0);        // mean negative log-likelihood per pixel
    Tensor<T> grad;       // d loss / d logits
};

template <typename T>
struct ViolationStats {
    Tensor<T> map;             // per pixel and group: max(0, p_i - (1 - q^i_0))
    T max = T(0);
    T mean = T(0);             // over all (pixel, group) entries
    double fraction_positive = 0.0;
};

// Per-pixel softmax over all channels, max-subtracted. Throws on
// non-finite inputs.
template <typename T>
Tensor<T> flat_softmax(const Tensor<T>& logits);

// Blockwise softmax per the layout above. With `pre_sigmoid` the logits
// pass through a sigmoid before normalization (a compressed-range variant
// of the same head; off by default).
template <typename T>
GroupedPrediction<T> grouped_softmax(const Tensor<T>& logits, const GroupSchema& schema,
                                     bool pre_sigmoid = false);

// Violation of p_i <= 1 - q^i_0. Groups without a void slot contribute 0.
// Measured only; never enforced at inference.
template <typename T>
ViolationStats<T> plausibility_violation(const GroupedPrediction<T>& pred,
                                         const GroupSchema& schema);

// Flat N-way softmax cross-entropy on the visible labels, with the fused
// (softmax - one_hot) backward.
template <typename T>
LossValue<T> loss_ce(const Tensor<T>& logits, const LabelMap& visible_gt,
                     const GroupSchema& schema);

// The grouped loss: cross-entropy on the visible group through p, plus
// per-group cross-entropy through q^i with weight 1 on visible pixels and
// weight lambda on occluded-present and void pixels.
template <typename T>
LossValue<T> loss_grouped(const Tensor<T>& logits, const RegionSets& regions,
                          const GroupSchema& schema, T lambda, bool pre_sigmoid = false);

extern template Tensor<float> flat_softmax(const Tensor<float>&);
extern template Tensor<double> flat_softmax(const Tensor<double>&);
extern template GroupedPrediction<float> grouped_softmax(const Tensor<float>&,
                                                         const GroupSchema&, bool);
extern template GroupedPrediction<double> grouped_softmax(const Tensor<double>&,
                                                          const GroupSchema&, bool);
extern template ViolationStats<float> plausibility_violation(const GroupedPrediction<float>&,
                                                             const GroupSchema&);
extern template ViolationStats<double> plausibility_violation(const GroupedPrediction<double>&,
                                                              const GroupSchema&);
extern template LossValue<float> loss_ce(const Tensor<float>&, const LabelMap&,
                                         const GroupSchema&);
extern template LossValue<double> loss_ce(const Tensor<double>&, const LabelMap&,
                                          const GroupSchema&);
extern template LossValue<float> loss_grouped(const Tensor<float>&, const RegionSets&,
                                              const GroupSchema&, float, bool);
extern template LossValue<double> loss_grouped(const Tensor<double>&, const RegionSets&,
                                               const GroupSchema&, double, bool);

}  // namespace groupseg
