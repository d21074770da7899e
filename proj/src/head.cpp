// Copyright (c) 2026 groupseg contributors
// SPDX-License-Identifier: Apache-2.0

#include "groupseg/head.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

#include "groupseg/errors.hpp"

namespace groupseg {

namespace {

constexpr double kProbFloor = 1e-12;  // clamp before log; keeps losses finite

template <typename T>
void check_finite(const Tensor<T>& t, const char* what) {
    for (const T& x : t.v) {
        if (!std::isfinite(static_cast<double>(x))) {
            throw std::invalid_argument(std::string(what) + ": non-finite input activation");
        }
    }
}

// Softmax of `dim` values strided `stride` apart, starting at `in`.
template <typename T>
void softmax_strided(const T* in, T* out, int dim, std::size_t stride) {
    T m = in[0];
    for (int k = 1; k < dim; ++k) m = std::max(m, in[k * stride]);
    T sum = T(0);
    for (int k = 0; k < dim; ++k) {
        const T e = std::exp(in[k * stride] - m);
        out[k * stride] = e;
        sum += e;
    }
    const T inv = T(1) / sum;
    for (int k = 0; k < dim; ++k) out[k * stride] *= inv;
}

}  // namespace

BlockLayout BlockLayout::of(const GroupSchema& schema) {
    BlockLayout l;
    l.p_offset = 0;
    l.p_dim = schema.num_groups();
    int off = l.p_dim;
    l.q_offset.resize(schema.num_groups());
    l.q_dim.resize(schema.num_groups());
    for (int i = 0; i < schema.num_groups(); ++i) {
        l.q_offset[i] = off;
        l.q_dim[i] = schema.block_dim(i);
        off += l.q_dim[i];
    }
    l.total = off;
    return l;
}

template <typename T>
Tensor<T> flat_softmax(const Tensor<T>& logits) {
    if (logits.c <= 0) throw std::invalid_argument("flat_softmax: no channels");
    check_finite(logits, "flat_softmax");
    Tensor<T> out(logits.c, logits.h, logits.w);
    const std::size_t hw = static_cast<std::size_t>(logits.h) * logits.w;
    for (std::size_t px = 0; px < hw; ++px) {
        softmax_strided(logits.v.data() + px, out.v.data() + px, logits.c, hw);
    }
    return out;
}

template <typename T>
GroupedPrediction<T> grouped_softmax(const Tensor<T>& logits, const GroupSchema& schema,
                                     bool pre_sigmoid) {
    const BlockLayout layout = BlockLayout::of(schema);
    if (logits.c != layout.total) {
        throw std::invalid_argument("grouped_softmax: expected " + std::to_string(layout.total) +
                                    " channels, got " + std::to_string(logits.c));
    }
    check_finite(logits, "grouped_softmax");
    GroupedPrediction<T> pred;
    pred.probs = Tensor<T>(logits.c, logits.h, logits.w);
    const std::size_t hw = static_cast<std::size_t>(logits.h) * logits.w;

    const Tensor<T>* src = &logits;
    Tensor<T> squashed;
    if (pre_sigmoid) {
        squashed = Tensor<T>(logits.c, logits.h, logits.w);
        for (std::size_t k = 0; k < logits.v.size(); ++k) {
            squashed.v[k] = T(1) / (T(1) + std::exp(-logits.v[k]));
        }
        src = &squashed;
    }

    for (std::size_t px = 0; px < hw; ++px) {
        const T* in = src->v.data() + px;
        T* out = pred.probs.v.data() + px;
        softmax_strided(in + layout.p_offset * hw, out + layout.p_offset * hw, layout.p_dim, hw);
        for (int i = 0; i < schema.num_groups(); ++i) {
            softmax_strided(in + layout.q_offset[i] * hw, out + layout.q_offset[i] * hw,
                            layout.q_dim[i], hw);
        }
    }
    return pred;
}

template <typename T>
ViolationStats<T> plausibility_violation(const GroupedPrediction<T>& pred,
                                         const GroupSchema& schema) {
    const BlockLayout layout = BlockLayout::of(schema);
    if (pred.probs.c != layout.total) {
        throw std::invalid_argument("plausibility_violation: prediction/schema channel mismatch");
    }
    const std::size_t hw = static_cast<std::size_t>(pred.probs.h) * pred.probs.w;
    ViolationStats<T> stats;
    stats.map = Tensor<T>(schema.num_groups(), pred.probs.h, pred.probs.w);
    std::size_t positive = 0;
    for (int i = 0; i < schema.num_groups(); ++i) {
        if (!schema.group_has_void(i)) continue;  // map stays 0 for this group
        auto out = stats.map.plane(i);
        const T* p = pred.probs.v.data() + static_cast<std::size_t>(layout.p_offset + i) * hw;
        const T* q0 = pred.probs.v.data() + static_cast<std::size_t>(layout.q_offset[i]) * hw;
        for (std::size_t px = 0; px < hw; ++px) {
            const T v = std::max(T(0), p[px] - (T(1) - q0[px]));
            out[px] = v;
            if (v > T(0)) ++positive;
        }
    }
    const std::size_t n = stats.map.v.size();
    if (n > 0) {
        stats.max = *std::max_element(stats.map.v.begin(), stats.map.v.end());
        stats.mean = pairwise_sum(std::span<const T>(stats.map.v)) / static_cast<T>(n);
        stats.fraction_positive = static_cast<double>(positive) / static_cast<double>(n);
    }
    return stats;
}

template <typename T>
LossValue<T> loss_ce(const Tensor<T>& logits, const LabelMap& visible_gt,
                     const GroupSchema& schema) {
    if (logits.c != schema.num_categories()) {
        throw std::invalid_argument("loss_ce: expected " +
                                    std::to_string(schema.num_categories()) + " channels, got " +
                                    std::to_string(logits.c));
    }
    if (logits.h != visible_gt.h || logits.w != visible_gt.w) {
        throw std::invalid_argument("loss_ce: logits/label shape mismatch");
    }
    const std::size_t hw = static_cast<std::size_t>(logits.h) * logits.w;
    const Tensor<T> probs = flat_softmax(logits);

    LossValue<T> out;
    out.grad = Tensor<T>(logits.c, logits.h, logits.w);
    std::vector<T> pixel_loss(hw);
    const T inv_n = T(1) / static_cast<T>(hw);
    for (std::size_t px = 0; px < hw; ++px) {
        const std::uint16_t c = visible_gt.v[px];
        if (c >= static_cast<std::uint16_t>(logits.c)) {
            throw std::invalid_argument("loss_ce: label " + std::to_string(c) +
                                        " out of range at pixel " + std::to_string(px));
        }
        for (int k = 0; k < logits.c; ++k) {
            const std::size_t at = static_cast<std::size_t>(k) * hw + px;
            out.grad.v[at] = (probs.v[at] - (k == c ? T(1) : T(0))) * inv_n;
        }
        const T p = std::max(probs.v[static_cast<std::size_t>(c) * hw + px], T(kProbFloor));
        pixel_loss[px] = -std::log(p);
    }
    out.loss = pairwise_sum(std::span<const T>(pixel_loss)) * inv_n;
    return out;
}

template <typename T>
LossValue<T> loss_grouped(const Tensor<T>& logits, const RegionSets& regions,
                          const GroupSchema& schema, T lambda, bool pre_sigmoid) {
    const BlockLayout layout = BlockLayout::of(schema);
    if (logits.c != layout.total) {
        throw std::invalid_argument("loss_grouped: expected " + std::to_string(layout.total) +
                                    " channels, got " + std::to_string(logits.c));
    }
    if (logits.h != regions.h || logits.w != regions.w) {
        throw std::invalid_argument("loss_grouped: logits/region shape mismatch");
    }
    if (static_cast<int>(regions.vis.size()) != schema.num_categories() ||
        static_cast<int>(regions.group_void.size()) != schema.num_groups()) {
        throw std::invalid_argument("loss_grouped: regions/schema arity mismatch");
    }
    const int m1 = schema.num_groups();
    const std::size_t hw = static_cast<std::size_t>(logits.h) * logits.w;

    // Per-pixel supervision targets, reconstructed from the region sets.
    // visible category -> group target; per group, (within-index, weight).
    std::vector<std::int32_t> group_target(hw, -1);
    std::vector<std::vector<std::int32_t>> q_target(m1, std::vector<std::int32_t>(hw, -1));
    std::vector<std::vector<T>> q_weight(m1, std::vector<T>(hw, T(0)));
    for (int c = 0; c < schema.num_categories(); ++c) {
        const auto [gi, wj] = schema.group_of(c);
        // Block channel, not within-group index: void-less groups have no
        // channel 0 slot, so their categories shift down by one.
        const std::int32_t ch = schema.group_has_void(gi) ? wj : wj - 1;
        for (std::uint32_t px : regions.vis[c]) {
            if (group_target[px] != -1) {
                throw std::invalid_argument("loss_grouped: visible regions overlap at pixel " +
                                            std::to_string(px));
            }
            group_target[px] = gi;
            q_target[gi][px] = ch;
            q_weight[gi][px] = T(1);
        }
        for (std::uint32_t px : regions.occ[c]) {
            q_target[gi][px] = ch;
            q_weight[gi][px] = lambda;
        }
    }
    for (int i = 0; i < m1; ++i) {
        for (std::uint32_t px : regions.group_void[i]) {
            q_target[i][px] = 0;  // the void slot
            q_weight[i][px] = lambda;
        }
    }
    for (std::size_t px = 0; px < hw; ++px) {
        if (group_target[px] < 0) {
            throw std::invalid_argument("loss_grouped: no visible category at pixel " +
                                        std::to_string(px));
        }
        for (int i = 0; i < m1; ++i) {
            if (q_target[i][px] < 0) {
                throw std::invalid_argument("loss_grouped: group " + schema.group_name(i) +
                                            " unsupervised at pixel " + std::to_string(px));
            }
        }
    }

    const GroupedPrediction<T> pred = grouped_softmax(logits, schema, pre_sigmoid);
    const Tensor<T>& probs = pred.probs;

    LossValue<T> out;
    out.grad = Tensor<T>(logits.c, logits.h, logits.w);
    std::vector<T> pixel_loss(hw);
    const T inv_n = T(1) / static_cast<T>(hw);

    // Fused softmax + weighted NLL backward, block by block:
    // d loss / d s_k = w * (softmax_k - [k == target]) / |pixels|.
    auto add_block = [&](int offset, int dim, const std::int32_t* target, const T* weight,
                         bool unit_weight) {
        for (std::size_t px = 0; px < hw; ++px) {
            const T w = unit_weight ? T(1) : weight[px];
            const std::int32_t t = target[px];
            const std::size_t base = static_cast<std::size_t>(offset) * hw + px;
            for (int k = 0; k < dim; ++k) {
                const std::size_t at = base + static_cast<std::size_t>(k) * hw;
                out.grad.v[at] += w * (probs.v[at] - (k == t ? T(1) : T(0))) * inv_n;
            }
            const T p = std::max(probs.v[base + static_cast<std::size_t>(t) * hw], T(kProbFloor));
            pixel_loss[px] -= w * std::log(p);
        }
    };

    add_block(layout.p_offset, layout.p_dim, group_target.data(), nullptr, true);
    for (int i = 0; i < m1; ++i) {
        add_block(layout.q_offset[i], layout.q_dim[i], q_target[i].data(), q_weight[i].data(),
                  false);
    }

    if (pre_sigmoid) {
        // Chain through s = sigmoid(z): dL/dz = dL/ds * s * (1 - s).
        for (std::size_t k = 0; k < logits.v.size(); ++k) {
            const T s = T(1) / (T(1) + std::exp(-logits.v[k]));
            out.grad.v[k] *= s * (T(1) - s);
        }
    }

    out.loss = pairwise_sum(std::span<const T>(pixel_loss)) * inv_n;
    return out;
}

template Tensor<float> flat_softmax(const Tensor<float>&);
template Tensor<double> flat_softmax(const Tensor<double>&);
template GroupedPrediction<float> grouped_softmax(const Tensor<float>&, const GroupSchema&, bool);
template GroupedPrediction<double> grouped_softmax(const Tensor<double>&, const GroupSchema&,
                                                   bool);
template ViolationStats<float> plausibility_violation(const GroupedPrediction<float>&,
                                                      const GroupSchema&);
template ViolationStats<double> plausibility_violation(const GroupedPrediction<double>&,
                                                       const GroupSchema&);
template LossValue<float> loss_ce(const Tensor<float>&, const LabelMap&, const GroupSchema&);
template LossValue<double> loss_ce(const Tensor<double>&, const LabelMap&, const GroupSchema&);
template LossValue<float> loss_grouped(const Tensor<float>&, const RegionSets&, const GroupSchema&,
                                       float, bool);
template LossValue<double> loss_grouped(const Tensor<double>&, const RegionSets&,
                                        const GroupSchema&, double, bool);

}  // namespace groupseg
