// Copyright (c) 2026 groupseg contributors
// SPDX-License-Identifier: Apache-2.0
//
// Minimal dense containers shared by every module. Pixels are addressed
// row-major from the top-left; channel planes are contiguous (C, H, W).

#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace groupseg {

template <typename T>
struct Grid {
    int h = 0;
    int w = 0;
    std::vector<T> v;

    Grid() = default;
    Grid(int height, int width, T fill = T{})
        : h(height), w(width), v(static_cast<std::size_t>(height) * width, fill) {}

    T& at(int y, int x) { return v[static_cast<std::size_t>(y) * w + x]; }
    const T& at(int y, int x) const { return v[static_cast<std::size_t>(y) * w + x]; }
    T& operator[](std::size_t i) { return v[i]; }
    const T& operator[](std::size_t i) const { return v[i]; }
    std::size_t size() const { return v.size(); }
    template <typename U>
    bool same_shape(const Grid<U>& o) const {
        return h == o.h && w == o.w;
    }
    bool operator==(const Grid& o) const = default;
};

template <typename T>
struct Tensor {
    int c = 0;
    int h = 0;
    int w = 0;
    std::vector<T> v;

    Tensor() = default;
    Tensor(int channels, int height, int width, T fill = T{})
        : c(channels),
          h(height),
          w(width),
          v(static_cast<std::size_t>(channels) * height * width, fill) {}

    std::size_t plane_size() const { return static_cast<std::size_t>(h) * w; }
    std::size_t size() const { return v.size(); }

    T& at(int ch, int y, int x) {
        return v[(static_cast<std::size_t>(ch) * h + y) * w + x];
    }
    const T& at(int ch, int y, int x) const {
        return v[(static_cast<std::size_t>(ch) * h + y) * w + x];
    }

    std::span<T> plane(int ch) { return {v.data() + ch * plane_size(), plane_size()}; }
    std::span<const T> plane(int ch) const {
        return {v.data() + ch * plane_size(), plane_size()};
    }

    bool same_shape(const Tensor& o) const { return c == o.c && h == o.h && w == o.w; }
    bool operator==(const Tensor& o) const = default;
};

using LabelMap = Grid<std::uint16_t>;
using DepthMap = Grid<float>;

// Deterministic pairwise-tree sum. Threading never reorders loss
// reductions, so results are bitwise stable for any worker count.
template <typename T>
T pairwise_sum(std::span<const T> xs) {
    if (xs.size() <= 8) {
        T acc = T(0);
        for (const T& x : xs) acc += x;
        return acc;
    }
    const std::size_t half = xs.size() / 2;
    return pairwise_sum(xs.subspan(0, half)) + pairwise_sum(xs.subspan(half));
}

template <typename T>
T pairwise_sum(const std::vector<T>& xs) {
    return pairwise_sum(std::span<const T>(xs));
}

}  // namespace groupseg
