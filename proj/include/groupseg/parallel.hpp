// Copyright (c) 2026 groupseg contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <exception>
#include <thread>
#include <vector>

namespace groupseg {

// Run fn(i) for i in [0, n) on up to `threads` workers, contiguous chunks.
// Callers get determinism by writing only to slot i; any exception is
// rethrown on the calling thread (lowest chunk wins, so reruns agree).
template <typename Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
    const int usable = std::max(1, std::min<int>(threads, static_cast<int>(n)));
    if (usable == 1 || n == 0) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(usable));
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(usable));
    const std::size_t chunk = (n + static_cast<std::size_t>(usable) - 1) / usable;
    for (int t = 0; t < usable; ++t) {
        const std::size_t lo = static_cast<std::size_t>(t) * chunk;
        const std::size_t hi = std::min(n, lo + chunk);
        pool.emplace_back([&, t, lo, hi] {
            try {
                for (std::size_t i = lo; i < hi; ++i) fn(i);
            } catch (...) {
                errors[static_cast<std::size_t>(t)] = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    for (const auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

}  // namespace groupseg
