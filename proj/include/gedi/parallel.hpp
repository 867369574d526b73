// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstddef>
#include <utility>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace gedi {

/// Execution mode for the data-parallel kernels. Every kernel has a serial
/// reference path and an OpenMP path; both produce bitwise-identical results
/// because reductions are structured over a fixed block grid that does not
/// depend on the thread count.
enum class ExecMode { Serial, Parallel };

inline ExecMode default_exec_mode() {
#ifdef _OPENMP
    return ExecMode::Parallel;
#else
    return ExecMode::Serial;
#endif
}

/// Independent per-item loop. Items must not share mutable state.
template <typename F>
void parallel_for(ExecMode mode, std::size_t n, F&& body) {
    if (mode == ExecMode::Parallel) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
        for (long long i = 0; i < static_cast<long long>(n); ++i)
            body(static_cast<std::size_t>(i));
    } else {
        for (std::size_t i = 0; i < n; ++i) body(i);
    }
}

/// Fixed block grid for deterministic reductions: partials are accumulated
/// per block (in index order within a block) and folded in block order, so
/// the floating-point summation order is independent of both ExecMode and
/// the number of OpenMP threads.
inline std::size_t reduction_block_count(std::size_t n) {
    return std::min<std::size_t>(64, n);
}

struct BlockRange {
    std::size_t begin;
    std::size_t end;
};

inline BlockRange reduction_block(std::size_t n, std::size_t block, std::size_t n_blocks) {
    return {n * block / n_blocks, n * (block + 1) / n_blocks};
}

} // namespace gedi
