// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>

namespace ng {

// Worker count: NEUROGEN_THREADS env var when set, hardware concurrency
// otherwise, never less than 1.
int max_threads();

// Runs fn(begin, end) over disjoint chunks of [0, n).  Chunks are fixed by
// (n, worker count) alone, so results stay bit-identical for any thread
// setting as long as chunks write disjoint output.  Small n runs inline.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn);

}  // namespace ng
