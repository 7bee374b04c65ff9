// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>

namespace rna {

/// Kernel thread cap from RNA_THREADS (default 1, minimum 1).
std::size_t kernel_threads();

/// Runs fn(i) for i in [0, n). Every index is handled by exactly one thread,
/// so per-index results do not depend on the thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace rna
