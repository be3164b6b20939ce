// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>

namespace pxdrop {

// Calls fn(i) for i in [0, count) on up to `threads` workers. Indices are
// handed out in contiguous blocks; callers write results by index, so output
// is independent of the thread count. The first exception is rethrown.
void parallel_for(std::size_t count, int threads, const std::function<void(std::size_t)>& fn);

}  // namespace pxdrop
