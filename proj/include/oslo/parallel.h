#pragma once

#include <cstdint>
#include <functional>

namespace oslo {

// Worker cap: OSLO_THREADS if set and positive, else hardware concurrency.
int worker_count();

// Splits [0, n) into contiguous static chunks, one per worker. Only use for
// loops whose iterations write disjoint outputs; the result is then
// independent of the worker count.
void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& body);

}  // namespace oslo
