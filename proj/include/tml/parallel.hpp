#pragma once

#include <cstddef>
#include <functional>

namespace tml {

/// Process-wide cap on worker threads (>= 1). Initialised from the
/// TML_WORKERS environment variable when set, otherwise 1.
std::size_t max_workers() noexcept;
void set_max_workers(std::size_t n) noexcept;

/// Runs body(i) for i in [0, count). Each index is processed exactly once;
/// callers write results into per-index slots so the outcome is identical for
/// any worker count. Calls nested inside a parallel region run serially.
/// Every index runs; the exception from the lowest failing index is rethrown.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& body);

} // namespace tml
