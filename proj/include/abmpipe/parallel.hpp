#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace abmpipe {

/// Runs body(i) for i in [0, n) on up to `threads` workers. Each index is
/// handled exactly once, so results written to slot i do not depend on the
/// thread count. The exception from the lowest failing index is rethrown.
template <typename Body>
void parallel_for(std::size_t n, int threads, Body&& body) {
    const auto workers = static_cast<std::size_t>(std::max(1, threads));
    if (workers == 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::vector<std::exception_ptr> errors(n);
    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (std::size_t i = next++; i < n; i = next++) {
            try {
                body(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < std::min(workers, n); ++t) pool.emplace_back(work);
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

}  // namespace abmpipe
