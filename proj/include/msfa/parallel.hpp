// Copyright Contributors to the msfa-forge project.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace msfa {

namespace detail {
inline std::atomic<int>& thread_setting()
{
    static std::atomic<int> value{0};
    return value;
}
}  // namespace detail

/// Worker count used by the parallel loops. Zero selects all hardware threads.
inline void set_thread_count(int n) { detail::thread_setting().store(std::max(n, 0)); }

inline int thread_count()
{
    int n = detail::thread_setting().load();
    if (n > 0)
        return n;
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

/// Runs fn(i) for i in [begin, end) over contiguous chunks, one per worker.
/// Callers must only write to disjoint outputs; the result is then independent
/// of the thread count.
template <class Fn>
void parallel_for(std::ptrdiff_t begin, std::ptrdiff_t end, Fn&& fn)
{
    const std::ptrdiff_t count = end - begin;
    if (count <= 0)
        return;
    const std::ptrdiff_t workers = std::min<std::ptrdiff_t>(thread_count(), count);
    if (workers <= 1) {
        for (std::ptrdiff_t i = begin; i < end; ++i)
            fn(i);
        return;
    }

    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    const std::ptrdiff_t chunk = (count + workers - 1) / workers;
    for (std::ptrdiff_t w = 0; w < workers; ++w) {
        const std::ptrdiff_t lo = begin + w * chunk;
        const std::ptrdiff_t hi = std::min(end, lo + chunk);
        if (lo >= hi)
            break;
        pool.emplace_back([&, lo, hi] {
            try {
                for (std::ptrdiff_t i = lo; i < hi; ++i)
                    fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(failure_mutex);
                if (!failure)
                    failure = std::current_exception();
            }
        });
    }
    for (auto& t : pool)
        t.join();
    if (failure)
        std::rethrow_exception(failure);
}

}  // namespace msfa
