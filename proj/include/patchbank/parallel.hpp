#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace patchbank {

// Worker count: PATCHBANK_THREADS when set to a positive integer, otherwise
// the logical core count.
inline std::size_t worker_count() {
    if (const char* env = std::getenv("PATCHBANK_THREADS")) {
        try {
            const long v = std::stol(env);
            if (v > 0) {
                return static_cast<std::size_t>(v);
            }
        } catch (...) {
        }
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : hw;
}

namespace detail {
inline thread_local bool in_parallel_region = false;
}  // namespace detail

// Runs fn(i) for every i in [0, n). Nested calls run serially on the
// calling worker. Work items are claimed dynamically, so
// callers must write results into per-index slots to stay deterministic.
// The first exception thrown by any item is rethrown on the calling thread.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn, std::size_t max_workers = 0) {
    std::size_t workers = max_workers == 0 ? worker_count() : max_workers;
    workers = std::min(workers, n);
    if (workers <= 1 || detail::in_parallel_region) {
        for (std::size_t i = 0; i < n; ++i) {
            fn(i);
        }
        return;
    }

    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto body = [&] {
        const bool outer = detail::in_parallel_region;
        detail::in_parallel_region = true;
        struct Restore {
            bool v;
            ~Restore() { detail::in_parallel_region = v; }
        } restore{outer};
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= n) {
                return;
            }
            try {
                fn(i);
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) {
                    failure = std::current_exception();
                }
                next.store(n);
                return;
            }
        }
    };

    std::vector<std::jthread> pool;
    pool.reserve(workers - 1);
    for (std::size_t w = 1; w < workers; ++w) {
        pool.emplace_back(body);
    }
    body();
    pool.clear();
    if (failure) {
        std::rethrow_exception(failure);
    }
}

}  // namespace patchbank
