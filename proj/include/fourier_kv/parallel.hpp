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

namespace fourier_kv {

/// Worker count from FOURIER_KV_THREADS; 1 when unset or invalid.
inline std::size_t thread_count_from_env() {
    const char* env = std::getenv("FOURIER_KV_THREADS");
    if (!env || !*env) return 1;
    try {
        const long n = std::stol(env);
        return n > 0 ? static_cast<std::size_t>(n) : 1;
    } catch (...) {
        return 1;
    }
}

/// Runs fn(i) for i in [0, n). Each index is handled exactly once; callers
/// write results into pre-sized slots so output order never depends on
/// scheduling. The first exception thrown by any task is rethrown.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn, std::size_t threads = 1) {
    threads = std::max<std::size_t>(1, std::min(threads, n));
    if (threads == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mu;
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (std::size_t w = 0; w < threads; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(error_mu);
                    if (!error) error = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

}  // namespace fourier_kv
