#pragma once

#include <atomic>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace corthick {

inline unsigned defaultThreadCount() {
    unsigned n = std::thread::hardware_concurrency();
    return n ? n : 1;
}

/// Runs fn(i) for i in [0, n) on a bounded pool. Work items must write to
/// disjoint state; the first exception is rethrown after all threads join.
inline void parallelFor(std::size_t n, unsigned threads,
                        const std::function<void(std::size_t)>& fn) {
    if (threads == 0) threads = defaultThreadCount();
    if (n == 0) return;
    if (threads <= 1 || n == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex errorMutex;
    auto worker = [&]() {
        for (;;) {
            std::size_t i = next.fetch_add(1);
            if (i >= n) return;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(errorMutex);
                if (!error) error = std::current_exception();
                return;
            }
        }
    };
    std::vector<std::thread> pool;
    unsigned count = unsigned(std::min<std::size_t>(threads, n));
    pool.reserve(count);
    for (unsigned t = 0; t < count; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

} // namespace corthick
