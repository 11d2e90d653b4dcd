#pragma once

#include <atomic>
#include <cstdint>
#include <thread>
#include <vector>

namespace brainattr {

// Runs fn(i) for i in [0, n) on up to `jobs` threads. Work items must be
// independent; callers write results into preallocated index-addressed slots
// so the outcome does not depend on scheduling.
template <typename Fn>
void parallel_for(int64_t n, int jobs, Fn&& fn) {
    if (n <= 0) return;
    if (jobs < 1) jobs = 1;
    const int workers = static_cast<int>(std::min<int64_t>(jobs, n));
    if (workers == 1) {
        for (int64_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<int64_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> threads;
    threads.reserve(static_cast<size_t>(workers));
    for (int w = 0; w < workers; ++w) {
        threads.emplace_back([&] {
            for (;;) {
                const int64_t i = next.fetch_add(1);
                if (i >= n) return;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!error) error = std::current_exception();
                    return;
                }
            }
        });
    }
    for (auto& t : threads) t.join();
    if (error) std::rethrow_exception(error);
}

}  // namespace brainattr
