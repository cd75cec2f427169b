#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace gbmc {

/// Runs body(chunk) for chunk in [0, n_chunks) on up to `workers` threads.
/// Chunks are claimed dynamically, so callers must write results per chunk and
/// reduce them in chunk order to stay independent of scheduling.
template <class Body>
void parallel_chunks(std::size_t n_chunks, unsigned workers, Body&& body) {
    workers = std::max(1u, workers);
    if (workers == 1 || n_chunks <= 1) {
        for (std::size_t c = 0; c < n_chunks; ++c) body(c);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto run = [&] {
        for (std::size_t c; (c = next.fetch_add(1)) < n_chunks;) {
            try {
                body(c);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!error) error = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    const auto n = static_cast<std::size_t>(workers);
    pool.reserve(std::min(n, n_chunks) - 1);
    for (std::size_t i = 1; i < std::min(n, n_chunks); ++i) pool.emplace_back(run);
    run();
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

}  // namespace gbmc
