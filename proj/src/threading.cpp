#include "mvsgs/threading.hpp"

#include <atomic>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace mvsgs {

namespace {
int g_threads = 0;

int resolve(int n) {
    if (n > 0) return n;
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}
}  // namespace

void set_thread_count(int n) { g_threads = n < 0 ? 0 : n; }

int thread_count() { return resolve(g_threads); }

void parallel_for(std::size_t begin, std::size_t end, const std::function<void(std::size_t)>& fn) {
    if (begin >= end) return;
    const std::size_t total = end - begin;
    const int workers = static_cast<int>(std::min<std::size_t>(total, static_cast<std::size_t>(thread_count())));
    if (workers <= 1) {
        for (std::size_t i = begin; i < end; ++i) fn(i);
        return;
    }

    std::size_t chunk = total / (static_cast<std::size_t>(workers) * 8);
    if (chunk == 0) chunk = 1;

    std::atomic<std::size_t> next{begin};
    std::exception_ptr first_error;
    std::mutex error_mutex;

    auto worker = [&]() {
        for (;;) {
            std::size_t lo = next.fetch_add(chunk);
            if (lo >= end) return;
            std::size_t hi = std::min(end, lo + chunk);
            try {
                for (std::size_t i = lo; i < hi; ++i) fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!first_error) first_error = std::current_exception();
                return;
            }
        }
    };

    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers) - 1);
    for (int w = 1; w < workers; ++w) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

}  // namespace mvsgs
