#include "fluff/nn_ops.hpp"

#include <atomic>
#include <thread>

namespace fluff {

namespace {
std::atomic<int> g_num_threads{1};
}

void set_num_threads(int n) { g_num_threads.store(n < 1 ? 1 : n); }

int get_num_threads() { return g_num_threads.load(); }

void parallel_for(std::size_t total, const std::function<void(std::size_t, std::size_t)>& fn) {
    const int threads = get_num_threads();
    if (threads <= 1 || total < 2) {
        fn(0, total);
        return;
    }
    const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(threads), total);
    const std::size_t chunk = (total + workers - 1) / workers;
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        const std::size_t begin = w * chunk;
        const std::size_t end = std::min(total, begin + chunk);
        if (begin >= end) break;
        pool.emplace_back([&fn, begin, end] { fn(begin, end); });
    }
    for (auto& t : pool) {
        t.join();
    }
}

} // namespace fluff
