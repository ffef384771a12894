#include "evsplat/common.hpp"

#include <algorithm>

namespace evsplat {

std::string hex64(uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[size_t(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return s;
}

int effective_threads(int requested) {
    if (requested > 0) return requested;
    const unsigned hw = std::thread::hardware_concurrency();
    return int(std::max(1u, std::min(hw, 4u)));
}

void parallel_chunks(int n, int threads, const std::function<void(int, int, int)>& fn) {
    threads = std::max(1, std::min(threads, n));
    if (threads == 1) {
        fn(0, 0, n);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(size_t(threads));
    for (int t = 0; t < threads; ++t) {
        const int begin = int(int64_t(n) * t / threads);
        const int end = int(int64_t(n) * (t + 1) / threads);
        pool.emplace_back([&fn, t, begin, end] { fn(t, begin, end); });
    }
    for (auto& th : pool) th.join();
}

}  // namespace evsplat
