// Copyright Contributors to the corea project
// SPDX-License-Identifier: Apache-2.0

#include "corea/common.hpp"

#include <atomic>
#include <cstdlib>
#include <thread>
#include <vector>

namespace corea {

namespace {

int g_thread_cap = 0;

int env_thread_cap() {
    const char* s = std::getenv("COREA_THREADS");
    if (!s || !*s) return 0;
    char* end = nullptr;
    long v = std::strtol(s, &end, 10);
    if (end == s || v < 1) return 1;
    return int(v);
}

struct CapInit {
    CapInit() { g_thread_cap = env_thread_cap(); }
} g_cap_init;

int effective_workers(int64_t blocks) {
    int hw = int(std::thread::hardware_concurrency());
    if (hw < 1) hw = 1;
    int cap = g_thread_cap > 0 ? g_thread_cap : hw;
    if (cap > hw) cap = hw;
    if (int64_t(cap) > blocks) cap = int(blocks);
    return cap < 1 ? 1 : cap;
}

} // namespace

void set_thread_cap(int n) { g_thread_cap = n < 0 ? 0 : n; }

int thread_cap() { return g_thread_cap; }

void parallel_for_blocks(int64_t n, int64_t block,
                         const std::function<void(int64_t, int64_t)>& fn) {
    if (n <= 0) return;
    if (block < 1) block = 1;
    int64_t nblocks = (n + block - 1) / block;
    int workers = effective_workers(nblocks);
    if (workers == 1) {
        for (int64_t b = 0; b < nblocks; ++b)
            fn(b * block, std::min(n, (b + 1) * block));
        return;
    }
    std::atomic<int64_t> next{0};
    auto body = [&] {
        for (;;) {
            int64_t b = next.fetch_add(1, std::memory_order_relaxed);
            if (b >= nblocks) return;
            fn(b * block, std::min(n, (b + 1) * block));
        }
    };
    std::vector<std::thread> threads;
    threads.reserve(workers - 1);
    for (int i = 0; i + 1 < workers; ++i) threads.emplace_back(body);
    body();
    for (auto& t : threads) t.join();
}

void parallel_for(int64_t n, const std::function<void(int64_t)>& fn) {
    parallel_for_blocks(n, 64, [&](int64_t lo, int64_t hi) {
        for (int64_t i = lo; i < hi; ++i) fn(i);
    });
}

} // namespace corea
