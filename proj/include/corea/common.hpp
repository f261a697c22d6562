// Copyright Contributors to the corea project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>

namespace corea {

/// Thrown when an argument violates a documented precondition.
class invalid_argument : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Thrown when an operation is applied to an object in the wrong state
/// (stale caches, frozen parameters, missing stages).
class invalid_state : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Thrown when optimization or rendering produces non-finite values.
class numerical_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Thrown on malformed or unreadable files.
class io_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define COREA_CHECK_ARG(cond, msg)                                            \
    do {                                                                      \
        if (!(cond)) throw ::corea::invalid_argument(msg);                    \
    } while (0)

#define COREA_CHECK_STATE(cond, msg)                                          \
    do {                                                                      \
        if (!(cond)) throw ::corea::invalid_state(msg);                       \
    } while (0)

inline bool is_finite(double v) { return std::isfinite(v); }

inline double sigmoid(double x) {
    if (x >= 0.0) {
        double e = std::exp(-x);
        return 1.0 / (1.0 + e);
    }
    double e = std::exp(x);
    return e / (1.0 + e);
}

inline double logit(double p) { return std::log(p / (1.0 - p)); }

inline double softplus(double x) {
    if (x > 30.0) return x;
    return std::log1p(std::exp(x));
}

inline double softplus_inverse(double y) {
    if (y > 30.0) return y;
    return std::log(std::expm1(y));
}

inline double clamp01(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

/// Deterministic, trivially serializable PRNG (splitmix64 core).
/// One 64-bit word of state so checkpoints can persist the exact stream.
struct Rng {
    uint64_t state = 0x9e3779b97f4a7c15ull;

    explicit Rng(uint64_t seed = 0) { state = seed + 0x9e3779b97f4a7c15ull; }

    uint64_t next_u64() {
        uint64_t z = (state += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    /// Uniform in [0, 1).
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n).
    uint64_t uniform_index(uint64_t n) { return next_u64() % n; }

    /// Standard normal via Box-Muller; draws exactly two uniforms per call.
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        u1 = u1 <= 0.0 ? 0x1.0p-53 : u1;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
    }
};

/// Global worker cap shared by all parallel loops. 0 means "use all cores".
/// COREA_THREADS, when set, caps this at process start (see thread_pool.cpp).
void set_thread_cap(int n);
int thread_cap();

/// Runs fn(i) for i in [0, n). Work is carved into fixed-size blocks that do
/// not depend on the worker count, so any reduction done per-block and merged
/// in block order is bitwise reproducible for every COREA_THREADS setting.
void parallel_for(int64_t n, const std::function<void(int64_t)>& fn);

/// Block-structured variant: fn(begin, end) over fixed blocks. Block size is
/// deterministic; blocks may run on any worker.
void parallel_for_blocks(int64_t n, int64_t block,
                         const std::function<void(int64_t, int64_t)>& fn);

} // namespace corea
