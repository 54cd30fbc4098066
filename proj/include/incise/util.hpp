#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <thread>
#include <vector>

namespace incise {

// splitmix64: cheap, well-mixed 64-bit hash used to derive independent
// per-item seeds from a base seed. Partitioning work across threads must
// never change results, so every parallel unit draws from its own stream.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t base, std::uint64_t item) {
    return splitmix64(base ^ splitmix64(item + 0x9e3779b97f4a7c15ULL));
}

inline std::mt19937_64 make_rng(std::uint64_t seed) {
    return std::mt19937_64(seed);
}

// Global worker count for parallel_for; 1 = serial. Set from the CLI
// --threads flag. Results are identical for any value by construction.
inline int& worker_threads() {
    static int n = 1;
    return n;
}

// Deterministic parallel loop: chunks are fixed by index, outputs must be
// written to disjoint slots, and any randomness inside must be seeded per
// index via mix_seed.
inline void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body) {
    const int workers = worker_threads();
    if (workers <= 1 || n < 2) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::vector<std::thread> pool;
    const std::size_t nw = std::min<std::size_t>(static_cast<std::size_t>(workers), n);
    pool.reserve(nw);
    for (std::size_t w = 0; w < nw; ++w) {
        pool.emplace_back([&, w]() {
            for (std::size_t i = w; i < n; i += nw) body(i);
        });
    }
    for (auto& t : pool) t.join();
}

// Shortest round-trip decimal form of a double (to_chars), so numeric text
// written by one run parses back bit-identical in the next.
inline std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    char buf[40];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline double population_variance(const std::vector<double>& xs) {
    if (xs.empty()) return 0.0;
    double mn = xs[0], mx = xs[0];
    double sum = 0.0;
    for (double x : xs) {
        sum += x;
        mn = std::min(mn, x);
        mx = std::max(mx, x);
    }
    if (mn == mx) return 0.0; // degenerate: identical values, exactly zero spread
    const double mean = sum / static_cast<double>(xs.size());
    double acc = 0.0;
    for (double x : xs) acc += (x - mean) * (x - mean);
    return acc / static_cast<double>(xs.size());
}

inline double mean_of(const std::vector<double>& xs) {
    if (xs.empty()) return 0.0;
    double sum = 0.0;
    for (double x : xs) sum += x;
    return sum / static_cast<double>(xs.size());
}

} // namespace incise
