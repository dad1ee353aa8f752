#pragma once

// Shared numeric helpers, error types, seeding and the block-parallel driver
// used by every stage of the pipeline.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <functional>
#include <limits>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace docclean {

/// Thrown when an operation is invoked on an object that is not ready for it
/// (e.g. sampling from a background density that was never fitted).
class InvalidState : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Thrown for malformed or mismatched files (model container, images, configs).
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;
inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

/// log(exp(a) + exp(b)) without overflow.
inline double log_add_exp(double a, double b) {
    if (a == kNegInf) return b;
    if (b == kNegInf) return a;
    return a > b ? a + std::log1p(std::exp(b - a)) : b + std::log1p(std::exp(a - b));
}

/// log Σ exp(v_k); returns -inf for an empty range.
template <typename Range>
double log_sum_exp(const Range& values) {
    double top = kNegInf;
    for (double v : values) top = std::max(top, v);
    if (top == kNegInf) return kNegInf;
    double acc = 0.0;
    for (double v : values) acc += std::exp(v - top);
    return top + std::log(acc);
}

/// Positive modulo for cyclic index arithmetic.
inline std::size_t wrap_index(std::ptrdiff_t i, std::size_t n) {
    const auto m = static_cast<std::ptrdiff_t>(n);
    std::ptrdiff_t r = i % m;
    return static_cast<std::size_t>(r < 0 ? r + m : r);
}

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

/// Derives an independent child seed from a parent seed and a stream tag, so
/// parallel or per-class random streams are reproducible by construction.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index = 0) {
    std::uint64_t s = seed ^ (0xD1B54A32D192ED03ULL * (stream + 1));
    splitmix64(s);
    s ^= 0x8CB92BA72F3D8DD7ULL * (index + 1);
    return splitmix64(s);
}

/// Processes items [0, count) in fixed-size blocks. Block boundaries depend only
/// on `block_size`, never on `threads`, so callers that reduce per-block results
/// in block order get bit-identical output for any thread count.
inline void parallel_blocks(std::size_t count, std::size_t block_size, unsigned threads,
                            const std::function<void(std::size_t block, std::size_t begin, std::size_t end)>& body) {
    if (count == 0) return;
    block_size = std::max<std::size_t>(block_size, 1);
    const std::size_t blocks = (count + block_size - 1) / block_size;
    auto run_block = [&](std::size_t b) {
        const std::size_t begin = b * block_size;
        body(b, begin, std::min(count, begin + block_size));
    };
    threads = std::max(1u, threads);
    if (threads == 1 || blocks == 1) {
        for (std::size_t b = 0; b < blocks; ++b) run_block(b);
        return;
    }
    std::mutex guard;
    std::size_t next = 0;
    std::exception_ptr failure;
    auto worker = [&] {
        for (;;) {
            std::size_t b;
            {
                std::lock_guard lock(guard);
                if (next >= blocks || failure) return;
                b = next++;
            }
            try {
                run_block(b);
            } catch (...) {
                std::lock_guard lock(guard);
                if (!failure) failure = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    const unsigned spawn = static_cast<unsigned>(std::min<std::size_t>(threads, blocks));
    pool.reserve(spawn);
    for (unsigned t = 0; t < spawn; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
}

struct GridShape {
    std::size_t rows = 0;
    std::size_t cols = 0;

    std::size_t size() const { return rows * cols; }
    friend bool operator==(const GridShape&, const GridShape&) = default;
};

struct Position {
    std::size_t row = 0;
    std::size_t col = 0;

    friend bool operator==(const Position&, const Position&) = default;
    friend auto operator<=>(const Position&, const Position&) = default;
};

}  // namespace docclean
