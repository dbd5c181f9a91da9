#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace beatformer {

// Counter-based generator: every draw is a pure function of (seed, stream,
// counter), so randomized ops are reproducible without any global state.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

class CounterRng {
public:
    explicit CounterRng(std::uint64_t seed, std::uint64_t stream = 0)
        : key_(splitmix64(seed ^ splitmix64(stream + 0x632BE59BD9B4E019ULL))) {}

    std::uint64_t bits(std::uint64_t counter) const {
        return splitmix64(key_ + splitmix64(counter));
    }

    // Uniform in [0, 1) with 53 random bits.
    double uniform(std::uint64_t counter) const {
        return static_cast<double>(bits(counter) >> 11) * 0x1.0p-53;
    }

    // Derive an independent child generator, e.g. one per op call.
    CounterRng split(std::uint64_t index) const { return CounterRng(key_, index + 1); }

    std::uint64_t key() const { return key_; }

private:
    std::uint64_t key_;
};

// Fisher-Yates over [0, n) driven by the counter generator; std::shuffle is
// implementation-defined and would break cross-library reproducibility.
inline std::vector<std::size_t> seeded_permutation(std::size_t n, const CounterRng& rng) {
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    for (std::size_t i = n; i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng.bits(i) % i);
        std::swap(perm[i - 1], perm[j]);
    }
    return perm;
}

}  // namespace beatformer
