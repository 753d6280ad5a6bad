#pragma once

#include <cstdint>
#include <vector>

#include "fewshot/matrix.hpp"

namespace fewshot {

// Counter-based deterministic generator built on the SplitMix64 finalizer:
// draw i of a stream with key k is finalize(k + (i+1)*GOLDEN). The output
// depends only on (key, counter), so identical seeds and call sequences give
// identical streams, and sub-streams can be derived without sharing state.
// Integer output is bit-reproducible everywhere; normal() goes through
// libm (sqrt/log/cos), so floating streams are reproducible given the same
// libm build.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : key_(mix(seed, 0x5EEDB10CULL)) {}

    // Derives an independent sub-stream; the parent stream is not advanced.
    Rng fork(std::uint64_t tag) const { return Rng(mix(key_, tag), 0); }
    Rng fork(std::uint64_t tag_a, std::uint64_t tag_b) const {
        return Rng(mix(mix(key_, tag_a), tag_b), 0);
    }

    std::uint64_t next_u64() {
        ++counter_;
        return finalize(key_ + counter_ * GOLDEN);
    }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
    // Uniform in (0, 1]; used where log() of the draw must be finite.
    double uniform_pos() { return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53; }
    double uniform_range(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Modulo reduction; the bias of ~n/2^64 is irrelevant at the sizes used here.
    std::uint64_t uniform_int(std::uint64_t n) { return next_u64() % n; }

    // Standard normal via Box-Muller; consumes exactly two draws per call.
    double normal();

    Matrix normal_matrix(int rows, int cols);
    Matrix uniform_matrix(int rows, int cols, double lo, double hi);

    // Fisher-Yates; deterministic function of the stream position.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(uniform_int(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    static std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
        return finalize(a ^ (finalize(b + GOLDEN) + GOLDEN));
    }

private:
    Rng(std::uint64_t key, std::uint64_t counter) : key_(key), counter_(counter) {}

    static constexpr std::uint64_t GOLDEN = 0x9E3779B97F4A7C15ULL;

    static std::uint64_t finalize(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    std::uint64_t key_ = 0;
    std::uint64_t counter_ = 0;
};

}  // namespace fewshot
