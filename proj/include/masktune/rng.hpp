#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace masktune {

// Seeded generator with self-contained distributions. mt19937_64 output is
// specified bit-exactly by the standard; the distribution code lives here so
// that runs reproduce across standard libraries as well.
class Rng {
public:
    explicit Rng(uint64_t seed) : seed_(seed), gen_(seed) {}

    uint64_t seed() const { return seed_; }

    uint64_t next_u64() { return gen_(); }

    // Uniform in [0, 1) with 53 random mantissa bits.
    double uniform01() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // Unbiased integer in [0, n) by rejection.
    uint64_t below(uint64_t n) {
        if (n == 0) return 0;
        uint64_t bound = UINT64_MAX - UINT64_MAX % n;
        uint64_t x;
        do {
            x = gen_();
        } while (x >= bound);
        return x % n;
    }

    // Box-Muller; consumes exactly two draws per call.
    double normal() {
        double u1 = uniform01();
        double u2 = uniform01();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    // Fisher-Yates.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    std::vector<int64_t> permutation(int64_t n) {
        std::vector<int64_t> p(static_cast<size_t>(n));
        for (int64_t i = 0; i < n; ++i) p[static_cast<size_t>(i)] = i;
        shuffle(p);
        return p;
    }

    // Independent substream derived from the base seed.
    Rng fork(uint64_t stream) const { return Rng(splitmix64(seed_ + 0x9E3779B97F4A7C15ULL * (stream + 1))); }

    static uint64_t splitmix64(uint64_t x) {
        x += 0x9E3779B97F4A7C15ULL;
        x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
        x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
        return x ^ (x >> 31);
    }

private:
    uint64_t seed_;
    std::mt19937_64 gen_;
};

}  // namespace masktune
