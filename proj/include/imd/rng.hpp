#pragma once

#include <cstdint>
#include <cmath>
#include <random>
#include <stdexcept>

namespace imd {

// Derives a per-(step, sample) seed from a root seed.
//
// Mixing function (stable across versions, do not change):
//   z = root XOR (t << 16) XOR k, followed by the splitmix64 finalizer
//   (add 0x9E3779B97F4A7C15, then two xor-shift-multiply rounds).
// The pre-mix is injective for t, k < 2^16 and the finalizer is a
// bijection on 64-bit values, so derived seeds are collision-free
// within that range for any fixed root.
inline std::uint64_t seed_derive(std::uint64_t root, std::uint32_t t, std::uint32_t k) {
    std::uint64_t z = root ^ (static_cast<std::uint64_t>(t) << 16) ^ static_cast<std::uint64_t>(k);
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

// Seeded random stream. Wraps mt19937_64 (bit-stable across platforms)
// with hand-rolled variate transforms; the standard library distributions
// are implementation-defined and would break cross-compiler determinism.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    // Uniform in [0, 1).
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) {
        return lo + (hi - lo) * uniform();
    }

    // Uniform integer in [lo, hi], inclusive.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        if (lo > hi) throw std::invalid_argument("uniform_int: lo > hi");
        const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
        if (span == 0) return static_cast<std::int64_t>(next_u64());  // full 64-bit range
        const auto v = static_cast<std::uint64_t>(
            (static_cast<unsigned __int128>(next_u64()) * span) >> 64);
        return lo + static_cast<std::int64_t>(v);
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Standard normal via Box-Muller. One variate per call.
    double normal() {
        const double u1 = 1.0 - uniform();  // (0, 1], keeps log finite
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

private:
    std::mt19937_64 gen_;
};

}  // namespace imd
