#pragma once

#include <cmath>
#include <cstdint>

#include "igsr/common.hpp"

namespace igsr {

// Counter-based 64-bit generator: draw i of stream `key` is
// mix64(mix64(key) + i) with the SplitMix64/Stafford-13 finalizer from
// common.hpp. Streams are independent per key, so each trajectory or
// consumer can be given its own stream and per-patient data never depends
// on how many patients are simulated. The exact algorithm is documented in
// docs/reproducibility.md so other implementations can match bit-for-bit.
class CounterRng {
public:
    explicit CounterRng(std::uint64_t key) : key_(mix64(key)) {}

    std::uint64_t next_u64() { return mix64(key_ + counter_++); }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    bool bernoulli(double p) { return uniform() < p; }

    // Box-Muller; consumes exactly two uniforms per draw.
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    // Uniform integer in [0, n); n must be > 0.
    std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

} // namespace igsr
