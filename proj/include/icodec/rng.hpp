#pragma once

#include <cstddef>
#include <cstdint>
#include <random>

namespace icodec {

/// Seeded random source. The engine is std::mt19937_64, whose output sequence
/// is fixed by the standard; the conversions to doubles and bounded integers
/// are done here so draws are identical across standard-library vendors.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }

    /// Uniform in [0, 1).
    double uniform();
    /// Uniform in (0, 1].
    double uniform_open_zero() { return 1.0 - uniform(); }
    /// Uniform integer in [0, n). n must be positive.
    std::size_t below(std::size_t n);
    /// Uniform integer in [lo, hi].
    int between(int lo, int hi) { return lo + static_cast<int>(below(static_cast<std::size_t>(hi - lo + 1))); }
    bool bernoulli(double p) { return uniform() < p; }
    /// Standard normal via Box-Muller.
    double normal();
    /// Standard Gumbel(0, 1).
    double gumbel();

private:
    std::mt19937_64 engine_;
};

/// splitmix64 finalizer; used to derive independent seeds from structured keys.
std::uint64_t mix64(std::uint64_t x);
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t key);
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t key1, std::uint64_t key2);

}  // namespace icodec
