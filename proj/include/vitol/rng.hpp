#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace vitol {

// std::mt19937_64 has a fully specified output sequence; the conversions below
// are spelled out instead of using <random> distributions, whose algorithms are
// implementation-defined, so that streams are reproducible everywhere.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n);

    double normal();
    // Normal(0, std) resampled until within two standard deviations.
    double truncated_normal(double std);

  private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// SplitMix64 finalizer; used to derive independent stream seeds.
std::uint64_t mix_seed(std::uint64_t x);
std::uint64_t derive_seed(std::initializer_list<std::uint64_t> parts);

}  // namespace vitol
