#pragma once

#include <cstdint>
#include <random>

namespace cge {

std::uint64_t splitmix64(std::uint64_t x);

// Seedable generator whose output is identical on every platform:
// std::mt19937_64 (fully specified by the standard) seeded through splitmix64
// from (seed, stream), with all variate transforms implemented here rather
// than by the implementation-defined <random> distributions.
//
//   uniform  53-bit mantissa, open interval (0, 1)
//   normal   inverse CDF of a uniform
//   gamma    Marsaglia-Tsang squeeze (shape < 1 via the u^(1/shape) boost)
//   poisson  multiplication method below mean 30, PTRS rejection above
class Rng {
public:
    explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

    std::uint64_t next() { return engine_(); }
    double uniform();
    // Uniform integer in [0, n), unbiased.
    std::uint64_t uniform_int(std::uint64_t n);
    double normal();
    double normal(double mean, double sd) { return mean + sd * normal(); }
    // Rate parameterization: mean shape / rate.
    double gamma(double shape, double rate);
    bool bernoulli(double p) { return uniform() < p; }
    std::uint64_t poisson(double mean);

private:
    std::mt19937_64 engine_;
};

}  // namespace cge
