#pragma once

// PCG32 (pcg_setseq_64_xsh_rr_32) and the samplers built on it.
//
// Seeding follows the reference pcg32_srandom_r: state = 0,
// inc = (stream << 1) | 1, step, state += seed, step. The derived draws are
// fully specified so the same seed reproduces the same stream in any
// language:
//   uniform()    53-bit: ((u64(next()) << 32 | next()) >> 11) * 2^-53, in [0, 1)
//   normal()     Box-Muller, cosine branch only: two uniforms per draw,
//                u1 = 1 - uniform() in (0, 1]
//   below(n)     next() % n after rejecting draws below (2^32 - n) % n

#include <cstdint>

namespace mixdpo {

class Pcg32 {
public:
    using result_type = std::uint32_t;

    explicit Pcg32(std::uint64_t seed = 0x853c49e6748fea9bULL, std::uint64_t stream = 0xda3e39cb94b95bdbULL);

    std::uint32_t next();
    result_type operator()() { return next(); }
    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return 0xffffffffu; }

    double uniform();
    double normal();
    std::uint32_t below(std::uint32_t bound);

    std::uint64_t state() const { return state_; }

private:
    std::uint64_t state_ = 0;
    std::uint64_t inc_ = 0;
};

/// Gamma(shape, rate) by Marsaglia-Tsang; shape < 1 uses the
/// Gamma(shape + 1) * U^(1/shape) boost.
double gamma_sample(double shape, double rate, Pcg32& rng);
/// exp(mu + sigma * z), z standard normal.
double lognormal_sample(double mu, double sigma, Pcg32& rng);

}  // namespace mixdpo
