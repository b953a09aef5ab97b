#include "mixdpo/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace mixdpo {

Pcg32::Pcg32(std::uint64_t seed, std::uint64_t stream) {
    state_ = 0;
    inc_ = (stream << 1u) | 1u;
    next();
    state_ += seed;
    next();
}

std::uint32_t Pcg32::next() {
    const std::uint64_t old = state_;
    state_ = old * 6364136223846793005ULL + inc_;
    const auto xorshifted = static_cast<std::uint32_t>(((old >> 18u) ^ old) >> 27u);
    const auto rot = static_cast<std::uint32_t>(old >> 59u);
    return (xorshifted >> rot) | (xorshifted << ((-rot) & 31u));
}

double Pcg32::uniform() {
    const std::uint64_t hi = next();
    const std::uint64_t lo = next();
    return static_cast<double>(((hi << 32) | lo) >> 11) * 0x1.0p-53;
}

double Pcg32::normal() {
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint32_t Pcg32::below(std::uint32_t bound) {
    if (bound == 0) {
        throw std::invalid_argument("Pcg32::below: bound must be positive");
    }
    const std::uint32_t threshold = (0u - bound) % bound;
    for (;;) {
        const std::uint32_t r = next();
        if (r >= threshold) {
            return r % bound;
        }
    }
}

double gamma_sample(double shape, double rate, Pcg32& rng) {
    if (!(shape > 0.0) || !(rate > 0.0) || !std::isfinite(shape) || !std::isfinite(rate)) {
        throw std::domain_error("gamma_sample: shape and rate must be positive and finite (got " +
                                std::to_string(shape) + ", " + std::to_string(rate) + ")");
    }
    if (shape < 1.0) {
        const double g = gamma_sample(shape + 1.0, 1.0, rng);
        const double u = 1.0 - rng.uniform();
        return g * std::pow(u, 1.0 / shape) / rate;
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
        double x = 0.0;
        double v = 0.0;
        do {
            x = rng.normal();
            v = 1.0 + c * x;
        } while (v <= 0.0);
        v = v * v * v;
        const double u = 1.0 - rng.uniform();
        if (u < 1.0 - 0.0331 * (x * x) * (x * x)) {
            return d * v / rate;
        }
        if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) {
            return d * v / rate;
        }
    }
}

double lognormal_sample(double mu, double sigma, Pcg32& rng) {
    if (!(sigma >= 0.0) || !std::isfinite(mu) || !std::isfinite(sigma)) {
        throw std::domain_error("lognormal_sample: requires finite mu and sigma >= 0 (got " +
                                std::to_string(mu) + ", " + std::to_string(sigma) + ")");
    }
    return std::exp(mu + sigma * rng.normal());
}

}  // namespace mixdpo
