#include "mixdpo/objective.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mixdpo {

using ad::Node;
using ad::Tensor;
using specfn::SeriesConfig;

void LossConfig::validate() const {
    if (mc_samples < 1) {
        throw std::invalid_argument("LossConfig: mc_samples must be >= 1");
    }
    series.validate();
}

Node dpo_loss(const Node& delta_r, double beta) {
    if (!(beta > 0.0)) {
        throw std::domain_error("dpo_loss: beta must be positive");
    }
    return ad::neg(ad::log_sigmoid(ad::scale(delta_r, beta)));
}

Node lognormal_mixdpo_loss(const Node& delta_r, const Node& mu, const Node& sigma_raw,
                           std::span<const double> noise) {
    if (noise.empty()) {
        throw std::invalid_argument("lognormal_mixdpo_loss: need at least one noise draw");
    }
    const Node eps(Tensor::vector({noise.begin(), noise.end()}));
    const Node beta = ad::exp(ad::add(mu, ad::mul(ad::softplus(sigma_raw), eps)));
    const Node log_p = ad::log_sigmoid(ad::mul(beta, delta_r));
    return ad::shift(ad::neg(ad::logsumexp(log_p)), std::log(static_cast<double>(noise.size())));
}

namespace {

GammaExpectation moment_expansion(double delta_r, double k, double lambda) {
    const auto coeffs = specfn::logistic_odd_coefficients();
    const double u = delta_r / lambda;
    const double u2 = u * u;
    GammaExpectation out;
    out.value = 0.0;
    double rising = k;  // (k)_{2j+1}
    double harmonic = 1.0 / k;  // sum_{i<2j+1} 1/(k+i)
    double upow = u;    // u^{2j+1}
    for (std::size_t j = 0; j < coeffs.size(); ++j) {
        const double m = 2.0 * static_cast<double>(j) + 1.0;
        const double term = coeffs[j] * rising * upow;
        out.value += term;
        out.d_k += term * harmonic;
        out.d_lambda -= term * m / lambda;
        out.d_delta += coeffs[j] * rising * m * (upow / u) / lambda;
        rising *= (k + m) * (k + m + 1.0);
        harmonic += 1.0 / (k + m) + 1.0 / (k + m + 1.0);
        upow *= u2;
    }
    return out;
}

bool use_moment_expansion(double delta_r, double k, double lambda) {
    return std::abs(delta_r) * (k + 8.0) / lambda < 0.02;
}

}  // namespace

GammaExpectation gamma_inner_expectation(double delta_r, double k, double lambda, const SeriesConfig& series) {
    if (!(k > 0.0) || !(lambda > 0.0)) {
        throw std::domain_error("gamma_inner_expectation: k and lambda must be positive");
    }
    if (std::isnan(delta_r)) {
        throw std::domain_error("gamma_inner_expectation: delta_r is NaN");
    }
    if (std::abs(delta_r) < kGammaZeroSwitch) {
        // The value is flat at 1/2 here; only the slope survives.
        const double edge = std::signbit(delta_r) ? -kGammaZeroSwitch : kGammaZeroSwitch;
        GammaExpectation out;
        out.d_delta = gamma_inner_expectation(edge, k, lambda, series).d_delta;
        return out;
    }
    if (use_moment_expansion(delta_r, k, lambda)) {
        GammaExpectation out = moment_expansion(delta_r, k, lambda);
        out.value += 0.5;
        return out;
    }

    const double t = std::abs(delta_r);
    const double a = lambda / t;
    const auto phi = specfn::lerch_phi_neg1_partials(k, 1.0 + a, series);
    const double ak = std::exp(k * std::log(a));
    const double g = ak * phi.value;
    const double g_k = g * std::log(a) + ak * phi.d_s;
    const double g_a = k * ak / a * phi.value + ak * phi.d_a;

    GammaExpectation out;
    const double sign = delta_r > 0.0 ? -1.0 : 1.0;
    out.value = delta_r > 0.0 ? 1.0 - g : g;
    // dG/dt = G_a * (-a / t); both branches give dE/d(delta_r) = -dG/dt.
    out.d_delta = g_a * a / t;
    out.d_k = sign * g_k;
    out.d_lambda = sign * g_a / t;
    return out;
}

Node gamma_mixdpo_loss(const Node& delta_r, const Node& k_raw, const Node& lambda_raw, const SeriesConfig& series) {
    const double kr = k_raw.item();
    const double lr = lambda_raw.item();
    const GammaExpectation e =
        gamma_inner_expectation(delta_r.item(), specfn::softplus(kr), specfn::softplus(lr), series);
    const double inv = 1.0 / e.value;
    return ad::custom_node(Tensor::scalar(-std::log(e.value)), {delta_r, k_raw, lambda_raw},
                           {Tensor::scalar(-e.d_delta * inv),
                            Tensor::scalar(-e.d_k * inv * specfn::softplus_derivative(kr)),
                            Tensor::scalar(-e.d_lambda * inv * specfn::softplus_derivative(lr))});
}

Node pair_loss(const Node& delta_r, const DistributionParameters& dist, const LossConfig& cfg,
               std::span<const double> noise) {
    const StrengthDistribution& d = dist.distribution();
    const auto& nodes = dist.nodes();
    switch (d.kind()) {
        case DistributionKind::kPointMass:
            return dpo_loss(delta_r, d.beta());
        case DistributionKind::kLogNormal:
            if (noise.size() != cfg.mc_samples) {
                throw std::invalid_argument("pair_loss: expected " + std::to_string(cfg.mc_samples) +
                                            " noise draws, got " + std::to_string(noise.size()));
            }
            return lognormal_mixdpo_loss(delta_r, nodes[0], nodes[1], noise);
        case DistributionKind::kGamma:
            return gamma_mixdpo_loss(delta_r, nodes[0], nodes[1], cfg.series);
    }
    throw std::logic_error("pair_loss: unknown distribution kind");
}

double choice_probability(double delta_r, const StrengthDistribution& dist, const LossConfig& cfg,
                          std::span<const double> noise) {
    switch (dist.kind()) {
        case DistributionKind::kPointMass:
            return specfn::sigmoid(dist.beta() * delta_r);
        case DistributionKind::kLogNormal: {
            if (noise.empty()) {
                throw std::invalid_argument("choice_probability: LogNormal needs noise draws");
            }
            double acc = 0.0;
            for (double e : noise) {
                acc += specfn::sigmoid(std::exp(dist.mu() + dist.sigma() * e) * delta_r);
            }
            return acc / static_cast<double>(noise.size());
        }
        case DistributionKind::kGamma:
            return gamma_inner_expectation(delta_r, dist.shape(), dist.rate(), cfg.series).value;
    }
    throw std::logic_error("choice_probability: unknown distribution kind");
}

std::vector<double> draw_noise(const StrengthDistribution& dist, const LossConfig& cfg, Pcg32& rng) {
    std::vector<double> noise;
    if (dist.kind() != DistributionKind::kLogNormal) {
        return noise;
    }
    noise.resize(cfg.mc_samples);
    for (double& e : noise) {
        e = rng.normal();
    }
    return noise;
}

Node batch_loss(std::span<const PreferencePair> pairs, const SequenceModel& policy,
                std::span<const ReferenceLogprobs> reference, const DistributionParameters& dist,
                const LossConfig& cfg, Pcg32& rng) {
    if (pairs.empty()) {
        throw std::invalid_argument("batch_loss: empty batch");
    }
    if (reference.size() != pairs.size()) {
        throw std::invalid_argument("batch_loss: reference log-probabilities do not match the batch");
    }
    cfg.validate();
    std::vector<double> shared;
    if (cfg.shared_noise) {
        shared = draw_noise(dist.distribution(), cfg, rng);
    }
    Node total;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const Node delta = implicit_reward_delta(policy, reference[i], pairs[i]);
        const std::vector<double> noise = cfg.shared_noise ? shared : draw_noise(dist.distribution(), cfg, rng);
        const Node loss = pair_loss(delta, dist, cfg, noise);
        total = total.defined() ? ad::add(total, loss) : loss;
    }
    return ad::scale(total, 1.0 / static_cast<double>(pairs.size()));
}

Node batch_loss(std::span<const PreferencePair> pairs, const SequenceModel& policy,
                const SequenceModel& reference, const DistributionParameters& dist, const LossConfig& cfg) {
    std::vector<ReferenceLogprobs> ref;
    ref.reserve(pairs.size());
    for (const auto& p : pairs) {
        ref.push_back({sequence_logprob_value(reference, p.prompt, p.chosen),
                       sequence_logprob_value(reference, p.prompt, p.rejected)});
    }
    Pcg32 rng(cfg.rng_seed, kNoiseStream);
    return batch_loss(pairs, policy, ref, dist, cfg, rng);
}

}  // namespace mixdpo
