#pragma once

// Preference losses. Every variant is -log of a choice probability
// p(delta_r) = E_beta[sigmoid(beta * delta_r)]:
//   PointMass  closed form sigmoid(beta * delta_r)          (DPO)
//   LogNormal  K-sample reparameterised Monte Carlo estimate
//   Gamma      closed form through the alternating Lerch transcendent

#include <cstdint>
#include <span>
#include <vector>

#include "mixdpo/distribution.hpp"
#include "mixdpo/model.hpp"
#include "mixdpo/pair.hpp"
#include "mixdpo/rng.hpp"
#include "mixdpo/specfn.hpp"

namespace mixdpo {

struct LossConfig {
    std::size_t mc_samples = 16;
    specfn::SeriesConfig series;
    std::uint64_t rng_seed = 0;
    // Reuse one set of K draws for every pair in a batch instead of drawing
    // per pair.
    bool shared_noise = false;

    void validate() const;
};

/// -log sigmoid(beta * delta_r).
ad::Node dpo_loss(const ad::Node& delta_r, double beta);

/// -log (1/K) sum_k sigmoid(exp(mu + softplus(sigma_raw) eps_k) delta_r),
/// with eps supplied by the caller. Evaluated as log K - logsumexp of the
/// per-sample log-sigmoids, so it stays finite for any finite delta_r.
ad::Node lognormal_mixdpo_loss(const ad::Node& delta_r, const ad::Node& mu, const ad::Node& sigma_raw,
                               std::span<const double> noise);

struct GammaExpectation {
    double value = 0.5;
    double d_delta = 0.0;
    double d_k = 0.0;
    double d_lambda = 0.0;
};

// Below this |delta_r| the expectation is reported as exactly 1/2.
inline constexpr double kGammaZeroSwitch = 1e-8;

/// E_{beta ~ Gamma(k, lambda)}[sigmoid(beta delta_r)] with analytic partials.
///   delta_r > 0:  1 - a^k Phi(-1, k, 1 + a),   a = lambda / delta_r
///   delta_r < 0:      a^k Phi(-1, k, 1 + a),   a = lambda / |delta_r|
/// When |delta_r| (k + 8) / lambda < 0.02 the odd-moment expansion
/// 1/2 + sum_j c_j (k)_{2j+1} (delta_r / lambda)^{2j+1} is used instead,
/// which avoids cancellation in the zeta difference for very large a.
GammaExpectation gamma_inner_expectation(double delta_r, double k, double lambda,
                                         const specfn::SeriesConfig& series = {});

/// -log gamma_inner_expectation(delta_r, softplus(k_raw), softplus(lambda_raw)).
/// Gradients reach k_raw and lambda_raw only when those nodes require them.
ad::Node gamma_mixdpo_loss(const ad::Node& delta_r, const ad::Node& k_raw, const ad::Node& lambda_raw,
                           const specfn::SeriesConfig& series = {});

/// Dispatches on the distribution kind. `noise` is used by LogNormal only
/// and must then hold exactly cfg.mc_samples values.
ad::Node pair_loss(const ad::Node& delta_r, const DistributionParameters& dist, const LossConfig& cfg,
                   std::span<const double> noise);

/// Choice probability without a graph, with the same estimator as pair_loss.
double choice_probability(double delta_r, const StrengthDistribution& dist, const LossConfig& cfg,
                          std::span<const double> noise);

/// Mean of per-pair losses. LogNormal noise comes from `rng`, either K
/// draws per pair in batch order or one shared set.
ad::Node batch_loss(std::span<const PreferencePair> pairs, const SequenceModel& policy,
                    std::span<const ReferenceLogprobs> reference, const DistributionParameters& dist,
                    const LossConfig& cfg, Pcg32& rng);

/// Same, computing reference log-probabilities on the fly and drawing noise
/// from Pcg32(cfg.rng_seed, kNoiseStream).
ad::Node batch_loss(std::span<const PreferencePair> pairs, const SequenceModel& policy,
                    const SequenceModel& reference, const DistributionParameters& dist, const LossConfig& cfg);

inline constexpr std::uint64_t kNoiseStream = 0x6e6f697365ULL;

/// Fills cfg.mc_samples standard normals, or nothing for non-LogNormal kinds.
std::vector<double> draw_noise(const StrengthDistribution& dist, const LossConfig& cfg, Pcg32& rng);

}  // namespace mixdpo
