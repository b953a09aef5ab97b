#include <cmath>
#include <numbers>
#include <vector>

#include "doctest.h"
#include "mixdpo/objective.hpp"
#include "mixdpo/quadrature.hpp"
#include "test_util.hpp"

using namespace mixdpo;
using ad::Node;

namespace frozen {
constexpr double kDpo10 = 0.31326168751822283405;
constexpr double kGamma10_2_16p7 = 0.73877852966290315474;
constexpr double kGamma2_2_10 = 0.59639805782505267813;
constexpr double kLogNormal5 = 0.63983076007753731714;
}  // namespace frozen

namespace {

double loss_value(const Node& n) { return n.item(); }

ModelConfig tiny_model() {
    ModelConfig c;
    c.vocab = {5, 3, 3};
    c.hidden = 3;
    c.window = 2;
    c.init_std = 0.4;
    return c;
}

}  // namespace

TEST_SUITE("objective") {
    TEST_CASE("dpo loss") {
        CHECK(loss_value(dpo_loss(Node::constant(0.0), 0.1)) == doctest::Approx(std::numbers::ln2).epsilon(1e-15));
        CHECK(std::abs(loss_value(dpo_loss(Node::constant(10.0), 0.1)) - frozen::kDpo10) <= 1e-15);
        CHECK(loss_value(dpo_loss(Node::constant(1e4), 0.1)) < 1e-300);
        CHECK_THROWS_AS(dpo_loss(Node::constant(1.0), 0.0), std::domain_error);
    }

    TEST_CASE("lognormal loss special cases") {
        const std::vector<double> noise = {0.3, -1.2, 2.0, 0.0};
        const Node z = lognormal_mixdpo_loss(Node::constant(0.0), Node::constant(-2.3), Node::constant(0.4), noise);
        CHECK(loss_value(z) == doctest::Approx(std::numbers::ln2).epsilon(1e-15));
        const std::vector<double> zeros(8, 0.0);
        const double collapsed =
            loss_value(lognormal_mixdpo_loss(Node::constant(3.7), Node::constant(-1.1), Node::constant(0.5), zeros));
        CHECK(collapsed == doctest::Approx(loss_value(dpo_loss(Node::constant(3.7), std::exp(-1.1)))).epsilon(1e-14));
        CHECK_THROWS_AS(
            lognormal_mixdpo_loss(Node::constant(1.0), Node::constant(0.0), Node::constant(0.0), std::vector<double>{}),
            std::invalid_argument);
    }

    TEST_CASE("lognormal Monte Carlo against the quadrature value") {
        const double sigma_raw = specfn::softplus_inverse(0.6);
        const LossConfig cfg{4096};
        const auto dist = StrengthDistribution::lognormal(-2.3, 0.6);
        Pcg32 rng(2024, kNoiseStream);
        std::vector<double> estimates;
        for (int set = 0; set < 50; ++set) {
            const auto noise = draw_noise(dist, cfg, rng);
            const double loss = loss_value(
                lognormal_mixdpo_loss(Node::constant(5.0), Node::constant(-2.3), Node::constant(sigma_raw), noise));
            estimates.push_back(std::exp(-loss));
            CHECK(choice_probability(5.0, dist, cfg, noise) == doctest::Approx(estimates.back()).epsilon(1e-13));
        }
        double m = 0.0;
        for (double e : estimates) {
            m += e;
        }
        m /= 50.0;
        double var = 0.0;
        for (double e : estimates) {
            var += (e - m) * (e - m);
        }
        const double se = std::sqrt(var / 49.0 / 50.0);
        CHECK(std::abs(m - frozen::kLogNormal5) <= 3.0 * se);
        CHECK(std::abs(quadrature::lognormal_expectation(5.0, -2.3, 0.6).value - frozen::kLogNormal5) <= 1e-12);
    }

    TEST_CASE("gamma closed form values") {
        CHECK(gamma_inner_expectation(0.0, 2.0, 16.7).value == 0.5);
        CHECK(std::abs(gamma_inner_expectation(10.0, 2.0, 16.7).value - frozen::kGamma10_2_16p7) <= 1e-12);
        CHECK(std::abs(gamma_inner_expectation(2.0, 2.0, 10.0).value - frozen::kGamma2_2_10) <= 1e-12);
        // Shapes at or below one take the alternating route.
        for (double k : {0.7, 1.0, 1.05}) {
            for (double dr : {-7.0, 0.4, 9.0}) {
                const double q = quadrature::gamma_expectation(dr, k, 3.0).value;
                CHECK(std::abs(gamma_inner_expectation(dr, k, 3.0).value - q) <= 1e-10);
            }
        }
        CHECK_THROWS_AS(gamma_inner_expectation(1.0, 0.0, 1.0), std::domain_error);
        CHECK_THROWS_AS(gamma_inner_expectation(std::nan(""), 1.0, 1.0), std::domain_error);
    }

    TEST_CASE("gamma bare truncation stays close to the tail-corrected value") {
        double worst = 0.0;
        for (double k : {0.7, 2.0, 5.0}) {
            for (double lam : {1.0, 16.7, 50.0}) {
                for (double dr : {-10.0, -1.0, 3.0}) {
                    const double full = gamma_inner_expectation(dr, k, lam).value;
                    const double bare = gamma_inner_expectation(dr, k, lam, specfn::SeriesConfig::bare()).value;
                    worst = std::max(worst, std::abs(full - bare));
                }
            }
        }
        // The alternating tail decays like n^-k, so k = 0.7 dominates.
        CHECK(worst > 0.0);
        CHECK(worst < 1e-3);
    }

    TEST_CASE("gamma near zero and across the expansion switch") {
        const auto tiny = gamma_inner_expectation(5e-9, 2.0, 16.7);
        CHECK(tiny.value == 0.5);
        CHECK(tiny.d_k == 0.0);
        CHECK(tiny.d_lambda == 0.0);
        const double slope = gamma_inner_expectation(1e-8, 2.0, 16.7).d_delta;
        CHECK(tiny.d_delta == slope);
        // Near the origin the slope is E[beta] / 4.
        CHECK(slope == doctest::Approx(2.0 / 16.7 / 4.0).epsilon(1e-6));
        CHECK(gamma_inner_expectation(-5e-9, 2.0, 16.7).d_delta == gamma_inner_expectation(-1e-8, 2.0, 16.7).d_delta);

        // |dr| (k + 8) / lambda = 0.02 is the switch.
        const double k = 2.0, lam = 16.7;
        const double edge = 0.02 * lam / (k + 8.0);
        const auto below = gamma_inner_expectation(edge * (1.0 - 1e-9), k, lam);
        const auto above = gamma_inner_expectation(edge * (1.0 + 1e-9), k, lam);
        CHECK(std::abs(below.value - above.value) <= 5e-12);
        CHECK(std::abs(below.d_delta - above.d_delta) <= 1e-9);
        CHECK(std::abs(below.d_k - above.d_k) <= 1e-9);
        CHECK(std::abs(below.d_lambda - above.d_lambda) <= 1e-9);
        CHECK(std::abs(below.value - quadrature::gamma_expectation(edge, k, lam).value) <= 5e-12);
    }

    TEST_CASE("gamma symmetry, monotonicity and finiteness") {
        for (double k : {0.7, 1.9, 5.0}) {
            for (double lam : {1.0, 12.0, 50.0}) {
                double prev = 0.0;
                for (double dr = -10.0; dr <= 10.0; dr += 0.25) {
                    const double p = gamma_inner_expectation(dr, k, lam).value;
                    CHECK(std::abs(p + gamma_inner_expectation(-dr, k, lam).value - 1.0) <= 1e-9);
                    CHECK(p > prev);
                    prev = p;
                }
                for (double dr : {-1e6, -1e3, 1e3, 1e6}) {
                    const Node l = gamma_mixdpo_loss(Node::constant(dr), Node::constant(specfn::softplus_inverse(k)),
                                                     Node::constant(specfn::softplus_inverse(lam)));
                    CHECK(std::isfinite(l.item()));
                }
            }
        }
        const std::vector<double> noise = {0.5, -0.5, 1.5};
        for (double dr : {-1e6, 1e6}) {
            CHECK(std::isfinite(
                lognormal_mixdpo_loss(Node::constant(dr), Node::constant(0.0), Node::constant(0.0), noise).item()));
            CHECK(std::isfinite(dpo_loss(Node::constant(dr), 0.1).item()));
        }
        const auto ln = StrengthDistribution::lognormal(-1.0, 0.8);
        CHECK(choice_probability(2.5, ln, {3}, noise) + choice_probability(-2.5, ln, {3}, noise) ==
              doctest::Approx(1.0).epsilon(1e-15));
    }

    TEST_CASE("gamma loss gradients") {
        const double k_raw = specfn::softplus_inverse(2.0), lam_raw = specfn::softplus_inverse(16.7);
        Node d = Node::variable(2.0), k = Node::variable(k_raw), l = Node::variable(lam_raw);
        ad::backward(gamma_mixdpo_loss(d, k, l));
        const auto f = [](double dr, double kr, double lr) {
            return gamma_mixdpo_loss(Node::constant(dr), Node::constant(kr), Node::constant(lr)).item();
        };
        const double fdd = testutil::central_difference([&](double x) { return f(x, k_raw, lam_raw); }, 2.0);
        const double fdk = testutil::central_difference([&](double x) { return f(2.0, x, lam_raw); }, k_raw);
        const double fdl = testutil::central_difference([&](double x) { return f(2.0, k_raw, x); }, lam_raw);
        CHECK(std::abs(d.grad().item() - fdd) <= 1e-4 * std::abs(fdd));
        CHECK(std::abs(k.grad().item() - fdk) <= 1e-4 * std::abs(fdk));
        CHECK(std::abs(l.grad().item() - fdl) <= 1e-4 * std::abs(fdl));

        DistributionParameters frozen_dist(StrengthDistribution::gamma(2.0, 16.7, false));
        Node d2 = Node::variable(2.0);
        ad::backward(pair_loss(d2, frozen_dist, {}, {}));
        CHECK(frozen_dist.nodes()[0].grad().item() == 0.0);
        CHECK(frozen_dist.nodes()[1].grad().item() == 0.0);
        CHECK(d2.grad().item() == doctest::Approx(d.grad().item()).epsilon(1e-15));
    }

    TEST_CASE("every variant gives log 2 at zero margin") {
        const LossConfig cfg{5};
        Pcg32 rng(1, 1);
        for (const auto& dist : {StrengthDistribution::point_mass(0.1), StrengthDistribution::lognormal(-2.3, 0.6),
                                 StrengthDistribution::gamma(2.0, 16.7)}) {
            const DistributionParameters p(dist);
            const Node l = pair_loss(Node::constant(0.0), p, cfg, draw_noise(dist, cfg, rng));
            CHECK(l.item() == doctest::Approx(std::numbers::ln2).epsilon(1e-15));
        }
        CHECK_THROWS_AS(pair_loss(Node::constant(1.0), DistributionParameters(StrengthDistribution::lognormal(0, 1)),
                                  cfg, std::vector<double>(4, 0.0)),
                        std::invalid_argument);
    }

    TEST_CASE("batch loss fixtures") {
        const SequenceModel ref(tiny_model(), true);
        ModelConfig pc = tiny_model();
        pc.seed = 4;
        const SequenceModel pol(pc, true);
        const PreferencePair a{{1, 2}, {3, 4}, {0}, {}, "a", {}, {}};
        const PreferencePair b{{0}, {2}, {2, 2, 1}, {}, "b", {}, {}};
        const PreferencePair c{{4, 4}, {1}, {3}, {}, "c", {}, {}};
        const DistributionParameters dpo(StrengthDistribution::point_mass(0.1));
        const LossConfig cfg;

        // Identical pairs average to the single-pair loss.
        const std::vector<PreferencePair> same(4, a);
        const double one = batch_loss(std::span(&a, 1), pol, ref, dpo, cfg).item();
        CHECK(batch_loss(same, pol, ref, dpo, cfg).item() == doctest::Approx(one).epsilon(1e-15));

        // Reference log-probabilities chosen so the margins are exactly 1, -2 and 3.
        const std::vector<PreferencePair> trio = {a, b, c};
        const std::vector<double> targets = {1.0, -2.0, 3.0};
        std::vector<ReferenceLogprobs> refs;
        for (std::size_t i = 0; i < 3; ++i) {
            refs.push_back({sequence_logprob_value(pol, trio[i].prompt, trio[i].chosen) - targets[i],
                            sequence_logprob_value(pol, trio[i].prompt, trio[i].rejected)});
        }
        const double hand = (std::log1p(std::exp(-0.1)) + std::log1p(std::exp(0.2)) + std::log1p(std::exp(-0.3))) / 3.0;
        Pcg32 rng(0, kNoiseStream);
        CHECK(batch_loss(trio, pol, refs, dpo, cfg, rng).item() == doctest::Approx(hand).epsilon(1e-13));

        // A vanishing LogNormal spread reproduces DPO at beta = exp(mu).
        const DistributionParameters narrow(StrengthDistribution::lognormal_raw(std::log(0.1), -40.0));
        Pcg32 rng2(0, kNoiseStream);
        CHECK(std::abs(batch_loss(trio, pol, refs, narrow, cfg, rng2).item() - hand) <= 1e-6);

        CHECK_THROWS_AS(batch_loss(std::span<const PreferencePair>{}, pol, ref, dpo, cfg), std::invalid_argument);
    }

    TEST_CASE("noise drawing") {
        LossConfig cfg{6};
        const auto ln = StrengthDistribution::lognormal(-2.3, 0.6);
        Pcg32 a(5, kNoiseStream), b(5, kNoiseStream);
        const auto n1 = draw_noise(ln, cfg, a);
        CHECK(n1.size() == 6);
        for (double e : n1) {
            CHECK(e == b.normal());
        }
        CHECK(draw_noise(StrengthDistribution::gamma(2, 3), cfg, a).empty());

        // Shared noise uses one set for the whole batch.
        const SequenceModel ref(tiny_model(), true);
        ModelConfig pc = tiny_model();
        pc.seed = 9;
        const SequenceModel pol(pc, true);
        const PreferencePair p{{1}, {2, 3}, {4}, {}, "p", {}, {}};
        const std::vector<PreferencePair> two(2, p);
        const std::vector<ReferenceLogprobs> refs(2, {sequence_logprob_value(ref, p.prompt, p.chosen),
                                                      sequence_logprob_value(ref, p.prompt, p.rejected)});
        const DistributionParameters dp(ln);
        cfg.shared_noise = true;
        Pcg32 r1(3, 3), r2(3, 3);
        const double shared = batch_loss(two, pol, refs, dp, cfg, r1).item();
        const double single = batch_loss(std::span(two.data(), 1), pol, std::span(refs.data(), 1), dp, cfg, r2).item();
        CHECK(shared == doctest::Approx(single).epsilon(1e-15));
        cfg.shared_noise = false;
        Pcg32 r3(3, 3);
        CHECK(batch_loss(two, pol, refs, dp, cfg, r3).item() != doctest::Approx(single).epsilon(1e-12));
    }
}
