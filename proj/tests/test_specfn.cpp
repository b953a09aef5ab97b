#include <cmath>
#include <numbers>

#include "doctest.h"
#include "mixdpo/specfn.hpp"
#include "test_util.hpp"

using namespace mixdpo::specfn;

// High-precision reference values live in tests/oracles/freeze_values.py.
namespace frozen {
constexpr double kZeta3At2p7 = 0.098502917789567866847;
constexpr double kPhi1p5At4p3 = 0.065511240660376380477;
constexpr double kLogSigmoid3 = -0.048587351573742058759;
}  // namespace frozen

TEST_SUITE("specfn") {
    TEST_CASE("logistic helpers") {
        CHECK(sigmoid(0.0) == 0.5);
        CHECK(std::abs(sigmoid(50.0) - 1.0) <= 1e-15);
        for (double z : {-700.0, -37.5, -3.0, -1e-9, 0.0, 0.3, 2.0, 19.0, 40.0, 700.0}) {
            CHECK(std::abs(sigmoid(z) + sigmoid(-z) - 1.0) <= 0x1p-52);
        }
        CHECK(log_sigmoid(0.0) == doctest::Approx(-std::numbers::ln2).epsilon(1e-15));
        CHECK(log_sigmoid(-1000.0) == doctest::Approx(-1000.0).epsilon(1e-15));
        CHECK(std::abs(log_sigmoid(3.0) - frozen::kLogSigmoid3) <= 1e-16);
        CHECK(softplus(0.0) == doctest::Approx(std::numbers::ln2).epsilon(1e-15));
        CHECK(std::abs(softplus(100.0) - 100.0) <= 1e-12);
        CHECK(softplus_derivative(0.0) == 0.5);
        for (double y : {1e-6, 0.1, 1.0, 16.7, 300.0}) {
            CHECK(softplus(softplus_inverse(y)) == doctest::Approx(y).epsilon(1e-12));
        }
        CHECK_THROWS_AS(softplus_inverse(0.0), std::domain_error);
        CHECK(std::isnan(sigmoid(std::nan(""))));
    }

    TEST_CASE("logistic odd coefficients reproduce the sigmoid near zero") {
        const auto c = logistic_odd_coefficients();
        REQUIRE(c.size() == 8);
        CHECK(c[0] == doctest::Approx(0.25));
        CHECK(c[1] == doctest::Approx(-1.0 / 48.0));
        const double x = 0.3;
        double s = 0.5;
        for (std::size_t j = 0; j < c.size(); ++j) {
            s += c[j] * std::pow(x, static_cast<double>(2 * j + 1));
        }
        CHECK(std::abs(s - sigmoid(x)) <= 1e-15);
    }

    TEST_CASE("hurwitz zeta values") {
        const double pi2 = std::numbers::pi * std::numbers::pi;
        CHECK(std::abs(hurwitz_zeta(2.0, 1.0) - pi2 / 6.0) <= 1e-6);
        CHECK(std::abs(hurwitz_zeta(2.0, 0.5) - pi2 / 2.0) <= 1e-6);
        CHECK(std::abs(hurwitz_zeta(3.0, 2.7) - frozen::kZeta3At2p7) <= 1e-13);
        // The default tail makes the Basel value exact to rounding.
        CHECK(std::abs(hurwitz_zeta(2.0, 1.0) - pi2 / 6.0) <= 1e-14);
        // Bare truncation leaves the integral tail, about 1/N for s = 2.
        const double bare = hurwitz_zeta(2.0, 1.0, SeriesConfig::bare(1000));
        CHECK(pi2 / 6.0 - bare == doctest::Approx(1.0 / 1000.5).epsilon(1e-3));
    }

    TEST_CASE("hurwitz zeta domain") {
        CHECK_THROWS_AS(hurwitz_zeta(1.0, 2.0), std::domain_error);
        CHECK_THROWS_AS(hurwitz_zeta(2.0, 0.0), std::domain_error);
        CHECK_THROWS_AS(hurwitz_zeta(-1.0, 1.0), std::domain_error);
        CHECK_THROWS_AS(hurwitz_zeta(2.0, 1.0, SeriesConfig{0, true}), std::invalid_argument);
        // Continuation below s = 1: zeta(1/2, 1) = -1.4603545088...
        CHECK(hurwitz_zeta(0.5, 1.0) == doctest::Approx(-1.4603545088095868).epsilon(1e-10));
    }

    TEST_CASE("hurwitz zeta partials") {
        const auto p = hurwitz_zeta_partials(2.0, 1.0);
        CHECK(std::abs(p.d_a - (-2.0 * 1.2020569031595942)) <= 1e-5);
        {
            const auto q = hurwitz_zeta_partials(2.5, 3.0);
            const double fd = testutil::central_difference([](double a) { return hurwitz_zeta(2.5, a); }, 3.0);
            CHECK(std::abs(q.d_a - fd) <= 1e-4 * std::abs(fd));
            CHECK(q.value == doctest::Approx(hurwitz_zeta(2.5, 3.0)).epsilon(1e-15));
        }
        {
            const auto q = hurwitz_zeta_partials(1.5, 2.0);
            const double fd = testutil::central_difference([](double s) { return hurwitz_zeta(s, 2.0); }, 1.5);
            CHECK(std::abs(q.d_s - fd) <= 1e-4 * std::abs(fd));
        }
        // The bare series differentiates its own truncation.
        {
            const auto cfg = SeriesConfig::bare(50);
            const auto q = hurwitz_zeta_partials(3.0, 0.7, cfg);
            const double fds = testutil::central_difference([&](double s) { return hurwitz_zeta(s, 0.7, cfg); }, 3.0);
            const double fda = testutil::central_difference([&](double a) { return hurwitz_zeta(3.0, a, cfg); }, 0.7);
            CHECK(std::abs(q.d_s - fds) <= 1e-6 * std::abs(fds));
            CHECK(std::abs(q.d_a - fda) <= 1e-6 * std::abs(fda));
        }
    }

    TEST_CASE("alternating lerch values") {
        CHECK(std::abs(lerch_phi_neg1(1.0, 1.0) - std::numbers::ln2) <= 1e-5);
        CHECK(std::abs(lerch_phi_neg1(2.0, 1.0) - std::numbers::pi * std::numbers::pi / 12.0) <= 1e-6);
        CHECK(std::abs(lerch_phi_neg1(1.5, 4.3) - frozen::kPhi1p5At4p3) <= 1e-10);
        // Both routes agree where they overlap.
        for (double s : {1.1, 2.0, 4.5}) {
            for (double a : {0.6, 3.0, 40.0}) {
                const auto z = lerch_phi_neg1_zeta_difference(s, a);
                const auto d = lerch_phi_neg1_alternating(s, a);
                CHECK(std::abs(z.value - d.value) <= 1e-12);
                CHECK(std::abs(z.d_s - d.d_s) <= 1e-9);
                CHECK(std::abs(z.d_a - d.d_a) <= 1e-9);
            }
        }
    }

    TEST_CASE("alternating lerch partials match finite differences") {
        for (double s : {0.6, 1.0, 1.5, 3.2}) {
            for (double a : {0.8, 5.0, 30.0}) {
                const auto p = lerch_phi_neg1_partials(s, a);
                const double fds = testutil::central_difference([&](double x) { return lerch_phi_neg1(x, a); }, s, 1e-4);
                const double fda = testutil::central_difference([&](double x) { return lerch_phi_neg1(s, x); }, a, 1e-4);
                CHECK(std::abs(p.d_s - fds) <= 1e-6 * std::max(std::abs(fds), 1e-3));
                CHECK(std::abs(p.d_a - fda) <= 1e-6 * std::max(std::abs(fda), 1e-3));
            }
        }
    }

    TEST_CASE("identities on grids") {
        for (double s : {1.1, 1.7, 2.5, 4.0}) {
            for (double a : {0.2, 1.0, 7.5, 45.0}) {
                CHECK(std::abs(hurwitz_zeta(s, a) - (std::pow(a, -s) + hurwitz_zeta(s, a + 1.0))) <= 1e-9);
            }
        }
        for (double s : {0.5, 1.0, 1.3, 2.0, 5.0}) {
            for (double a : {0.3, 1.0, 9.0, 50.0}) {
                CHECK(std::abs(lerch_phi_neg1(s, a) + lerch_phi_neg1(s, a + 1.0) - std::pow(a, -s)) <= 1e-8);
            }
        }
        for (double s : {0.5, 1.5, 3.0}) {
            double prev = hurwitz_zeta(s, 0.25);
            for (double a = 0.5; a <= 50.0; a += 0.5) {
                const double cur = hurwitz_zeta(s, a);
                CHECK(cur < prev);
                prev = cur;
            }
        }
    }

    TEST_CASE("pure and repeatable") {
        CHECK(lerch_phi_neg1(2.3, 1.7) == lerch_phi_neg1(2.3, 1.7));
        CHECK(hurwitz_zeta(0.8, 3.3) == hurwitz_zeta(0.8, 3.3));
    }
}
