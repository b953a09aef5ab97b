#pragma once

// Oracle suites behind `mixdpo verify`: special-function identities,
// closed form against quadrature, Monte Carlo consistency and
// finite-difference gradient checks.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mixdpo/specfn.hpp"

namespace mixdpo::verify {

enum class Level { kQuick, kFull };

Level level_from_string(const std::string& name);

struct Options {
    Level level = Level::kQuick;
    // Bare truncated series for the closed form; target 5e-5 instead of 1e-4.
    bool paper_exact = false;
    std::uint64_t seed = 0;
};

struct CheckResult {
    std::string name;
    double max_error = 0.0;
    double tolerance = 0.0;
    bool passed = false;
    double seconds = 0.0;
    std::string detail;
};

// Individual checks. Each reports its worst error against its tolerance.
CheckResult hurwitz_shift_identity();
CheckResult alternating_shift_identity();
CheckResult zeta_difference_reduction();
CheckResult hurwitz_monotonic_in_a();
CheckResult closed_form_vs_quadrature(const specfn::SeriesConfig& series, double tolerance);
CheckResult closed_form_symmetry();
CheckResult closed_form_monotonic_in_delta();
/// Max |MC - quadrature| / standard error over 50 noise sets of K = 4096.
CheckResult lognormal_monte_carlo(std::uint64_t seed);
/// Max |MC - closed form| / standard error over `triples` random
/// (k, lambda, delta_r) with 1e5 raw Gamma draws each.
CheckResult gamma_monte_carlo(std::uint64_t seed, int triples);
/// Gradients of every loss with respect to delta_r and the raw
/// distribution parameters, inputs uniform in [-2, 2].
CheckResult loss_gradients(std::uint64_t seed, int seeds);
/// Gradients with respect to every policy parameter on a two-token fixture,
/// for each loss variant.
CheckResult policy_gradients(std::uint64_t seed, int seeds);

/// Relative error with absolute floor: |a - f| / max(|f|, abs_floor / rel).
double gradient_error(double analytic, double numeric, double rel = 1e-4, double abs_floor = 1e-6);

std::vector<CheckResult> run(const Options& options, const std::function<void(const CheckResult&)>& on_result = {});
std::string format(const CheckResult& result);

}  // namespace mixdpo::verify
