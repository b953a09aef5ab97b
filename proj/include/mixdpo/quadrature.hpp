#pragma once

// Numerical-integration oracles for E_beta[sigmoid(beta delta_r)], used to
// validate the closed-form and Monte Carlo estimators.

namespace mixdpo::quadrature {

struct Result {
    double value = 0.0;
    double error_estimate = 0.0;
};

/// Gamma(k, lambda) density, integrated in y = (lambda beta)^k so the
/// integrand is smooth at the origin for every k > 0.
Result gamma_expectation(double delta_r, double k, double lambda);

/// LogNormal(mu, sigma) as a Gaussian integral over z in [-12, 12].
Result lognormal_expectation(double delta_r, double mu, double sigma);

}  // namespace mixdpo::quadrature
