#include "mixdpo/quadrature.hpp"

#include <boost/math/quadrature/exp_sinh.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/special_functions/gamma.hpp>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "mixdpo/specfn.hpp"

namespace mixdpo::quadrature {

Result gamma_expectation(double delta_r, double k, double lambda) {
    if (!(k > 0.0) || !(lambda > 0.0)) {
        throw std::domain_error("quadrature::gamma_expectation: k and lambda must be positive");
    }
    const double t = delta_r / lambda;
    const double inv_k = 1.0 / k;
    const double log_norm = -boost::math::lgamma(k + 1.0);
    // beta = y^(1/k) / lambda; the Jacobian cancels beta^(k-1).
    const auto f = [&](double y) {
        const double x = std::pow(y, inv_k);
        return specfn::sigmoid(x * t) * std::exp(log_norm - x);
    };
    boost::math::quadrature::exp_sinh<double> integrator;
    Result r;
    r.value = integrator.integrate(f, 0.0, std::numeric_limits<double>::infinity(), 1e-14, &r.error_estimate);
    return r;
}

Result lognormal_expectation(double delta_r, double mu, double sigma) {
    if (!(sigma > 0.0)) {
        throw std::domain_error("quadrature::lognormal_expectation: sigma must be positive");
    }
    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    const auto f = [&](double z) {
        return specfn::sigmoid(std::exp(mu + sigma * z) * delta_r) * inv_sqrt_2pi * std::exp(-0.5 * z * z);
    };
    Result r;
    r.value = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, -12.0, 12.0, 20, 1e-14,
                                                                          &r.error_estimate);
    return r;
}

}  // namespace mixdpo::quadrature
