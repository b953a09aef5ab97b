#pragma once

// Special functions used by the preference losses: logistic helpers, the
// Hurwitz zeta function and the alternating Lerch transcendent Phi(-1, s, a).
//
// Conventions: zeta(s, a) = sum_{n>=0} (a + n)^-s and
// Phi(-1, s, a) = sum_{n>=0} (-1)^n (a + n)^-s.

#include <span>
#include <stdexcept>

namespace mixdpo::specfn {

struct SeriesConfig {
    int truncation_terms = 1000;
    // Euler-Maclaurin tail after the truncated sum. Disabling it gives the
    // bare truncated series.
    bool tail_correction = true;

    void validate() const;

    static SeriesConfig bare(int terms = 1000) { return {terms, false}; }
};

double sigmoid(double z);
double log_sigmoid(double z);
double softplus(double z);
double softplus_derivative(double z);
// Inverse of softplus for y > 0.
double softplus_inverse(double y);

// c_j with sigmoid(x) = 1/2 + sum_j c_j x^(2j+1), j = 0..7 (radius pi).
std::span<const double> logistic_odd_coefficients();

struct ZetaPartials {
    double value = 0.0;
    double d_s = 0.0;
    double d_a = 0.0;
};

/// Hurwitz zeta via N = truncation_terms direct terms. With the tail enabled
/// the Euler-Maclaurin remainder is added, which also yields the analytic
/// continuation for 0 < s < 1; s == 1 is then a pole and throws.
double hurwitz_zeta(double s, double a, const SeriesConfig& cfg = {});

/// Value and term-wise derivatives. d_a uses the identity
/// d/da zeta(s, a) = -s zeta(s + 1, a); d_s differentiates both the
/// truncated sum and the tail, so both match the value's truncation.
ZetaPartials hurwitz_zeta_partials(double s, double a, const SeriesConfig& cfg = {});

using LerchPartials = ZetaPartials;

// Shape parameters at or below this use the direct alternating route.
inline constexpr double kAlternatingRouteMaxS = 1.05;

/// Phi(-1, s, a). Routes through the zeta-difference identity
/// 2^-s [zeta(s, a/2) - zeta(s, (a+1)/2)] for s > 1.05 and through direct
/// alternating summation otherwise.
double lerch_phi_neg1(double s, double a, const SeriesConfig& cfg = {});
LerchPartials lerch_phi_neg1_partials(double s, double a, const SeriesConfig& cfg = {});

// Individual routes, exposed so they can be checked against each other.
LerchPartials lerch_phi_neg1_zeta_difference(double s, double a, const SeriesConfig& cfg = {});
// Direct summation of the leading terms plus an Euler-Boole tail; valid for
// every s > 0 and independent of cfg.tail_correction.
LerchPartials lerch_phi_neg1_alternating(double s, double a);

}  // namespace mixdpo::specfn
