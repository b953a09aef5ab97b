#include "mixdpo/specfn.hpp"

#include <array>
#include <cmath>
#include <string>

namespace mixdpo::specfn {

namespace {

// B_{2j} / (2j)! for j = 1..7.
constexpr std::array<double, 7> kBernoulliOverFactorial = {
    1.0 / 12.0,
    -1.0 / 720.0,
    1.0 / 30240.0,
    -1.0 / 1209600.0,
    1.0 / 47900160.0,
    -691.0 / 1307674368000.0,
    7.0 / 523069747200.0,
};

// Odd Taylor coefficients of sigmoid(x) - 1/2 = tanh(x/2)/2, which are also
// the Euler-Boole coefficients for alternating tails.
constexpr std::array<double, 8> kLogisticOddCoefficients = {
    1.0 / 4.0,
    -1.0 / 48.0,
    1.0 / 480.0,
    -17.0 / 80640.0,
    31.0 / 1451520.0,
    -1382.0 / 155925.0 / 4096.0,
    21844.0 / 6081075.0 / 16384.0,
    -929569.0 / 638512875.0 / 65536.0,
};

void check_domain(double s, double a, const char* fn) {
    if (!(s > 0.0) || !(a > 0.0)) {
        throw std::domain_error(std::string(fn) + ": requires s > 0 and a > 0 (got s=" +
                                std::to_string(s) + ", a=" + std::to_string(a) + ")");
    }
}

struct PowerSums {
    double value = 0.0;     // sum x^-s
    double log_term = 0.0;  // sum ln(x) x^-s
    double next = 0.0;      // sum x^-(s+1)
};

// Sums over x = a + n, n = 0..terms-1, accumulated smallest-first.
PowerSums truncated_power_sums(double s, double a, int terms) {
    PowerSums out;
    for (int n = terms - 1; n >= 0; --n) {
        const double x = a + n;
        const double lx = std::log(x);
        const double p = std::exp(-s * lx);
        out.value += p;
        out.log_term += lx * p;
        out.next += p / x;
    }
    return out;
}

// Euler-Maclaurin remainder for sum_{n>=0} (x + n)^-s and its s-derivative.
struct Tail {
    double value = 0.0;
    double d_s = 0.0;
};

Tail zeta_tail(double s, double x) {
    const double lx = std::log(x);
    const double xs = std::exp(-s * lx);  // x^-s
    const double x1s = xs * x;            // x^(1-s)
    Tail t;
    t.value = x1s / (s - 1.0) + 0.5 * xs;
    t.d_s = -lx * x1s / (s - 1.0) - x1s / ((s - 1.0) * (s - 1.0)) - 0.5 * lx * xs;

    // rising factorial (s)_m for m = 2j - 1, plus its s-derivative
    double rising = s;
    double rising_ds = 1.0;
    double power = xs / x;  // x^(-s-1)
    for (std::size_t j = 0; j < kBernoulliOverFactorial.size(); ++j) {
        const double c = kBernoulliOverFactorial[j];
        t.value += c * rising * power;
        t.d_s += c * (rising_ds - rising * lx) * power;
        // advance m by two
        const double m = 2.0 * static_cast<double>(j) + 1.0;
        const double f1 = s + m;
        const double f2 = s + m + 1.0;
        rising_ds = rising_ds * f1 * f2 + rising * (f1 + f2);
        rising *= f1 * f2;
        power /= x * x;
    }
    return t;
}

// Euler-Boole tail of sum_{n>=0} (-1)^n (x + n)^-s.
Tail alternating_tail(double s, double x) {
    const double lx = std::log(x);
    const double xs = std::exp(-s * lx);
    Tail t;
    t.value = 0.5 * xs;
    t.d_s = -0.5 * lx * xs;
    double rising = s;  // (s)_m, m = 2j + 1
    double rising_ds = 1.0;
    double power = xs / x;
    for (std::size_t j = 0; j < kLogisticOddCoefficients.size(); ++j) {
        const double c = kLogisticOddCoefficients[j];
        t.value += c * rising * power;
        t.d_s += c * (rising_ds - rising * lx) * power;
        const double m = 2.0 * static_cast<double>(j) + 1.0;
        const double f1 = s + m;
        const double f2 = s + m + 1.0;
        rising_ds = rising_ds * f1 * f2 + rising * (f1 + f2);
        rising *= f1 * f2;
        power /= x * x;
    }
    return t;
}

}  // namespace

void SeriesConfig::validate() const {
    if (truncation_terms < 1) {
        throw std::invalid_argument("SeriesConfig: truncation_terms must be >= 1, got " +
                                    std::to_string(truncation_terms));
    }
}

double sigmoid(double z) {
    if (z >= 0.0) {
        return 1.0 / (1.0 + std::exp(-z));
    }
    const double e = std::exp(z);
    return e / (1.0 + e);
}

double softplus(double z) {
    if (z > 0.0) {
        return z + std::log1p(std::exp(-z));
    }
    return std::log1p(std::exp(z));
}

double log_sigmoid(double z) { return -softplus(-z); }

double softplus_derivative(double z) { return sigmoid(z); }

double softplus_inverse(double y) {
    if (!(y > 0.0)) {
        throw std::domain_error("softplus_inverse: requires y > 0, got " + std::to_string(y));
    }
    if (y > 30.0) {
        return y + std::log1p(-std::exp(-y));
    }
    return std::log(std::expm1(y));
}

ZetaPartials hurwitz_zeta_partials(double s, double a, const SeriesConfig& cfg) {
    check_domain(s, a, "hurwitz_zeta");
    cfg.validate();
    if (cfg.tail_correction && s == 1.0) {
        throw std::domain_error("hurwitz_zeta: pole at s = 1");
    }
    const int n = cfg.truncation_terms;
    const PowerSums sums = truncated_power_sums(s, a, n);
    ZetaPartials out;
    out.value = sums.value;
    out.d_s = -sums.log_term;
    double next = sums.next;
    if (cfg.tail_correction) {
        const double x = a + n;
        const Tail t = zeta_tail(s, x);
        out.value += t.value;
        out.d_s += t.d_s;
        next += zeta_tail(s + 1.0, x).value;
    }
    out.d_a = -s * next;
    return out;
}

double hurwitz_zeta(double s, double a, const SeriesConfig& cfg) {
    check_domain(s, a, "hurwitz_zeta");
    cfg.validate();
    if (cfg.tail_correction && s == 1.0) {
        throw std::domain_error("hurwitz_zeta: pole at s = 1");
    }
    const int n = cfg.truncation_terms;
    double value = 0.0;
    for (int i = n - 1; i >= 0; --i) {
        value += std::pow(a + i, -s);
    }
    if (cfg.tail_correction) {
        value += zeta_tail(s, a + n).value;
    }
    return value;
}

LerchPartials lerch_phi_neg1_zeta_difference(double s, double a, const SeriesConfig& cfg) {
    check_domain(s, a, "lerch_phi_neg1");
    const ZetaPartials lo = hurwitz_zeta_partials(s, 0.5 * a, cfg);
    const ZetaPartials hi = hurwitz_zeta_partials(s, 0.5 * (a + 1.0), cfg);
    const double scale = std::exp2(-s);
    LerchPartials out;
    out.value = scale * (lo.value - hi.value);
    out.d_s = -std::log(2.0) * out.value + scale * (lo.d_s - hi.d_s);
    out.d_a = scale * 0.5 * (lo.d_a - hi.d_a);
    return out;
}

LerchPartials lerch_phi_neg1_alternating(double s, double a) {
    check_domain(s, a, "lerch_phi_neg1");
    // Direct terms until the tail expansion converges fast: x0 - a >= 3s + 40.
    int direct = static_cast<int>(std::ceil(3.0 * s + 40.0));
    direct += direct % 2;
    double value = 0.0;
    double log_term = 0.0;
    double next = 0.0;
    for (int n = direct - 1; n >= 0; --n) {
        const double x = a + n;
        const double lx = std::log(x);
        const double p = (n % 2 == 0 ? 1.0 : -1.0) * std::exp(-s * lx);
        value += p;
        log_term += lx * p;
        next += p / x;
    }
    const double x0 = a + direct;
    const Tail t = alternating_tail(s, x0);
    const Tail t1 = alternating_tail(s + 1.0, x0);
    LerchPartials out;
    out.value = value + t.value;
    out.d_s = -log_term + t.d_s;
    out.d_a = -s * (next + t1.value);
    return out;
}

LerchPartials lerch_phi_neg1_partials(double s, double a, const SeriesConfig& cfg) {
    check_domain(s, a, "lerch_phi_neg1");
    if (s <= kAlternatingRouteMaxS) {
        return lerch_phi_neg1_alternating(s, a);
    }
    return lerch_phi_neg1_zeta_difference(s, a, cfg);
}

double lerch_phi_neg1(double s, double a, const SeriesConfig& cfg) {
    return lerch_phi_neg1_partials(s, a, cfg).value;
}

std::span<const double> logistic_odd_coefficients() { return kLogisticOddCoefficients; }

}  // namespace mixdpo::specfn
