#include "mixdpo/distribution.hpp"

#include <cmath>
#include <stdexcept>

#include "mixdpo/specfn.hpp"

namespace mixdpo {

using specfn::softplus;
using specfn::softplus_inverse;

std::string to_string(DistributionKind kind) {
    switch (kind) {
        case DistributionKind::kPointMass:
            return "dpo";
        case DistributionKind::kLogNormal:
            return "lognormal";
        case DistributionKind::kGamma:
            return "gamma";
    }
    return "unknown";
}

DistributionKind distribution_kind_from_string(const std::string& name) {
    if (name == "dpo" || name == "point_mass") {
        return DistributionKind::kPointMass;
    }
    if (name == "lognormal") {
        return DistributionKind::kLogNormal;
    }
    if (name == "gamma") {
        return DistributionKind::kGamma;
    }
    throw std::invalid_argument("unknown distribution variant '" + name +
                                "' (expected dpo, lognormal or gamma)");
}

StrengthDistribution StrengthDistribution::point_mass(double beta) {
    StrengthDistribution d(PointMass{beta}, false);
    d.validate();
    return d;
}

StrengthDistribution StrengthDistribution::lognormal(double mu, double sigma, bool trainable) {
    if (!(sigma > 0.0)) {
        throw std::domain_error("LogNormal: sigma must be positive");
    }
    return lognormal_raw(mu, softplus_inverse(sigma), trainable);
}

StrengthDistribution StrengthDistribution::gamma(double k, double lambda, bool trainable) {
    if (!(k > 0.0) || !(lambda > 0.0)) {
        throw std::domain_error("Gamma: shape and rate must be positive");
    }
    return gamma_raw(softplus_inverse(k), softplus_inverse(lambda), trainable);
}

StrengthDistribution StrengthDistribution::lognormal_raw(double mu, double sigma_raw, bool trainable) {
    StrengthDistribution d(LogNormal{mu, sigma_raw}, trainable);
    d.validate();
    return d;
}

StrengthDistribution StrengthDistribution::gamma_raw(double k_raw, double lambda_raw, bool trainable) {
    StrengthDistribution d(GammaDist{k_raw, lambda_raw}, trainable);
    d.validate();
    return d;
}

void StrengthDistribution::validate() const {
    if (const auto* p = std::get_if<PointMass>(&params_)) {
        if (!(p->beta > 0.0) || !std::isfinite(p->beta)) {
            throw std::domain_error("PointMass: beta must be positive and finite");
        }
    }
    for (double r : raw_params()) {
        if (!std::isfinite(r)) {
            throw std::domain_error("StrengthDistribution: non-finite parameter");
        }
    }
}

DistributionKind StrengthDistribution::kind() const {
    return static_cast<DistributionKind>(params_.index());
}

double StrengthDistribution::beta() const { return std::get<PointMass>(params_).beta; }
double StrengthDistribution::mu() const { return std::get<LogNormal>(params_).mu; }
double StrengthDistribution::sigma() const { return softplus(std::get<LogNormal>(params_).sigma_raw); }
double StrengthDistribution::shape() const { return softplus(std::get<GammaDist>(params_).k_raw); }
double StrengthDistribution::rate() const { return softplus(std::get<GammaDist>(params_).lambda_raw); }

double StrengthDistribution::mean() const {
    switch (kind()) {
        case DistributionKind::kPointMass:
            return beta();
        case DistributionKind::kLogNormal: {
            const double s = sigma();
            return std::exp(mu() + 0.5 * s * s);
        }
        case DistributionKind::kGamma:
            return shape() / rate();
    }
    return 0.0;
}

double StrengthDistribution::variance() const {
    switch (kind()) {
        case DistributionKind::kPointMass:
            return 0.0;
        case DistributionKind::kLogNormal: {
            const double s2 = sigma() * sigma();
            return std::expm1(s2) * std::exp(2.0 * mu() + s2);
        }
        case DistributionKind::kGamma: {
            const double r = rate();
            return shape() / (r * r);
        }
    }
    return 0.0;
}

std::vector<double> StrengthDistribution::raw_params() const {
    switch (kind()) {
        case DistributionKind::kPointMass:
            return {beta()};
        case DistributionKind::kLogNormal: {
            const auto& p = std::get<LogNormal>(params_);
            return {p.mu, p.sigma_raw};
        }
        case DistributionKind::kGamma: {
            const auto& p = std::get<GammaDist>(params_);
            return {p.k_raw, p.lambda_raw};
        }
    }
    return {};
}

void StrengthDistribution::set_raw_params(const std::vector<double>& raw) {
    const std::size_t want = kind() == DistributionKind::kPointMass ? 1 : 2;
    if (raw.size() != want) {
        throw std::invalid_argument("set_raw_params: expected " + std::to_string(want) + " values");
    }
    switch (kind()) {
        case DistributionKind::kPointMass:
            params_ = PointMass{raw[0]};
            break;
        case DistributionKind::kLogNormal:
            params_ = LogNormal{raw[0], raw[1]};
            break;
        case DistributionKind::kGamma:
            params_ = GammaDist{raw[0], raw[1]};
            break;
    }
    validate();
}

double StrengthDistribution::sample(Pcg32& rng) const {
    switch (kind()) {
        case DistributionKind::kPointMass:
            return beta();
        case DistributionKind::kLogNormal:
            return lognormal_sample(mu(), sigma(), rng);
        case DistributionKind::kGamma:
            return gamma_sample(shape(), rate(), rng);
    }
    return 0.0;
}

DistributionParameters::DistributionParameters(StrengthDistribution dist) : dist_(std::move(dist)) {
    if (dist_.kind() == DistributionKind::kPointMass) {
        return;
    }
    for (double r : dist_.raw_params()) {
        nodes_.emplace_back(ad::Tensor::scalar(r), dist_.trainable());
    }
}

void DistributionParameters::sync_from_nodes() {
    if (nodes_.empty()) {
        return;
    }
    std::vector<double> raw;
    raw.reserve(nodes_.size());
    for (const auto& n : nodes_) {
        raw.push_back(n.item());
    }
    dist_.set_raw_params(raw);
}

}  // namespace mixdpo
