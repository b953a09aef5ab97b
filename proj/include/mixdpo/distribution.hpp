#pragma once

// Preference-strength distributions over beta. Positive parameters are stored
// raw and mapped through softplus, so gradient updates can never leave the
// valid domain.

#include <string>
#include <variant>
#include <vector>

#include "mixdpo/autodiff.hpp"
#include "mixdpo/rng.hpp"

namespace mixdpo {

struct PointMass {
    double beta = 0.1;
};

struct LogNormal {
    double mu = -2.3;
    double sigma_raw = 0.0;  // sigma = softplus(sigma_raw)
};

struct GammaDist {
    double k_raw = 0.0;       // k = softplus(k_raw)
    double lambda_raw = 0.0;  // lambda = softplus(lambda_raw)
};

enum class DistributionKind { kPointMass, kLogNormal, kGamma };

std::string to_string(DistributionKind kind);
DistributionKind distribution_kind_from_string(const std::string& name);

class StrengthDistribution {
public:
    StrengthDistribution() : StrengthDistribution(point_mass(0.1)) {}

    static StrengthDistribution point_mass(double beta);
    static StrengthDistribution lognormal(double mu, double sigma, bool trainable = true);
    static StrengthDistribution gamma(double k, double lambda, bool trainable = true);
    static StrengthDistribution lognormal_raw(double mu, double sigma_raw, bool trainable = true);
    static StrengthDistribution gamma_raw(double k_raw, double lambda_raw, bool trainable = true);

    DistributionKind kind() const;
    bool trainable() const { return trainable_; }
    void set_trainable(bool t) { trainable_ = t; }

    const std::variant<PointMass, LogNormal, GammaDist>& params() const { return params_; }

    // Effective (post-softplus) parameters.
    double beta() const;
    double mu() const;
    double sigma() const;
    double shape() const;
    double rate() const;

    double mean() const;
    double variance() const;

    /// Raw parameters in a fixed order: PointMass {beta}, LogNormal
    /// {mu, sigma_raw}, Gamma {k_raw, lambda_raw}.
    std::vector<double> raw_params() const;
    void set_raw_params(const std::vector<double>& raw);

    double sample(Pcg32& rng) const;

private:
    explicit StrengthDistribution(std::variant<PointMass, LogNormal, GammaDist> p, bool trainable)
        : params_(p), trainable_(trainable) {}

    void validate() const;

    std::variant<PointMass, LogNormal, GammaDist> params_;
    bool trainable_ = false;
};

/// Autodiff leaves mirroring a distribution's raw parameters. The leaves
/// require gradients iff the distribution is trainable; PointMass has none.
class DistributionParameters {
public:
    explicit DistributionParameters(StrengthDistribution dist);

    const StrengthDistribution& distribution() const { return dist_; }
    std::vector<ad::Node>& nodes() { return nodes_; }
    const std::vector<ad::Node>& nodes() const { return nodes_; }

    /// Copies node values back into the distribution.
    void sync_from_nodes();

private:
    StrengthDistribution dist_;
    std::vector<ad::Node> nodes_;
};

}  // namespace mixdpo
