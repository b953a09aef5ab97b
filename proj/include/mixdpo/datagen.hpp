#pragma once

// Synthetic mixed-logit preference data. Each pair draws subgroup labels,
// an annotator strength beta from the distribution attached to its
// category, two distinct responses with a teacher reward gap, and a
// Bernoulli(sigmoid(beta |gap|)) label deciding whether the higher-reward
// response wins.
//
// Teacher rewards come from a seeded per-token Gaussian weight table:
// r(y) = scale / sqrt(2 len(y)) * sum_t w[y_t], so the gap between two
// independent responses is approximately Normal(0, scale^2) and the toy
// policy can learn it from token identity.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mixdpo/distribution.hpp"
#include "mixdpo/model.hpp"
#include "mixdpo/pair.hpp"
#include "mixdpo/rng.hpp"

namespace mixdpo {

struct SubgroupDimension {
    std::string name;
    std::vector<std::string> categories;
    // One positive weight per category; normalised internally.
    std::vector<double> weights;
};

/// age, gender, education, employment and conversation_type with synthetic
/// categories.
std::vector<SubgroupDimension> default_subgroup_dimensions();

class SpecError : public std::invalid_argument {
public:
    SpecError(std::string pointer, const std::string& message)
        : std::invalid_argument(pointer + ": " + message), pointer_(std::move(pointer)) {}
    const std::string& pointer() const { return pointer_; }

private:
    std::string pointer_;
};

struct GeneratorSpec {
    std::size_t n_pairs = 1000;
    VocabConfig vocab;
    std::vector<SubgroupDimension> subgroup_dims = default_subgroup_dimensions();
    // Dimension whose category selects the annotator's beta distribution;
    // empty means the first dimension.
    std::string beta_dimension;
    std::map<std::string, StrengthDistribution> beta_dist_per_category;
    // Used for categories without an entry above.
    StrengthDistribution default_beta = StrengthDistribution::point_mass(1.0);
    double teacher_delta_scale = 1.0;
    std::uint64_t rng_seed = 0;
    std::uint64_t teacher_seed = 7;
    // Replaces the teacher gap by a constant (responses are still random).
    std::optional<double> fixed_delta;
    // Negates every teacher reward; with the same seed this mirrors the
    // dataset pairwise.
    bool negate_teacher = false;

    /// Throws SpecError carrying a JSON pointer relative to the spec.
    void validate() const;
    const SubgroupDimension* beta_dimension_ptr() const;
};

/// Deterministic per-token teacher weights w[0..V).
std::vector<double> teacher_token_weights(const GeneratorSpec& spec);
double teacher_reward(const GeneratorSpec& spec, const std::vector<double>& weights, const TokenSeq& response);

/// Single-stream generation from Pcg32(rng_seed, 0).
std::vector<PreferencePair> generate(const GeneratorSpec& spec);

/// Pairs [begin, end) drawn from Pcg32(rng_seed, chunk + 1); the unit of
/// work for partitioned generation. Output is independent of how chunks are
/// scheduled.
std::vector<PreferencePair> generate_chunk(const GeneratorSpec& spec, const std::vector<double>& weights,
                                           std::size_t chunk, std::size_t begin, std::size_t end);

/// Sequential reference for partitioned generation.
std::vector<PreferencePair> generate_partitioned_serial(const GeneratorSpec& spec, std::size_t chunk_size);

/// Draws one pair with global index `index`, consuming rng.
PreferencePair sample_pair(const GeneratorSpec& spec, const std::vector<double>& weights, std::size_t index,
                           Pcg32& rng);

}  // namespace mixdpo
