#include "mixdpo/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <iterator>
#include <numeric>

#include "mixdpo/specfn.hpp"

namespace mixdpo {

std::vector<SubgroupDimension> default_subgroup_dimensions() {
    return {
        {"age", {"18-24", "25-34", "35-54", "55+"}, {0.25, 0.35, 0.25, 0.15}},
        {"gender", {"female", "male", "non-binary"}, {0.48, 0.48, 0.04}},
        {"education", {"secondary", "undergraduate", "graduate"}, {0.3, 0.45, 0.25}},
        {"employment", {"employed", "student", "unemployed", "retired"}, {0.55, 0.2, 0.1, 0.15}},
        {"conversation_type", {"unguided", "values_guided", "controversy_guided"}, {0.4, 0.3, 0.3}},
    };
}

void GeneratorSpec::validate() const {
    if (n_pairs < 1) {
        throw SpecError("/n_pairs", "must be >= 1");
    }
    try {
        vocab.validate();
    } catch (const std::invalid_argument& e) {
        throw SpecError("/vocab", e.what());
    }
    if (vocab.vocab_size < 2) {
        throw SpecError("/vocab", "need at least two tokens to form distinct responses");
    }
    if (!(teacher_delta_scale > 0.0) || !std::isfinite(teacher_delta_scale)) {
        throw SpecError("/teacher_delta_scale", "must be positive and finite");
    }
    if (fixed_delta && !std::isfinite(*fixed_delta)) {
        throw SpecError("/fixed_delta", "must be finite");
    }
    for (std::size_t d = 0; d < subgroup_dims.size(); ++d) {
        const auto& dim = subgroup_dims[d];
        const std::string ptr = "/subgroup_dims/" + std::to_string(d);
        if (dim.name.empty()) {
            throw SpecError(ptr + "/name", "must be non-empty");
        }
        if (dim.categories.empty()) {
            throw SpecError(ptr + "/categories", "must be non-empty");
        }
        if (dim.weights.size() != dim.categories.size()) {
            throw SpecError(ptr + "/weights", "need one weight per category");
        }
        for (std::size_t c = 0; c < dim.weights.size(); ++c) {
            if (!(dim.weights[c] > 0.0) || !std::isfinite(dim.weights[c])) {
                throw SpecError(ptr + "/weights/" + std::to_string(c), "must be positive");
            }
        }
    }
    if (!beta_dimension.empty() && beta_dimension_ptr() == nullptr) {
        throw SpecError("/beta_dimension", "unknown dimension '" + beta_dimension + "'");
    }
    const SubgroupDimension* bd = beta_dimension_ptr();
    for (const auto& [cat, dist] : beta_dist_per_category) {
        (void)dist;
        if (bd == nullptr ||
            std::find(bd->categories.begin(), bd->categories.end(), cat) == bd->categories.end()) {
            throw SpecError("/beta_dist_per_category/" + cat, "not a category of the beta dimension");
        }
    }
}

const SubgroupDimension* GeneratorSpec::beta_dimension_ptr() const {
    if (subgroup_dims.empty()) {
        return nullptr;
    }
    if (beta_dimension.empty()) {
        return &subgroup_dims.front();
    }
    for (const auto& d : subgroup_dims) {
        if (d.name == beta_dimension) {
            return &d;
        }
    }
    return nullptr;
}

std::vector<double> teacher_token_weights(const GeneratorSpec& spec) {
    Pcg32 rng(spec.teacher_seed, 0x7465616368ULL);
    std::vector<double> w(spec.vocab.vocab_size);
    for (double& v : w) {
        v = rng.normal();
    }
    return w;
}

double teacher_reward(const GeneratorSpec& spec, const std::vector<double>& weights, const TokenSeq& response) {
    double acc = 0.0;
    for (std::size_t t : response) {
        acc += weights.at(t);
    }
    const double r = spec.teacher_delta_scale * acc / std::sqrt(2.0 * static_cast<double>(response.size()));
    return spec.negate_teacher ? -r : r;
}

namespace {

std::size_t categorical(const std::vector<double>& weights, Pcg32& rng) {
    const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
    const double u = rng.uniform() * total;
    double acc = 0.0;
    for (std::size_t i = 0; i + 1 < weights.size(); ++i) {
        acc += weights[i];
        if (u < acc) {
            return i;
        }
    }
    return weights.size() - 1;
}

TokenSeq random_tokens(std::size_t max_len, std::size_t vocab, Pcg32& rng) {
    const std::size_t len = 1 + rng.below(static_cast<std::uint32_t>(max_len));
    TokenSeq seq(len);
    for (auto& t : seq) {
        t = rng.below(static_cast<std::uint32_t>(vocab));
    }
    return seq;
}

}  // namespace

PreferencePair sample_pair(const GeneratorSpec& spec, const std::vector<double>& weights, std::size_t index,
                           Pcg32& rng) {
    PreferencePair p;
    const SubgroupDimension* bd = spec.beta_dimension_ptr();
    const StrengthDistribution* dist = &spec.default_beta;
    for (const auto& dim : spec.subgroup_dims) {
        const std::string& cat = dim.categories[categorical(dim.weights, rng)];
        p.subgroups[dim.name] = cat;
        if (&dim == bd) {
            if (auto it = spec.beta_dist_per_category.find(cat); it != spec.beta_dist_per_category.end()) {
                dist = &it->second;
            }
        }
    }
    const double beta = dist->sample(rng);

    p.prompt = random_tokens(spec.vocab.max_prompt_len, spec.vocab.vocab_size, rng);
    TokenSeq first = random_tokens(spec.vocab.max_response_len, spec.vocab.vocab_size, rng);
    TokenSeq second;
    do {
        second = random_tokens(spec.vocab.max_response_len, spec.vocab.vocab_size, rng);
    } while (second == first);

    double gap = teacher_reward(spec, weights, first) - teacher_reward(spec, weights, second);
    if (spec.fixed_delta) {
        gap = spec.negate_teacher ? -*spec.fixed_delta : *spec.fixed_delta;
    }
    // The higher-reward response wins with probability sigmoid(beta |gap|).
    const double u = rng.uniform();
    const bool higher_wins = u < specfn::sigmoid(beta * std::abs(gap));
    const bool first_higher = gap > 0.0 || (gap == 0.0 && !spec.negate_teacher);
    const bool first_wins = higher_wins == first_higher;

    p.chosen = first_wins ? std::move(first) : std::move(second);
    p.rejected = first_wins ? std::move(second) : std::move(first);
    p.annotator_id = "annotator-" + std::to_string(index);
    p.true_beta = beta;
    p.true_delta = first_wins ? gap : -gap;
    return p;
}

std::vector<PreferencePair> generate(const GeneratorSpec& spec) {
    spec.validate();
    const auto weights = teacher_token_weights(spec);
    Pcg32 rng(spec.rng_seed, 0);
    std::vector<PreferencePair> out;
    out.reserve(spec.n_pairs);
    for (std::size_t i = 0; i < spec.n_pairs; ++i) {
        out.push_back(sample_pair(spec, weights, i, rng));
    }
    return out;
}

std::vector<PreferencePair> generate_chunk(const GeneratorSpec& spec, const std::vector<double>& weights,
                                           std::size_t chunk, std::size_t begin, std::size_t end) {
    Pcg32 rng(spec.rng_seed, chunk + 1);
    std::vector<PreferencePair> out;
    out.reserve(end - begin);
    for (std::size_t i = begin; i < end; ++i) {
        out.push_back(sample_pair(spec, weights, i, rng));
    }
    return out;
}

std::vector<PreferencePair> generate_partitioned_serial(const GeneratorSpec& spec, std::size_t chunk_size) {
    spec.validate();
    if (chunk_size < 1) {
        throw std::invalid_argument("generate_partitioned: chunk_size must be >= 1");
    }
    const auto weights = teacher_token_weights(spec);
    std::vector<PreferencePair> out;
    out.reserve(spec.n_pairs);
    for (std::size_t c = 0, begin = 0; begin < spec.n_pairs; ++c, begin += chunk_size) {
        auto part = generate_chunk(spec, weights, c, begin, std::min(spec.n_pairs, begin + chunk_size));
        std::move(part.begin(), part.end(), std::back_inserter(out));
    }
    return out;
}

}  // namespace mixdpo
