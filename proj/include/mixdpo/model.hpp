#pragma once

// Toy autoregressive categorical model: the context for each response token
// is the mean embedding of the previous `window` tokens (prompt included),
// followed by one tanh hidden layer and a softmax over the vocabulary.

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "mixdpo/autodiff.hpp"
#include "mixdpo/pair.hpp"

namespace mixdpo {

struct VocabConfig {
    std::size_t vocab_size = 32;
    std::size_t max_prompt_len = 8;
    std::size_t max_response_len = 16;

    void validate() const;
};

struct ModelConfig {
    VocabConfig vocab;
    std::size_t hidden = 32;
    std::size_t window = 4;
    double init_std = 0.1;
    std::uint64_t seed = 1;
    // Zero output projection and bias: every position predicts uniformly.
    bool zero_output = false;

    void validate() const;
};

class SequenceModel {
public:
    /// Seeded Gaussian initialisation (std = init_std). Parameters require
    /// gradients unless `frozen`.
    explicit SequenceModel(const ModelConfig& config, bool frozen = false);

    const ModelConfig& config() const { return config_; }
    std::size_t vocab_size() const { return config_.vocab.vocab_size; }
    bool frozen() const { return frozen_; }

    // Parameters in a fixed order: embedding [V x d], hidden_w [d x d],
    // hidden_b [d], output_w [d x V], output_b [V].
    std::vector<ad::Node>& parameters() { return params_; }
    const std::vector<ad::Node>& parameters() const { return params_; }
    static const std::vector<std::string>& parameter_names();

    SequenceModel frozen_copy() const;
    SequenceModel trainable_copy() const;

    /// Bitwise hash of all parameter values.
    std::uint64_t fingerprint() const;

    void zero_grad();

private:
    SequenceModel(const ModelConfig& config, std::vector<ad::Node> params, bool frozen)
        : config_(config), params_(std::move(params)), frozen_(frozen) {}

    ModelConfig config_;
    std::vector<ad::Node> params_;
    bool frozen_ = false;
};

/// log-softmax outputs for every response position, [len(response) x V].
ad::Node position_logprobs(const SequenceModel& model, const TokenSeq& prompt, const TokenSeq& response);

/// sum_t log p(response_t | prompt, response_<t) as a scalar node.
ad::Node sequence_logprob(const SequenceModel& model, const TokenSeq& prompt, const TokenSeq& response);
double sequence_logprob_value(const SequenceModel& model, const TokenSeq& prompt, const TokenSeq& response);

/// [log pi(y_w|x) - log pi_ref(y_w|x)] - [log pi(y_l|x) - log pi_ref(y_l|x)].
ad::Node implicit_reward_delta(const SequenceModel& policy, const SequenceModel& reference,
                               const PreferencePair& pair);

struct ReferenceLogprobs {
    double chosen = 0.0;
    double rejected = 0.0;
};

/// Same as above with precomputed reference log-probabilities.
ad::Node implicit_reward_delta(const SequenceModel& policy, const ReferenceLogprobs& reference,
                               const PreferencePair& pair);

// Checkpoints: versioned JSON, one entry per named tensor.
inline constexpr int kCheckpointVersion = 1;
void save_checkpoint(const SequenceModel& model, const std::filesystem::path& path);
SequenceModel load_checkpoint(const std::filesystem::path& path, bool frozen = false);

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace mixdpo
