#pragma once

// Run configuration: one JSON document with sections generator, model,
// distribution, train, eval and paths. Every key is optional, unknown keys
// are rejected, and errors name the offending JSON pointer. Relative paths
// resolve against the directory holding the config file.

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>

#include "mixdpo/datagen.hpp"
#include "mixdpo/distribution.hpp"
#include "mixdpo/eval.hpp"
#include "mixdpo/model.hpp"
#include "mixdpo/train.hpp"

namespace mixdpo {

class ConfigError : public std::runtime_error {
public:
    ConfigError(std::string pointer, const std::string& message)
        : std::runtime_error(pointer + ": " + message), pointer_(std::move(pointer)) {}
    const std::string& pointer() const { return pointer_; }

private:
    std::string pointer_;
};

struct EvalConfig {
    bool length_normalize = false;
    bool implicit_reward = false;
    std::vector<std::string> dimensions;
};

struct PathsConfig {
    std::optional<std::filesystem::path> data;
    std::optional<std::filesystem::path> out;
    std::optional<std::filesystem::path> checkpoint;
    std::optional<std::filesystem::path> baseline;
};

struct RunConfig {
    GeneratorSpec generator;
    // 0 means single-stream generation; otherwise partitioned with this
    // chunk size.
    std::size_t generator_chunk_size = 0;
    ModelConfig model;  // vocab mirrors generator.vocab
    StrengthDistribution distribution = StrengthDistribution::point_mass(0.1);
    TrainConfig train;
    EvalConfig eval;
    PathsConfig paths;
};

RunConfig parse_run_config(const std::string& json_text, const std::filesystem::path& base_dir);
RunConfig load_run_config(const std::filesystem::path& path);

// Distribution documents: {"variant": "dpo", "beta": b},
// {"variant": "lognormal", "mu": m, "sigma": s} or
// {"variant": "gamma", "k": k, "lambda": l}; positive parameters are given
// post-softplus.
std::string distribution_to_json(const StrengthDistribution& dist);
StrengthDistribution distribution_from_json(const std::string& text);
void write_distribution_json(const std::filesystem::path& path, const StrengthDistribution& dist);
StrengthDistribution read_distribution_json(const std::filesystem::path& path);

}  // namespace mixdpo
