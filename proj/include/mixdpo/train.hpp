#pragma once

// Joint optimisation of the policy parameters and the beta-distribution
// parameters with separate learning rates.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <vector>

#include "mixdpo/distribution.hpp"
#include "mixdpo/model.hpp"
#include "mixdpo/objective.hpp"
#include "mixdpo/pair.hpp"

namespace mixdpo {

enum class OptimizerKind { kSgd, kRms };

std::string to_string(OptimizerKind kind);
OptimizerKind optimizer_kind_from_string(const std::string& name);

struct TrainConfig {
    double policy_lr = 1e-3;
    // 0 freezes the distribution (fixed-parameter baseline).
    double beta_lr = 1e-4;
    std::size_t batch_size = 64;
    std::size_t epochs = 1;
    double grad_clip_max_norm = 1.0;
    OptimizerKind optimizer = OptimizerKind::kRms;
    double rms_decay = 0.99;
    double rms_epsilon = 1e-8;
    std::size_t eval_every = 50;
    std::uint64_t rng_seed = 0;
    LossConfig loss;

    void validate() const;
};

struct TrajectoryPoint {
    std::size_t step = 0;
    double loss = 0.0;
    double beta_mean = 0.0;
    double beta_variance = 0.0;
    std::vector<double> raw_params;
    std::int64_t wallclock_ns = 0;
};

struct TrainResult {
    SequenceModel policy;
    StrengthDistribution dist;
    std::vector<TrajectoryPoint> trajectory;
    std::vector<double> epoch_mean_loss;
    std::size_t steps = 0;
    double final_loss = 0.0;
    std::int64_t wallclock_ns = 0;
};

class TrainingAborted : public std::runtime_error {
public:
    TrainingAborted(std::size_t step, const std::string& message)
        : std::runtime_error("step " + std::to_string(step) + ": " + message), step_(step) {}
    std::size_t step() const { return step_; }

private:
    std::size_t step_;
};

/// Scales every gradient by max_norm / ||g||_2 when the joint norm exceeds
/// max_norm. Returns the norm before clipping.
double clip_global_norm(std::span<const std::span<double>> grads, double max_norm);
double clip_global_norm(std::vector<double>& grad, double max_norm);

/// Trains a copy of `policy` against the frozen `reference`. Steps are
/// shuffled mini-batches (one Fisher-Yates permutation per epoch); a
/// trajectory point is recorded at step 0, every eval_every steps, and at
/// the last step. Bit-deterministic given the configuration and data.
TrainResult train(std::span<const PreferencePair> pairs, const SequenceModel& policy, const SequenceModel& reference,
                  const StrengthDistribution& dist, const TrainConfig& cfg);

/// Mean loss over all pairs without recording a graph. LogNormal noise comes
/// from Pcg32(cfg.rng_seed, kNoiseStream).
double dataset_loss(std::span<const PreferencePair> pairs, const SequenceModel& policy, const SequenceModel& reference,
                    const StrengthDistribution& dist, const LossConfig& cfg);

inline constexpr const char* kTrajectoryHeader = "step,loss,beta_mean,beta_variance,raw_param_1,raw_param_2,wallclock_ns";

/// One row per point; the second raw parameter is empty for PointMass.
void write_trajectory_csv(std::ostream& out, const std::vector<TrajectoryPoint>& trajectory);
void write_trajectory_csv(const std::filesystem::path& path, const std::vector<TrajectoryPoint>& trajectory);

}  // namespace mixdpo
