#include "mixdpo/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <ostream>

#include "mixdpo/kernels.hpp"
#include "mixdpo/rng.hpp"

namespace mixdpo {

namespace {

constexpr std::uint64_t kShuffleStream = 0x73687566ULL;

std::int64_t elapsed_ns(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::steady_clock::now() - start).count();
}

// Per-tensor optimiser state; the update is applied in place to leaf values.
class Optimizer {
public:
    Optimizer(const TrainConfig& cfg, double lr) : cfg_(cfg), lr_(lr) {}

    void step(std::vector<ad::Node>& params, const std::vector<std::vector<double>>& grads) {
        if (lr_ == 0.0) {
            return;
        }
        if (ema_.empty()) {
            for (const auto& g : grads) {
                ema_.emplace_back(g.size(), 0.0);
            }
        }
        for (std::size_t p = 0; p < params.size(); ++p) {
            auto& value = params[p].mutable_value().data;
            const auto& g = grads[p];
            for (std::size_t i = 0; i < value.size(); ++i) {
                if (cfg_.optimizer == OptimizerKind::kSgd) {
                    value[i] -= lr_ * g[i];
                } else {
                    double& e = ema_[p][i];
                    e = cfg_.rms_decay * e + (1.0 - cfg_.rms_decay) * g[i] * g[i];
                    value[i] -= lr_ * g[i] / (std::sqrt(e) + cfg_.rms_epsilon);
                }
            }
        }
    }

private:
    const TrainConfig& cfg_;
    double lr_;
    std::vector<std::vector<double>> ema_;
};

std::vector<std::vector<double>> collect_grads(const std::vector<ad::Node>& params) {
    std::vector<std::vector<double>> out;
    out.reserve(params.size());
    for (const auto& p : params) {
        out.push_back(p.grad().data);
    }
    return out;
}

double clip_all(std::vector<std::vector<double>>& grads, double max_norm) {
    std::vector<std::span<double>> views(grads.begin(), grads.end());
    return clip_global_norm(views, max_norm);
}

TrajectoryPoint snapshot(std::size_t step, double loss, const StrengthDistribution& dist,
                         std::chrono::steady_clock::time_point start) {
    TrajectoryPoint pt;
    pt.step = step;
    pt.loss = loss;
    pt.beta_mean = dist.mean();
    pt.beta_variance = dist.variance();
    pt.raw_params = dist.raw_params();
    pt.wallclock_ns = elapsed_ns(start);
    return pt;
}

}  // namespace

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::kSgd ? "sgd" : "rms"; }

OptimizerKind optimizer_kind_from_string(const std::string& name) {
    if (name == "sgd") {
        return OptimizerKind::kSgd;
    }
    if (name == "rms") {
        return OptimizerKind::kRms;
    }
    throw std::invalid_argument("unknown optimizer '" + name + "' (expected sgd or rms)");
}

void TrainConfig::validate() const {
    if (!(policy_lr >= 0.0) || !std::isfinite(policy_lr)) {
        throw std::invalid_argument("policy_lr must be finite and >= 0");
    }
    if (!(beta_lr >= 0.0) || !std::isfinite(beta_lr)) {
        throw std::invalid_argument("beta_lr must be finite and >= 0");
    }
    if (batch_size < 1 || epochs < 1 || eval_every < 1) {
        throw std::invalid_argument("batch_size, epochs and eval_every must be >= 1");
    }
    if (!(grad_clip_max_norm > 0.0)) {
        throw std::invalid_argument("grad_clip_max_norm must be positive");
    }
    if (!(rms_decay >= 0.0 && rms_decay < 1.0)) {
        throw std::invalid_argument("rms_decay must lie in [0, 1)");
    }
    if (!(rms_epsilon > 0.0)) {
        throw std::invalid_argument("rms_epsilon must be positive");
    }
    loss.validate();
}

double clip_global_norm(std::span<const std::span<double>> grads, double max_norm) {
    if (!(max_norm > 0.0)) {
        throw std::invalid_argument("clip_global_norm: max_norm must be positive");
    }
    double sq = 0.0;
    for (const auto& g : grads) {
        for (double v : g) {
            sq += v * v;
        }
    }
    const double norm = std::sqrt(sq);
    if (norm > max_norm) {
        const double factor = max_norm / norm;
        for (const auto& g : grads) {
            for (double& v : g) {
                v *= factor;
            }
        }
    }
    return norm;
}

double clip_global_norm(std::vector<double>& grad, double max_norm) {
    const std::span<double> view(grad);
    return clip_global_norm(std::span<const std::span<double>>(&view, 1), max_norm);
}

TrainResult train(std::span<const PreferencePair> pairs, const SequenceModel& policy, const SequenceModel& reference,
                  const StrengthDistribution& dist, const TrainConfig& cfg) {
    if (pairs.empty()) {
        throw std::invalid_argument("train: no training pairs");
    }
    if (!reference.frozen()) {
        throw std::invalid_argument("train: reference model must be frozen");
    }
    cfg.validate();
    const auto start = std::chrono::steady_clock::now();

    SequenceModel model = policy.trainable_copy();
    StrengthDistribution init = dist;
    init.set_trainable(cfg.beta_lr > 0.0 && dist.kind() != DistributionKind::kPointMass);
    DistributionParameters beta_params(init);

    const auto reference_lp = kernels::reference_logprobs(reference, pairs, kernels::Execution::kParallel);

    Pcg32 shuffle_rng(cfg.rng_seed, kShuffleStream);
    Pcg32 noise_rng(cfg.rng_seed, kNoiseStream);
    Optimizer policy_opt(cfg, cfg.policy_lr);
    Optimizer beta_opt(cfg, beta_params.distribution().trainable() ? cfg.beta_lr : 0.0);

    TrainResult result{model, init, {}, {}, 0, 0.0, 0};
    std::vector<std::size_t> order(pairs.size());
    std::vector<PreferencePair> batch;
    std::vector<ReferenceLogprobs> batch_ref;
    const std::size_t steps_per_epoch = (pairs.size() + cfg.batch_size - 1) / cfg.batch_size;
    const std::size_t total_steps = steps_per_epoch * cfg.epochs;
    std::size_t step = 0;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        for (std::size_t i = order.size(); i > 1; --i) {
            std::swap(order[i - 1], order[shuffle_rng.below(static_cast<std::uint32_t>(i))]);
        }
        double epoch_loss = 0.0;
        for (std::size_t b = 0; b < steps_per_epoch; ++b) {
            batch.clear();
            batch_ref.clear();
            const std::size_t end = std::min(pairs.size(), (b + 1) * cfg.batch_size);
            for (std::size_t i = b * cfg.batch_size; i < end; ++i) {
                batch.push_back(pairs[order[i]]);
                batch_ref.push_back(reference_lp[order[i]]);
            }
            model.zero_grad();
            for (auto& n : beta_params.nodes()) {
                n.zero_grad();
            }
            const ad::Node loss = batch_loss(batch, model, batch_ref, beta_params, cfg.loss, noise_rng);
            const double loss_value = loss.item();
            ++step;
            if (!std::isfinite(loss_value)) {
                throw TrainingAborted(step, "non-finite loss");
            }
            if (result.trajectory.empty()) {
                result.trajectory.push_back(snapshot(0, loss_value, beta_params.distribution(), start));
            }
            ad::backward(loss);

            auto policy_grads = collect_grads(model.parameters());
            clip_all(policy_grads, cfg.grad_clip_max_norm);
            policy_opt.step(model.parameters(), policy_grads);
            if (beta_params.distribution().trainable()) {
                auto beta_grads = collect_grads(beta_params.nodes());
                clip_all(beta_grads, cfg.grad_clip_max_norm);
                beta_opt.step(beta_params.nodes(), beta_grads);
                beta_params.sync_from_nodes();
            }

            epoch_loss += loss_value;
            result.final_loss = loss_value;
            if (step % cfg.eval_every == 0 || step == total_steps) {
                result.trajectory.push_back(snapshot(step, loss_value, beta_params.distribution(), start));
            }
        }
        result.epoch_mean_loss.push_back(epoch_loss / static_cast<double>(steps_per_epoch));
    }

    result.policy = model;
    result.dist = beta_params.distribution();
    result.dist.set_trainable(dist.trainable());
    result.steps = step;
    result.wallclock_ns = elapsed_ns(start);
    return result;
}

double dataset_loss(std::span<const PreferencePair> pairs, const SequenceModel& policy, const SequenceModel& reference,
                    const StrengthDistribution& dist, const LossConfig& cfg) {
    ad::NoGradGuard guard;
    StrengthDistribution frozen = dist;
    frozen.set_trainable(false);
    return batch_loss(pairs, policy, reference, DistributionParameters(frozen), cfg).item();
}

void write_trajectory_csv(std::ostream& out, const std::vector<TrajectoryPoint>& trajectory) {
    out << kTrajectoryHeader << '\n';
    char buf[64];
    const auto num = [&](double v) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        return std::string(buf);
    };
    for (const auto& p : trajectory) {
        out << p.step << ',' << num(p.loss) << ',' << num(p.beta_mean) << ',' << num(p.beta_variance) << ','
            << (p.raw_params.size() > 0 ? num(p.raw_params[0]) : "") << ','
            << (p.raw_params.size() > 1 ? num(p.raw_params[1]) : "") << ',' << p.wallclock_ns << '\n';
    }
}

void write_trajectory_csv(const std::filesystem::path& path, const std::vector<TrajectoryPoint>& trajectory) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot open '" + path.string() + "' for writing");
    }
    write_trajectory_csv(out, trajectory);
}

}  // namespace mixdpo
