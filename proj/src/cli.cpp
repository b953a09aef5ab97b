#include "mixdpo/cli.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>

#include "CLI11.hpp"
#include "json.hpp"
#include "mixdpo/config.hpp"
#include "mixdpo/datagen.hpp"
#include "mixdpo/eval.hpp"
#include "mixdpo/kernels.hpp"
#include "mixdpo/train.hpp"
#include "mixdpo/verify.hpp"

namespace mixdpo {

namespace fs = std::filesystem;

namespace {

struct Flags {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string variant;
    std::optional<double> beta;
    std::optional<double> beta_lr;
    bool paper_exact = false;
    bool length_normalize = false;
    bool implicit_reward = false;
    std::string out;
    std::string data;
    std::string ckpt;
    std::string reference;
    std::string baseline;
    std::string level = "quick";
    std::size_t overhead_pairs = 2000;
    std::size_t overhead_reps = 5;
};

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

RunConfig load_config(const Flags& f) {
    RunConfig rc = f.config.empty() ? RunConfig{} : load_run_config(f.config);
    if (f.seed) {
        rc.generator.rng_seed = *f.seed;
        rc.model.seed = *f.seed;
        rc.train.rng_seed = *f.seed;
    }
    if (!f.variant.empty()) {
        const DistributionKind kind = distribution_kind_from_string(f.variant);
        if (kind != rc.distribution.kind()) {
            rc.distribution = baseline_distribution(kind);
        }
    }
    if (f.beta) {
        if (rc.distribution.kind() != DistributionKind::kPointMass) {
            throw UsageError("--beta applies to the dpo variant only");
        }
        rc.distribution = StrengthDistribution::point_mass(*f.beta);
    }
    if (f.beta_lr) {
        if (!(*f.beta_lr >= 0.0)) {
            throw UsageError("--beta-lr must be >= 0");
        }
        rc.train.beta_lr = *f.beta_lr;
    }
    if (f.paper_exact) {
        rc.train.loss.series.tail_correction = false;
    }
    if (f.length_normalize) {
        rc.eval.length_normalize = true;
    }
    if (f.implicit_reward) {
        rc.eval.implicit_reward = true;
    }
    return rc;
}

fs::path required_path(const std::string& flag_value, const std::optional<fs::path>& from_config, const char* what) {
    if (!flag_value.empty()) {
        return flag_value;
    }
    if (from_config) {
        return *from_config;
    }
    throw UsageError(std::string("missing ") + what);
}

std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

int cmd_generate(const Flags& f, std::ostream& out) {
    const RunConfig rc = load_config(f);
    fs::path path = required_path(f.out, rc.paths.data, "--out (or paths.data)");
    if (fs::is_directory(path)) {
        path /= "pairs.jsonl";
    }
    const auto pairs = rc.generator_chunk_size > 0
                           ? kernels::generate_partitioned(rc.generator, rc.generator_chunk_size,
                                                           kernels::Execution::kParallel)
                           : generate(rc.generator);
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    write_jsonl(path, pairs);
    out << "wrote " << pairs.size() << " pairs to " << path.string() << "\n";
    std::map<std::string, std::map<std::string, std::size_t>> histogram;
    for (const auto& p : pairs) {
        for (const auto& [dim, cat] : p.subgroups) {
            ++histogram[dim][cat];
        }
    }
    for (const auto& [dim, cats] : histogram) {
        out << "  " << dim << ":";
        for (const auto& [cat, n] : cats) {
            out << " " << cat << "=" << n;
        }
        out << "\n";
    }
    return kExitOk;
}

int cmd_train(const Flags& f, std::ostream& out) {
    const RunConfig rc = load_config(f);
    const fs::path data = required_path(f.data, rc.paths.data, "--data (or paths.data)");
    const fs::path dir = required_path(f.out, rc.paths.out, "--out (or paths.out)");
    const auto pairs = read_jsonl(data);
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        try {
            validate_pair(pairs[i], rc.model.vocab.vocab_size);
        } catch (const std::exception& e) {
            throw ConfigError("/paths/data", "pair " + std::to_string(i) + ": " + e.what());
        }
    }
    const SequenceModel reference(rc.model, true);
    const SequenceModel policy = reference.trainable_copy();
    const TrainResult result = train(pairs, policy, reference, rc.distribution, rc.train);

    fs::create_directories(dir);
    save_checkpoint(result.policy, dir / "policy.ckpt");
    save_checkpoint(reference, dir / "reference.ckpt");
    write_distribution_json(dir / "dist.json", result.dist);
    write_trajectory_csv(dir / "trajectory.csv", result.trajectory);

    nlohmann::ordered_json summary;
    summary["variant"] = to_string(result.dist.kind());
    summary["pairs"] = pairs.size();
    summary["steps"] = result.steps;
    summary["final_loss"] = result.final_loss;
    summary["epoch_mean_loss"] = result.epoch_mean_loss;
    summary["beta_mean"] = result.dist.mean();
    summary["beta_variance"] = result.dist.variance();
    summary["raw_params"] = result.dist.raw_params();
    summary["beta_lr"] = rc.train.beta_lr;
    summary["paper_exact"] = !rc.train.loss.series.tail_correction;
    summary["wallclock_ns"] = result.wallclock_ns;
    std::ofstream(dir / "summary.json", std::ios::binary) << summary.dump(2) << "\n";

    out << "trained " << to_string(result.dist.kind()) << " for " << result.steps << " steps: final loss "
        << num(result.final_loss) << ", beta mean " << num(result.dist.mean()) << ", beta variance "
        << num(result.dist.variance()) << "\n";
    out << "artifacts in " << dir.string() << "\n";
    return kExitOk;
}

int cmd_eval(const Flags& f, std::ostream& out, std::ostream& err) {
    const RunConfig rc = load_config(f);
    const fs::path ckpt = required_path(f.ckpt, rc.paths.checkpoint, "--ckpt (or paths.checkpoint)");
    const fs::path data = required_path(f.data, rc.paths.data, "--data (or paths.data)");
    const fs::path dir = required_path(f.out, rc.paths.out, "--out (or paths.out)");
    const SequenceModel policy = load_checkpoint(ckpt, true);
    const auto pairs = read_jsonl(data);
    std::optional<MarginReport> baseline;
    if (!f.baseline.empty()) {
        baseline = read_report_json(f.baseline);
    } else if (rc.paths.baseline) {
        baseline = read_report_json(*rc.paths.baseline);
    }
    EvalOptions opts;
    opts.length_normalize = rc.eval.length_normalize;
    opts.implicit_reward = rc.eval.implicit_reward;
    opts.expected_dimensions = rc.eval.dimensions;
    if (opts.expected_dimensions.empty()) {
        for (const auto& d : rc.generator.subgroup_dims) {
            opts.expected_dimensions.push_back(d.name);
        }
    }
    std::optional<SequenceModel> reference;
    if (opts.implicit_reward) {
        reference = load_checkpoint(f.reference.empty() ? ckpt.parent_path() / "reference.ckpt" : fs::path(f.reference),
                                    true);
    }
    const MarginReport report =
        build_report(policy, pairs, baseline ? &*baseline : nullptr, opts, reference ? &*reference : nullptr);

    fs::create_directories(dir);
    write_report_json(dir / "report.json", report);
    write_report_csv(dir / "report.csv", report);
    for (const auto& w : report.warnings) {
        err << "warning: " << w << "\n";
    }
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-20s %8s %14s %14s\n", "dimension", "pairs", "macro_margin", "macro_gain");
    out << buf;
    for (const auto& d : report.dimensions) {
        std::snprintf(buf, sizeof buf, "%-20s %8zu %14.6f %14s\n", d.dimension.c_str(), d.count, d.macro_avg,
                      d.macro_gain ? num(*d.macro_gain).c_str() : "-");
        out << buf;
    }
    std::snprintf(buf, sizeof buf, "%-20s %8zu %14.6f %14s\n", "micro", report.per_pair_margins.size(),
                  report.micro_avg, report.micro_gain ? num(*report.micro_gain).c_str() : "-");
    out << buf;
    return kExitOk;
}

int cmd_verify(const Flags& f, std::ostream& out, std::ostream& err) {
    verify::Options opts;
    opts.level = verify::level_from_string(f.level);
    opts.paper_exact = f.paper_exact;
    opts.seed = f.seed.value_or(0);
    std::optional<verify::CheckResult> first_failure;
    const auto results = verify::run(opts, [&](const verify::CheckResult& r) {
        out << verify::format(r) << "\n" << std::flush;
        if (!r.passed && !first_failure) {
            first_failure = r;
        }
    });
    std::size_t passed = 0;
    for (const auto& r : results) {
        passed += r.passed ? 1 : 0;
    }
    out << passed << "/" << results.size() << " checks passed\n";
    if (first_failure) {
        err << "verification failed: " << first_failure->name << "\n";
        return kExitVerifyFailed;
    }
    return kExitOk;
}

int cmd_overhead(const Flags& f, std::ostream& out) {
    const RunConfig rc = load_config(f);
    RuntimeWorkload w;
    w.n_pairs = f.overhead_pairs;
    w.repetitions = f.overhead_reps;
    w.batch_size = rc.train.batch_size;
    w.seed = rc.train.rng_seed;
    w.model = rc.model;
    const auto entries = runtime_compare(w, {"dpo", "lognormal", "gamma"});
    out << format_runtime_table(entries);
    out << "reference points: lognormal 1.02x, gamma 1.1x (report only)\n";
    if (!f.out.empty()) {
        nlohmann::ordered_json j = nlohmann::ordered_json::array();
        for (const auto& e : entries) {
            j.push_back({{"variant", e.variant},
                         {"mean_seconds", e.mean_seconds},
                         {"sd_seconds", e.sd_seconds},
                         {"ratio_mean", e.ratio_mean},
                         {"ratio_sd", e.ratio_sd},
                         {"reference_point", e.reference_point ? nlohmann::ordered_json(*e.reference_point)
                                                               : nlohmann::ordered_json(nullptr)}});
        }
        fs::create_directories(f.out);
        std::ofstream(fs::path(f.out) / "runtime.json", std::ios::binary) << j.dump(2) << "\n";
    }
    return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"MixDPO: preference optimisation with a learned preference-strength distribution", "mixdpo"};
    app.require_subcommand(1);
    Flags f;

    const auto common = [&](CLI::App* sub) {
        sub->add_option("--config", f.config, "Run configuration JSON")->check(CLI::ExistingFile);
        sub->add_option("--seed", f.seed, "Overrides every seed in the configuration");
    };
    const auto training = [&](CLI::App* sub) {
        sub->add_option("--variant", f.variant, "dpo, lognormal or gamma")
            ->check(CLI::IsMember({"dpo", "lognormal", "gamma"}));
        sub->add_option("--beta", f.beta, "Point-mass beta for the dpo variant");
        sub->add_option("--beta-lr", f.beta_lr, "Learning rate of the distribution parameters (0 freezes them)");
        sub->add_flag("--paper-exact", f.paper_exact, "Bare truncated series, no tail correction");
    };

    auto* gen = app.add_subcommand("generate", "Write a synthetic preference dataset (JSON Lines)");
    common(gen);
    gen->add_option("--out", f.out, "Output file, or directory for pairs.jsonl");

    auto* tr = app.add_subcommand("train", "Train a policy and the beta distribution");
    common(tr);
    training(tr);
    tr->add_option("--data", f.data, "Training pairs (JSON Lines)");
    tr->add_option("--out", f.out, "Output directory");

    auto* ev = app.add_subcommand("eval", "Preference-margin report");
    common(ev);
    ev->add_option("--ckpt", f.ckpt, "Policy checkpoint");
    ev->add_option("--data", f.data, "Evaluation pairs (JSON Lines)");
    ev->add_option("--baseline", f.baseline, "Baseline report.json for margin gains");
    ev->add_option("--reference", f.reference, "Reference checkpoint for --implicit-reward");
    ev->add_flag("--length-normalize", f.length_normalize, "Divide log-probabilities by response length");
    ev->add_flag("--implicit-reward", f.implicit_reward, "Margins from the implicit reward instead of the policy");
    ev->add_option("--out", f.out, "Output directory");

    auto* ver = app.add_subcommand("verify", "Run the numerical oracle suites");
    ver->add_option("--level", f.level, "quick or full")->check(CLI::IsMember({"quick", "full"}));
    ver->add_flag("--paper-exact", f.paper_exact, "Check the bare truncated series against its 5e-5 target");
    ver->add_option("--seed", f.seed, "Seed for randomised checks");

    auto* ov = app.add_subcommand("overhead", "Relative training runtime of dpo, lognormal and gamma");
    common(ov);
    ov->add_option("--pairs", f.overhead_pairs, "Workload size");
    ov->add_option("--reps", f.overhead_reps, "Repetitions (>= 5 recommended)");
    ov->add_option("--out", f.out, "Directory for runtime.json");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return kExitConfigError;
    }

    try {
        if (gen->parsed()) {
            return cmd_generate(f, out);
        }
        if (tr->parsed()) {
            return cmd_train(f, out);
        }
        if (ev->parsed()) {
            return cmd_eval(f, out, err);
        }
        if (ver->parsed()) {
            return cmd_verify(f, out, err);
        }
        if (ov->parsed()) {
            return cmd_overhead(f, out);
        }
    } catch (const ConfigError& e) {
        err << "config error at " << e.what() << "\n";
        return kExitConfigError;
    } catch (const CheckpointError& e) {
        err << "checkpoint error: " << e.what() << "\n";
        return kExitConfigError;
    } catch (const UsageError& e) {
        err << "error: " << e.what() << "\n";
        return kExitConfigError;
    } catch (const TrainingAborted& e) {
        err << "training aborted at " << e.what() << "\n";
        return kExitRuntimeAbort;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitRuntimeAbort;
    }
    return kExitConfigError;
}

}  // namespace mixdpo
