// Acceptance run: one PASS/FAIL line per criterion. Tolerances and time
// budgets are fixed here; the process exits non-zero if any line fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "mixdpo/cli.hpp"
#include "mixdpo/datagen.hpp"
#include "mixdpo/eval.hpp"
#include "mixdpo/objective.hpp"
#include "mixdpo/train.hpp"
#include "mixdpo/verify.hpp"

using namespace mixdpo;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool passed = false;
    std::string detail;
};

int g_failures = 0;

void criterion(const char* id, const char* name, double budget_seconds, const std::function<Outcome()>& body) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
        o = body();
    } catch (const std::exception& e) {
        o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    bool ok = o.passed;
    if (budget_seconds > 0 && secs > budget_seconds) {
        ok = false;
        o.detail += " [over budget]";
    }
    g_failures += ok ? 0 : 1;
    std::printf("%s %-3s %-34s %7.2fs  %s\n", ok ? "PASS" : "FAIL", id, name, secs, o.detail.c_str());
    std::fflush(stdout);
}

Outcome from_checks(std::initializer_list<verify::CheckResult> checks) {
    Outcome o{true, ""};
    for (const auto& c : checks) {
        o.passed = o.passed && c.passed;
        char buf[160];
        std::snprintf(buf, sizeof buf, "%s%s %.2e/%.0e", o.detail.empty() ? "" : "; ", c.name.c_str(), c.max_error,
                      c.tolerance);
        o.detail += buf;
    }
    return o;
}

std::string fmt(const char* f, double a, double b = 0, double c = 0) {
    char buf[200];
    std::snprintf(buf, sizeof buf, f, a, b, c);
    return buf;
}

// Matched-mean heterogeneity design: both datasets have E[beta] = 0.2,
// one as a point mass, one as Gamma(2, 10) (variance 0.02).
double learned_variance(bool heterogeneous, std::uint64_t seed) {
    GeneratorSpec g;
    g.n_pairs = 4000;
    g.rng_seed = seed;
    g.teacher_delta_scale = 10.0;
    g.default_beta = heterogeneous ? StrengthDistribution::gamma(2.0, 10.0) : StrengthDistribution::point_mass(0.2);
    const auto pairs = generate(g);
    ModelConfig mc;
    mc.vocab = g.vocab;
    mc.hidden = 8;
    mc.seed = seed;
    const SequenceModel reference(mc, true);
    TrainConfig tc;
    tc.rng_seed = seed;
    tc.epochs = 40;
    tc.batch_size = 16;
    tc.policy_lr = 1e-2;
    tc.beta_lr = 1e-4;
    tc.eval_every = 1000;
    return train(pairs, reference.trainable_copy(), reference, StrengthDistribution::gamma(2.0, 16.7), tc)
        .dist.variance();
}

PreferencePair tagged(std::size_t i, std::map<std::string, std::string> groups) {
    return {{i % 5}, {(i + 1) % 7, 2}, {(i + 3) % 7}, std::move(groups), "a" + std::to_string(i), {}, {}};
}

int cli(std::vector<std::string> args) {
    args.insert(args.begin(), "mixdpo");
    std::vector<const char*> argv;
    for (const auto& a : args) {
        argv.push_back(a.c_str());
    }
    std::ostringstream out, err;
    const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    if (code != kExitOk) {
        std::fprintf(stderr, "%s", err.str().c_str());
    }
    return code;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Artifact contents with wallclock fields removed.
std::string comparable(const fs::path& p) {
    const std::string text = slurp(p);
    if (p.filename() == "summary.json") {
        auto j = nlohmann::ordered_json::parse(text);
        j.erase("wallclock_ns");
        return j.dump();
    }
    if (p.filename() == "trajectory.csv") {
        std::istringstream in(text);
        std::string line, out;
        while (std::getline(in, line)) {
            out += line.substr(0, line.rfind(',')) + "\n";  // wallclock is the last column
        }
        return out;
    }
    return text;
}

}  // namespace

int main() {
    using verify::CheckResult;
    const fs::path tmp = MIXDPO_TEST_TMP;
    fs::remove_all(tmp);
    fs::create_directories(tmp);

    criterion("1a", "closed form vs quadrature", 10.0,
              [] { return from_checks({verify::closed_form_vs_quadrature(specfn::SeriesConfig{}, 1e-4)}); });
    criterion("1b", "closed form, bare series n=1000", 10.0,
              [] { return from_checks({verify::closed_form_vs_quadrature(specfn::SeriesConfig::bare(), 5e-5)}); });
    criterion("2", "special-function identities", 5.0, [] {
        return from_checks({verify::hurwitz_shift_identity(), verify::alternating_shift_identity(),
                            verify::zeta_difference_reduction()});
    });
    criterion("3", "gradient fidelity, 100 seeds", 60.0,
              [] { return from_checks({verify::loss_gradients(0, 100), verify::policy_gradients(0, 100)}); });
    criterion("4", "Monte Carlo consistency", 60.0,
              [] { return from_checks({verify::lognormal_monte_carlo(0), verify::gamma_monte_carlo(0, 50)}); });

    criterion("5", "heterogeneity response, 3 seeds", 300.0, [] {
        Outcome o{true, ""};
        for (std::uint64_t seed = 1; seed <= 3; ++seed) {
            const double hom = learned_variance(false, seed);
            const double het = learned_variance(true, seed);
            o.passed = o.passed && het > hom;
            char buf[96];
            std::snprintf(buf, sizeof buf, "%sseed %llu: het %.6f %s hom %.6f", seed == 1 ? "" : "; ",
                          static_cast<unsigned long long>(seed), het, het > hom ? ">" : "<=", hom);
            o.detail += buf;
        }
        return o;
    });

    criterion("6", "masking arithmetic", 1.0, [] {
        std::vector<PreferencePair> pairs;
        std::vector<double> margins;
        for (std::size_t i = 0; i < 10; ++i) {
            pairs.push_back(tagged(i, {{"group", i < 9 ? "A" : "B"}}));
            margins.push_back(i < 9 ? 1.0 : -1.0);
        }
        const MarginReport r = report_from_margins(pairs, margins);
        bool ok = r.micro_avg == 0.8 && r.find_dimension("group")->macro_avg == 0.0;
        std::string detail = fmt("9-vs-1 micro %.17g macro %.17g", r.micro_avg, r.find_dimension("group")->macro_avg);

        // 10 pairs over 3 colours; every field recomputed by brute force.
        ModelConfig mc;
        mc.vocab = {8, 3, 4};
        mc.hidden = 4;
        mc.init_std = 0.6;
        mc.seed = 13;
        const SequenceModel policy(mc, true);
        const char* cats[] = {"red", "green", "blue"};
        pairs.clear();
        for (std::size_t i = 0; i < 10; ++i) {
            pairs.push_back(tagged(i, {{"colour", cats[(i * 7) % 3]}}));
        }
        const MarginReport b = build_report(policy, pairs);
        std::map<std::string, std::vector<double>> by;
        double total = 0.0;
        for (const auto& p : pairs) {
            const double m = sequence_logprob_value(policy, p.prompt, p.chosen) -
                             sequence_logprob_value(policy, p.prompt, p.rejected);
            by[p.subgroups.at("colour")].push_back(m);
            total += m;
        }
        double macro = 0.0;
        std::size_t fields = 0, matched = 0;
        for (const auto& [cat, v] : by) {
            double s = 0.0;
            for (double m : v) {
                s += m;
            }
            const auto* st = b.find("colour", cat);
            fields += 2;
            matched += st && st->count == v.size() ? 1 : 0;
            matched += st && std::abs(st->mean_margin - s / v.size()) <= 1e-14 ? 1 : 0;
            macro += s / v.size();
        }
        const auto* d = b.find_dimension("colour");
        fields += 4;
        matched += d && std::abs(d->macro_avg - macro / by.size()) <= 1e-14 ? 1 : 0;
        matched += d && d->count == 10 ? 1 : 0;
        matched += std::abs(b.micro_avg - total / 10.0) <= 1e-14 ? 1 : 0;
        matched += b.per_subgroup.size() == 3 && b.per_pair_margins.size() == 10 ? 1 : 0;
        ok = ok && matched == fields;
        detail += "; brute force " + std::to_string(matched) + "/" + std::to_string(fields) + " fields";
        return Outcome{ok, detail};
    });

    criterion("7", "baseline equivalences", 0.0, [] {
        GeneratorSpec g;
        g.n_pairs = 200;
        g.rng_seed = 7;
        const auto pairs = generate(g);
        ModelConfig mc;
        mc.vocab = g.vocab;
        mc.hidden = 8;
        mc.seed = 7;
        const SequenceModel reference(mc, true);
        TrainConfig tc;
        tc.epochs = 1;
        tc.batch_size = 16;
        tc.policy_lr = 1e-2;
        tc.beta_lr = 0.0;
        bool frozen = true;
        for (auto kind : {DistributionKind::kPointMass, DistributionKind::kLogNormal, DistributionKind::kGamma}) {
            const StrengthDistribution init = baseline_distribution(kind);
            const TrainResult r = train(pairs, reference.trainable_copy(), reference, init, tc);
            frozen = frozen && r.dist.raw_params() == init.raw_params();
        }

        // Point mass against a LogNormal whose spread has collapsed.
        ModelConfig pc = mc;
        pc.seed = 8;
        const SequenceModel policy(pc, true);
        const DistributionParameters dpo(StrengthDistribution::point_mass(0.1));
        const DistributionParameters narrow(StrengthDistribution::lognormal_raw(std::log(0.1), -40.0));
        const LossConfig cfg;
        const double gap = std::abs(batch_loss(pairs, policy, reference, dpo, cfg).item() -
                                    batch_loss(pairs, policy, reference, narrow, cfg).item());

        double log2_gap = 0.0;
        Pcg32 rng(1, kNoiseStream);
        for (auto kind : {DistributionKind::kPointMass, DistributionKind::kLogNormal, DistributionKind::kGamma}) {
            const StrengthDistribution dist = baseline_distribution(kind);
            const DistributionParameters p(dist);
            const double l = pair_loss(ad::Node::constant(0.0), p, cfg, draw_noise(dist, cfg, rng)).item();
            log2_gap = std::max(log2_gap, std::abs(l - std::numbers::ln2));
        }
        return Outcome{frozen && gap <= 1e-6 && log2_gap <= 1e-15,
                       std::string("beta_lr=0 ") + (frozen ? "bit-identical" : "CHANGED") +
                           fmt("; |dpo - narrow lognormal| %.2e/1e-06; max |loss(0) - log 2| %.2e", gap, log2_gap)};
    });

    criterion("8", "pipeline determinism", 0.0, [&] {
        const fs::path cfg = tmp / "run.json";
        std::ofstream(cfg) << R"({
          "generator": {"n_pairs": 300, "seed": 11, "chunk_size": 64},
          "model": {"hidden": 8, "seed": 11},
          "distribution": {"variant": "gamma", "k": 2.0, "lambda": 16.7},
          "train": {"epochs": 2, "batch_size": 16, "policy_lr": 0.01, "beta_lr": 0.0001, "seed": 11}
        })";
        for (const char* run : {"a", "b"}) {
            const fs::path d = tmp / run;
            fs::create_directories(d);
            const std::string c = cfg.string();
            if (cli({"generate", "--config", c, "--out", (d / "pairs.jsonl").string()}) != kExitOk ||
                cli({"train", "--config", c, "--data", (d / "pairs.jsonl").string(), "--out", (d / "train").string()}) !=
                    kExitOk ||
                cli({"eval", "--config", c, "--ckpt", (d / "train" / "policy.ckpt").string(), "--data",
                     (d / "pairs.jsonl").string(), "--out", (d / "eval").string()}) != kExitOk) {
                return Outcome{false, "pipeline run failed"};
            }
        }
        std::size_t files = 0, same = 0;
        for (const auto& e : fs::recursive_directory_iterator(tmp / "a")) {
            if (!e.is_regular_file()) {
                continue;
            }
            const fs::path rel = fs::relative(e.path(), tmp / "a");
            ++files;
            same += fs::exists(tmp / "b" / rel) && comparable(e.path()) == comparable(tmp / "b" / rel) ? 1 : 0;
        }
        // pairs.jsonl, five training artifacts, report.json and report.csv
        return Outcome{files == 8 && same == files,
                       std::to_string(same) + "/" + std::to_string(files) + " artifacts byte-identical"};
    });

    criterion("9", "overhead report (2000 pairs)", 0.0, [] {
        RuntimeWorkload w;
        w.n_pairs = 2000;
        w.repetitions = 5;
        const auto entries = runtime_compare(w, {"dpo", "lognormal", "gamma"});
        std::string detail;
        bool ok = entries.size() == 3;
        for (const auto& e : entries) {
            ok = ok && std::isfinite(e.ratio_mean) && e.ratio_mean > 0;
            detail += e.variant + fmt(" %.3fx", e.ratio_mean);
            if (e.reference_point) {
                detail += fmt(" (ref %.2fx)", *e.reference_point);
            }
            detail += "  ";
        }
        return Outcome{ok, detail + "report only"};
    });

    std::printf("%d criteria failed\n", g_failures);
    return g_failures == 0 ? 0 : 1;
}
