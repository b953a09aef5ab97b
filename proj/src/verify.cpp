#include "mixdpo/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "mixdpo/kernels.hpp"
#include "mixdpo/model.hpp"
#include "mixdpo/objective.hpp"
#include "mixdpo/quadrature.hpp"
#include "mixdpo/rng.hpp"

namespace mixdpo::verify {

using specfn::SeriesConfig;

Level level_from_string(const std::string& name) {
    if (name == "quick") {
        return Level::kQuick;
    }
    if (name == "full") {
        return Level::kFull;
    }
    throw std::invalid_argument("unknown verify level '" + name + "' (expected quick or full)");
}

namespace {

std::vector<double> linspace(double lo, double hi, int n) {
    std::vector<double> v(n);
    for (int i = 0; i < n; ++i) {
        v[i] = n == 1 ? lo : lo + (hi - lo) * i / (n - 1);
    }
    return v;
}

class Tracker {
public:
    Tracker(std::string name, double tolerance) : start_(std::chrono::steady_clock::now()) {
        r_.name = std::move(name);
        r_.tolerance = tolerance;
    }
    void observe(double error, const std::string& where) {
        // A NaN is sticky: it is the worst possible outcome.
        if (!seen_ || (!std::isnan(r_.max_error) && (std::isnan(error) || error > r_.max_error))) {
            r_.max_error = error;
            r_.detail = where;
        }
        seen_ = true;
    }
    CheckResult finish() {
        r_.passed = seen_ && !std::isnan(r_.max_error) && r_.max_error <= r_.tolerance;
        r_.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
        return r_;
    }

private:
    CheckResult r_;
    bool seen_ = false;
    std::chrono::steady_clock::time_point start_;
};

std::string at(std::initializer_list<std::pair<const char*, double>> args) {
    std::string s = "at";
    char buf[64];
    for (const auto& [k, v] : args) {
        std::snprintf(buf, sizeof buf, " %s=%.6g", k, v);
        s += buf;
    }
    return s;
}

// Independent reference for Phi(-1, s, a): 10^4 direct terms in long double,
// then repeated averaging of the trailing partial sums (Euler transform).
double alternating_euler(double s, double a) {
    constexpr int kTerms = 10000;
    constexpr int kAveraged = 40;
    long double partial = 0.0L;
    std::vector<long double> tail;
    for (int n = 0; n < kTerms; ++n) {
        const long double term = (n % 2 == 0 ? 1.0L : -1.0L) * std::pow(static_cast<long double>(a) + n, -s);
        partial += term;
        if (n >= kTerms - kAveraged) {
            tail.push_back(partial);
        }
    }
    while (tail.size() > 1) {
        for (std::size_t i = 0; i + 1 < tail.size(); ++i) {
            tail[i] = 0.5L * (tail[i] + tail[i + 1]);
        }
        tail.pop_back();
    }
    return static_cast<double>(tail.front());
}

double uniform_in(Pcg32& rng, double lo, double hi) { return lo + (hi - lo) * rng.uniform(); }

template <class F>
double central_difference(F&& f, double x, double h = 1e-5) {
    return (f(x + h) - f(x - h)) / (2.0 * h);
}

}  // namespace

double gradient_error(double analytic, double numeric, double rel, double abs_floor) {
    return std::abs(analytic - numeric) / std::max(std::abs(numeric), abs_floor / rel);
}

CheckResult hurwitz_shift_identity() {
    Tracker t("specfn.hurwitz_shift", 1e-9);
    for (double s : {1.1, 1.5, 2.0, 3.0, 5.0, 8.0}) {
        for (double a : {0.1, 0.5, 1.0, 2.7, 10.0, 50.0}) {
            const double lhs = specfn::hurwitz_zeta(s, a);
            const double rhs = std::pow(a, -s) + specfn::hurwitz_zeta(s, a + 1.0);
            t.observe(std::abs(lhs - rhs), at({{"s", s}, {"a", a}}));
        }
    }
    return t.finish();
}

CheckResult alternating_shift_identity() {
    Tracker t("specfn.alternating_shift", 1e-8);
    for (double s : {0.3, 0.7, 1.0, 1.05, 1.2, 2.0, 3.5, 5.0}) {
        for (double a : {0.2, 0.5, 1.0, 3.3, 17.0, 50.0}) {
            const double lhs = specfn::lerch_phi_neg1(s, a) + specfn::lerch_phi_neg1(s, a + 1.0);
            t.observe(std::abs(lhs - std::pow(a, -s)), at({{"s", s}, {"a", a}}));
        }
    }
    return t.finish();
}

CheckResult zeta_difference_reduction() {
    Tracker t("specfn.zeta_difference_vs_direct", 1e-6);
    for (double s : linspace(0.5, 5.0, 4)) {
        for (double a : linspace(0.5, 50.0, 5)) {
            const double via_zeta = specfn::lerch_phi_neg1_zeta_difference(s, a).value;
            t.observe(std::abs(via_zeta - alternating_euler(s, a)), at({{"s", s}, {"a", a}}));
        }
    }
    return t.finish();
}

CheckResult hurwitz_monotonic_in_a() {
    Tracker t("specfn.hurwitz_monotonic", 0.0);
    for (double s : {0.5, 1.5, 2.0, 4.0}) {
        double prev = specfn::hurwitz_zeta(s, 0.05);
        for (double a : linspace(0.1, 60.0, 200)) {
            const double cur = specfn::hurwitz_zeta(s, a);
            t.observe(cur < prev ? 0.0 : 1.0, at({{"s", s}, {"a", a}}));
            prev = cur;
        }
    }
    return t.finish();
}

CheckResult closed_form_vs_quadrature(const SeriesConfig& series, double tolerance) {
    Tracker t(series.tail_correction ? "closed_form.vs_quadrature" : "closed_form.vs_quadrature_paper_exact",
              tolerance);
    for (double k : linspace(0.7, 5.0, 5)) {
        for (double lambda : linspace(1.0, 50.0, 5)) {
            for (double d : linspace(-10.0, 10.0, 9)) {
                const double closed = gamma_inner_expectation(d, k, lambda, series).value;
                const double quad = quadrature::gamma_expectation(d, k, lambda).value;
                t.observe(std::abs(closed - quad), at({{"k", k}, {"lambda", lambda}, {"delta_r", d}}));
            }
        }
    }
    return t.finish();
}

CheckResult closed_form_symmetry() {
    Tracker t("closed_form.symmetry", 1e-9);
    for (double k : linspace(0.7, 5.0, 5)) {
        for (double lambda : linspace(1.0, 50.0, 5)) {
            for (double d : {1e-9, 1e-4, 0.3, 2.0, 7.3, 10.0, 40.0}) {
                const double sum = gamma_inner_expectation(d, k, lambda).value +
                                   gamma_inner_expectation(-d, k, lambda).value;
                t.observe(std::abs(sum - 1.0), at({{"k", k}, {"lambda", lambda}, {"delta_r", d}}));
            }
        }
    }
    return t.finish();
}

CheckResult closed_form_monotonic_in_delta() {
    Tracker t("closed_form.monotonic_in_delta", 0.0);
    for (double k : {0.7, 1.0, 2.0, 5.0}) {
        for (double lambda : {1.0, 16.7, 50.0}) {
            double prev = gamma_inner_expectation(-10.05, k, lambda).value;
            for (double d : linspace(-10.0, 10.0, 401)) {
                const double cur = gamma_inner_expectation(d, k, lambda).value;
                t.observe(cur > prev ? 0.0 : 1.0, at({{"k", k}, {"lambda", lambda}, {"delta_r", d}}));
                prev = cur;
            }
        }
    }
    return t.finish();
}

CheckResult lognormal_monte_carlo(std::uint64_t seed) {
    Tracker t("monte_carlo.lognormal_vs_quadrature", 3.0);
    const double mu = -2.3;
    const double sigma = 0.6;
    const double delta = 5.0;
    const auto dist = StrengthDistribution::lognormal(mu, sigma);
    LossConfig cfg;
    cfg.mc_samples = 4096;
    Pcg32 rng(seed, 0x6c6e6d63ULL);
    constexpr int kSets = 50;
    std::vector<double> estimates;
    for (int j = 0; j < kSets; ++j) {
        const auto noise = draw_noise(dist, cfg, rng);
        estimates.push_back(choice_probability(delta, dist, cfg, noise));
    }
    double mean = 0.0;
    for (double e : estimates) {
        mean += e;
    }
    mean /= kSets;
    double var = 0.0;
    for (double e : estimates) {
        var += (e - mean) * (e - mean);
    }
    const double se = std::sqrt(var / (kSets - 1) / kSets);
    const double quad = quadrature::lognormal_expectation(delta, mu, sigma).value;
    t.observe(std::abs(mean - quad) / se, at({{"mu", mu}, {"sigma", sigma}, {"delta_r", delta}}));
    return t.finish();
}

CheckResult gamma_monte_carlo(std::uint64_t seed, int triples) {
    Tracker t("monte_carlo.gamma_vs_closed_form", 4.0);
    Pcg32 rng(seed, 0x67616d6dULL);
    for (int i = 0; i < triples; ++i) {
        const double k = uniform_in(rng, 0.7, 5.0);
        const double lambda = uniform_in(rng, 1.0, 50.0);
        const double d = uniform_in(rng, -10.0, 10.0);
        const auto mc = kernels::gamma_monte_carlo(d, k, lambda, 100000, seed + 1 + static_cast<std::uint64_t>(i),
                                                   kernels::Execution::kParallel);
        const double closed = gamma_inner_expectation(d, k, lambda).value;
        t.observe(std::abs(mc.mean - closed) / mc.standard_error, at({{"k", k}, {"lambda", lambda}, {"delta_r", d}}));
    }
    return t.finish();
}

CheckResult loss_gradients(std::uint64_t seed, int seeds) {
    Tracker t("gradients.losses", 1e-4);
    for (int s = 0; s < seeds; ++s) {
        Pcg32 rng(seed + static_cast<std::uint64_t>(s), 0x6772616473ULL);
        const double d = uniform_in(rng, -2.0, 2.0);
        const double p1 = uniform_in(rng, -2.0, 2.0);
        const double p2 = uniform_in(rng, -2.0, 2.0);
        const double beta = std::exp(uniform_in(rng, -2.0, 2.0));
        std::vector<double> noise(16);
        for (double& e : noise) {
            e = rng.normal();
        }

        // f(x, y, z) evaluated with a graph, returning (value, three grads).
        using Loss = std::function<ad::Node(const ad::Node&, const ad::Node&, const ad::Node&)>;
        const std::vector<std::pair<const char*, Loss>> losses = {
            {"dpo", [&](const ad::Node& x, const ad::Node&, const ad::Node&) { return dpo_loss(x, beta); }},
            {"lognormal",
             [&](const ad::Node& x, const ad::Node& a, const ad::Node& b) {
                 return lognormal_mixdpo_loss(x, a, b, noise);
             }},
            {"gamma", [&](const ad::Node& x, const ad::Node& a, const ad::Node& b) {
                 return gamma_mixdpo_loss(x, a, b);
             }}};
        for (const auto& [name, f] : losses) {
            const ad::Node x = ad::Node::variable(d);
            const ad::Node a = ad::Node::variable(p1);
            const ad::Node b = ad::Node::variable(p2);
            ad::backward(f(x, a, b));
            const double base[3] = {d, p1, p2};
            const double analytic[3] = {x.grad().item(), a.grad().item(), b.grad().item()};
            const int n_inputs = std::string(name) == "dpo" ? 1 : 3;
            for (int i = 0; i < n_inputs; ++i) {
                const auto eval = [&](double v) {
                    double in[3] = {base[0], base[1], base[2]};
                    in[i] = v;
                    ad::NoGradGuard guard;
                    return f(ad::Node::constant(in[0]), ad::Node::constant(in[1]), ad::Node::constant(in[2])).item();
                };
                t.observe(gradient_error(analytic[i], central_difference(eval, base[i])),
                          std::string(name) + " input " + std::to_string(i) + " " +
                              at({{"delta_r", d}, {"p1", p1}, {"p2", p2}}));
            }
        }
    }
    return t.finish();
}

CheckResult policy_gradients(std::uint64_t seed, int seeds) {
    Tracker t("gradients.policy", 1e-4);
    for (int s = 0; s < seeds; ++s) {
        ModelConfig mc;
        mc.vocab = {2, 3, 3};
        mc.hidden = 3;
        mc.window = 2;
        mc.init_std = 0.8;
        mc.seed = seed * 1000 + static_cast<std::uint64_t>(s) + 1;
        const SequenceModel reference(mc, true);
        mc.seed += 500000;
        SequenceModel policy(mc);
        const std::vector<PreferencePair> pairs = {
            {{0, 1}, {1, 0, 1}, {0, 0}, {}, "", {}, {}},
            {{1}, {0}, {1, 1, 0}, {}, "", {}, {}},
        };
        std::vector<ReferenceLogprobs> ref;
        for (const auto& p : pairs) {
            ref.push_back({sequence_logprob_value(reference, p.prompt, p.chosen),
                           sequence_logprob_value(reference, p.prompt, p.rejected)});
        }
        for (DistributionKind kind : {DistributionKind::kPointMass, DistributionKind::kLogNormal, DistributionKind::kGamma}) {
            StrengthDistribution dist = kind == DistributionKind::kPointMass ? StrengthDistribution::point_mass(0.7)
                                        : kind == DistributionKind::kLogNormal
                                            ? StrengthDistribution::lognormal(-0.3, 0.6)
                                            : StrengthDistribution::gamma(2.0, 1.7);
            const DistributionParameters params(dist);
            LossConfig cfg;
            const auto loss_at = [&](bool grad) {
                Pcg32 rng(seed + static_cast<std::uint64_t>(s), kNoiseStream);
                if (!grad) {
                    ad::NoGradGuard guard;
                    return batch_loss(pairs, policy, ref, params, cfg, rng);
                }
                return batch_loss(pairs, policy, ref, params, cfg, rng);
            };
            policy.zero_grad();
            ad::backward(loss_at(true));
            auto& ps = policy.parameters();
            for (std::size_t p = 0; p < ps.size(); ++p) {
                const std::vector<double> analytic = ps[p].grad().data;
                auto& values = ps[p].mutable_value().data;
                for (std::size_t i = 0; i < values.size(); ++i) {
                    const double orig = values[i];
                    const auto eval = [&](double v) {
                        values[i] = v;
                        const double out = loss_at(false).item();
                        values[i] = orig;
                        return out;
                    };
                    t.observe(gradient_error(analytic[i], central_difference(eval, orig)),
                              to_string(kind) + " " + SequenceModel::parameter_names()[p] + "[" + std::to_string(i) +
                                  "] seed " + std::to_string(s));
                }
            }
        }
    }
    return t.finish();
}

std::vector<CheckResult> run(const Options& options, const std::function<void(const CheckResult&)>& on_result) {
    const bool full = options.level == Level::kFull;
    std::vector<std::function<CheckResult()>> checks = {
        hurwitz_shift_identity,
        alternating_shift_identity,
        zeta_difference_reduction,
        hurwitz_monotonic_in_a,
        [&] {
            return options.paper_exact ? closed_form_vs_quadrature(SeriesConfig::bare(), 5e-5)
                                       : closed_form_vs_quadrature(SeriesConfig{}, 1e-4);
        },
        closed_form_symmetry,
        closed_form_monotonic_in_delta,
        [&] { return lognormal_monte_carlo(options.seed); },
        [&] { return gamma_monte_carlo(options.seed, full ? 50 : 10); },
        [&] { return loss_gradients(options.seed, full ? 100 : 20); },
        [&] { return policy_gradients(options.seed, full ? 100 : 10); },
    };
    std::vector<CheckResult> out;
    for (const auto& c : checks) {
        out.push_back(c());
        if (on_result) {
            on_result(out.back());
        }
    }
    return out;
}

std::string format(const CheckResult& r) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-4s %-40s max_error=%.3e tol=%.1e (%.2fs)", r.passed ? "PASS" : "FAIL",
                  r.name.c_str(), r.max_error, r.tolerance, r.seconds);
    std::string s = buf;
    if (!r.detail.empty()) {
        s += " worst " + r.detail;
    }
    return s;
}

}  // namespace mixdpo::verify
