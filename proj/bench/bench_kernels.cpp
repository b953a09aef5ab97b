// Serial versus OpenMP timing of every data-parallel kernel. Each kernel's
// parallel output is compared against its serial reference before timing.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <string>
#include <vector>

#include "mixdpo/datagen.hpp"
#include "mixdpo/kernels.hpp"
#include "mixdpo/model.hpp"

using namespace mixdpo;
using kernels::Execution;

namespace {

double seconds_of(const std::function<void()>& fn, int reps) {
    double best = 1e300;
    for (int r = 0; r < reps; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        fn();
        const auto t1 = std::chrono::steady_clock::now();
        best = std::min(best, std::chrono::duration<double>(t1 - t0).count());
    }
    return best;
}

template <typename Fn>
void row(const char* name, Fn&& fn, int reps) {
    const auto serial = fn(Execution::kSerial);
    const auto parallel = fn(Execution::kParallel);
    const bool same = serial == parallel;
    const double ts = seconds_of([&] { (void)fn(Execution::kSerial); }, reps);
    const double tp = seconds_of([&] { (void)fn(Execution::kParallel); }, reps);
    std::printf("%-24s %12.5f %12.5f %9.2fx  %s\n", name, ts, tp, ts / tp, same ? "identical" : "MISMATCH");
}

}  // namespace

int main(int argc, char** argv) {
    const std::size_t n = argc > 1 ? std::strtoul(argv[1], nullptr, 10) : 4000;
    const int reps = argc > 2 ? std::atoi(argv[2]) : 3;

    GeneratorSpec spec;
    spec.n_pairs = n;
    spec.default_beta = StrengthDistribution::gamma(2.0, 10.0);
    const auto pairs = generate(spec);
    ModelConfig mc;
    mc.vocab = spec.vocab;
    const SequenceModel reference(mc, true);
    ModelConfig mc2 = mc;
    mc2.seed = 2;
    const SequenceModel policy(mc2, true);

    std::vector<double> deltas(n);
    for (std::size_t i = 0; i < n; ++i) {
        deltas[i] = -10.0 + 20.0 * static_cast<double>(i) / static_cast<double>(n);
    }

    std::printf("threads: %d, pairs: %zu, best of %d\n", kernels::thread_count(), n, reps);
    std::printf("%-24s %12s %12s %10s\n", "kernel", "serial_s", "parallel_s", "speedup");
    row("reference_logprobs", [&](Execution e) {
        std::vector<double> flat;
        for (const auto& r : kernels::reference_logprobs(reference, pairs, e)) {
            flat.push_back(r.chosen);
            flat.push_back(r.rejected);
        }
        return flat;
    }, reps);
    row("policy_margins", [&](Execution e) { return kernels::policy_margins(policy, pairs, false, e); }, reps);
    row("implicit_reward_margins",
        [&](Execution e) { return kernels::implicit_reward_margins(policy, reference, pairs, e); }, reps);
    row("gamma_expectations", [&](Execution e) { return kernels::gamma_expectations(deltas, 2.0, 16.7, {}, e); },
        reps);
    row("gamma_monte_carlo", [&](Execution e) {
        const auto m = kernels::gamma_monte_carlo(2.0, 2.0, 10.0, 50 * n, 3, e);
        return std::vector<double>{m.mean, m.standard_error};
    }, reps);
    row("generate_partitioned", [&](Execution e) { return kernels::generate_partitioned(spec, 256, e); }, reps);
    return 0;
}
