#include "mixdpo/kernels.hpp"

#include <omp.h>

#include <cmath>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>

#include "mixdpo/objective.hpp"
#include "mixdpo/rng.hpp"

namespace mixdpo::kernels {

int thread_count() {
    if (const char* env = std::getenv("MIXLOGIT_THREADS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end != env && *end == '\0' && v > 0) {
            return static_cast<int>(v);
        }
    }
    return omp_get_max_threads();
}

namespace {

// Runs body(i) for i in [0, n). Exceptions thrown on worker threads are
// captured and the first one is rethrown on the caller.
template <class Body>
void for_each_index(std::size_t n, Execution exec, Body&& body) {
    if (exec == Execution::kSerial) {
        for (std::size_t i = 0; i < n; ++i) {
            body(i);
        }
        return;
    }
    std::exception_ptr failure;
    std::mutex failure_mutex;
    const auto count = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel num_threads(thread_count())
    {
        // Graph recording is thread-local; each worker disables it itself.
        ad::NoGradGuard guard;
#pragma omp for schedule(static)
        for (std::ptrdiff_t i = 0; i < count; ++i) {
            try {
                body(static_cast<std::size_t>(i));
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) {
                    failure = std::current_exception();
                }
            }
        }
    }
    if (failure) {
        std::rethrow_exception(failure);
    }
}

}  // namespace

std::vector<ReferenceLogprobs> reference_logprobs(const SequenceModel& model, std::span<const PreferencePair> pairs,
                                                  Execution exec) {
    std::vector<ReferenceLogprobs> out(pairs.size());
    for_each_index(pairs.size(), exec, [&](std::size_t i) {
        const auto& p = pairs[i];
        out[i] = {sequence_logprob_value(model, p.prompt, p.chosen),
                  sequence_logprob_value(model, p.prompt, p.rejected)};
    });
    return out;
}

std::vector<double> policy_margins(const SequenceModel& policy, std::span<const PreferencePair> pairs,
                                   bool length_normalize, Execution exec) {
    std::vector<double> out(pairs.size());
    for_each_index(pairs.size(), exec, [&](std::size_t i) {
        const auto& p = pairs[i];
        double w = sequence_logprob_value(policy, p.prompt, p.chosen);
        double l = sequence_logprob_value(policy, p.prompt, p.rejected);
        if (length_normalize) {
            w /= static_cast<double>(p.chosen.size());
            l /= static_cast<double>(p.rejected.size());
        }
        out[i] = w - l;
    });
    return out;
}

std::vector<double> implicit_reward_margins(const SequenceModel& policy, const SequenceModel& reference,
                                            std::span<const PreferencePair> pairs, Execution exec) {
    std::vector<double> out(pairs.size());
    for_each_index(pairs.size(), exec, [&](std::size_t i) {
        const auto& p = pairs[i];
        out[i] = (sequence_logprob_value(policy, p.prompt, p.chosen) -
                  sequence_logprob_value(reference, p.prompt, p.chosen)) -
                 (sequence_logprob_value(policy, p.prompt, p.rejected) -
                  sequence_logprob_value(reference, p.prompt, p.rejected));
    });
    return out;
}

std::vector<double> gamma_expectations(std::span<const double> deltas, double k, double lambda,
                                       const specfn::SeriesConfig& series, Execution exec) {
    std::vector<double> out(deltas.size());
    for_each_index(deltas.size(), exec,
                   [&](std::size_t i) { out[i] = gamma_inner_expectation(deltas[i], k, lambda, series).value; });
    return out;
}

MonteCarloEstimate gamma_monte_carlo(double delta_r, double k, double lambda, std::size_t n, std::uint64_t seed,
                                     Execution exec) {
    if (n < 2) {
        throw std::invalid_argument("gamma_monte_carlo: need at least two draws");
    }
    const std::size_t chunks = (n + kMonteCarloChunk - 1) / kMonteCarloChunk;
    std::vector<double> sums(chunks);
    std::vector<double> squares(chunks);
    for_each_index(chunks, exec, [&](std::size_t c) {
        Pcg32 rng(seed, c + 1);
        const std::size_t end = std::min(n, (c + 1) * kMonteCarloChunk);
        double s = 0.0;
        double s2 = 0.0;
        for (std::size_t i = c * kMonteCarloChunk; i < end; ++i) {
            const double p = specfn::sigmoid(gamma_sample(k, lambda, rng) * delta_r);
            s += p;
            s2 += p * p;
        }
        sums[c] = s;
        squares[c] = s2;
    });
    double s = 0.0;
    double s2 = 0.0;
    for (std::size_t c = 0; c < chunks; ++c) {
        s += sums[c];
        s2 += squares[c];
    }
    const double nn = static_cast<double>(n);
    MonteCarloEstimate est;
    est.samples = n;
    est.mean = s / nn;
    const double var = std::max(0.0, (s2 - nn * est.mean * est.mean) / (nn - 1.0));
    est.standard_error = std::sqrt(var / nn);
    return est;
}

std::vector<PreferencePair> generate_partitioned(const GeneratorSpec& spec, std::size_t chunk_size, Execution exec) {
    if (exec == Execution::kSerial) {
        return generate_partitioned_serial(spec, chunk_size);
    }
    spec.validate();
    if (chunk_size < 1) {
        throw std::invalid_argument("generate_partitioned: chunk_size must be >= 1");
    }
    const auto weights = teacher_token_weights(spec);
    const std::size_t chunks = (spec.n_pairs + chunk_size - 1) / chunk_size;
    std::vector<std::vector<PreferencePair>> parts(chunks);
    for_each_index(chunks, exec, [&](std::size_t c) {
        parts[c] = generate_chunk(spec, weights, c, c * chunk_size, std::min(spec.n_pairs, (c + 1) * chunk_size));
    });
    std::vector<PreferencePair> out;
    out.reserve(spec.n_pairs);
    for (auto& part : parts) {
        std::move(part.begin(), part.end(), std::back_inserter(out));
    }
    return out;
}

}  // namespace mixdpo::kernels
