#pragma once

// Data-parallel kernels. Each has a serial reference and an OpenMP version
// with identical results: work is split into fixed index ranges whose
// outputs are written to preassigned slots and, where a reduction is
// needed, combined in index order. Results therefore do not depend on the
// thread count.

#include <cstdint>
#include <span>
#include <vector>

#include "mixdpo/datagen.hpp"
#include "mixdpo/model.hpp"
#include "mixdpo/pair.hpp"
#include "mixdpo/specfn.hpp"

namespace mixdpo::kernels {

enum class Execution { kSerial, kParallel };

/// Thread count for parallel kernels: MIXLOGIT_THREADS when set to a
/// positive integer, otherwise the OpenMP default.
int thread_count();

std::vector<ReferenceLogprobs> reference_logprobs(const SequenceModel& model, std::span<const PreferencePair> pairs,
                                                  Execution exec);

/// log pi(chosen | prompt) - log pi(rejected | prompt), optionally divided
/// per response by its length.
std::vector<double> policy_margins(const SequenceModel& policy, std::span<const PreferencePair> pairs,
                                   bool length_normalize, Execution exec);

/// Implicit-reward margins against a reference model.
std::vector<double> implicit_reward_margins(const SequenceModel& policy, const SequenceModel& reference,
                                            std::span<const PreferencePair> pairs, Execution exec);

std::vector<double> gamma_expectations(std::span<const double> deltas, double k, double lambda,
                                       const specfn::SeriesConfig& series, Execution exec);

struct MonteCarloEstimate {
    double mean = 0.0;
    double standard_error = 0.0;
    std::size_t samples = 0;
};

// Draws per chunk in chunked Monte Carlo; chunk c uses Pcg32(seed, c + 1).
inline constexpr std::size_t kMonteCarloChunk = 4096;

/// Mean of sigmoid(beta delta_r) over n raw Gamma(k, lambda) draws.
MonteCarloEstimate gamma_monte_carlo(double delta_r, double k, double lambda, std::size_t n, std::uint64_t seed,
                                     Execution exec);

/// Partitioned generation; chunk layout as in generate_chunk.
std::vector<PreferencePair> generate_partitioned(const GeneratorSpec& spec, std::size_t chunk_size, Execution exec);

}  // namespace mixdpo::kernels
