#pragma once

// Preference margins and subgroup-disaggregated reports.
//
// Reports are built from per-pair margins sorted by (pair id, margin) and
// reduced in that order, so every field is independent of input order.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mixdpo/distribution.hpp"
#include "mixdpo/kernels.hpp"
#include "mixdpo/model.hpp"
#include "mixdpo/pair.hpp"

namespace mixdpo {

/// log pi(chosen | prompt) - log pi(rejected | prompt) in nats; with
/// length_normalize each log-probability is divided by its response length.
double preference_margin(const SequenceModel& policy, const PreferencePair& pair, bool length_normalize = false);

struct PairMargin {
    std::uint64_t id = 0;
    double margin = 0.0;
};

struct SubgroupStat {
    std::string dimension;
    std::string category;
    std::size_t count = 0;
    double mean_margin = 0.0;
    std::optional<double> margin_gain;
};

struct DimensionSummary {
    std::string dimension;
    // Pairs carrying this dimension.
    std::size_t count = 0;
    // Unweighted mean of the category means.
    double macro_avg = 0.0;
    std::optional<double> macro_gain;
};

struct MarginReport {
    std::vector<PairMargin> per_pair_margins;   // sorted by id
    std::vector<SubgroupStat> per_subgroup;     // sorted by (dimension, category)
    std::vector<DimensionSummary> dimensions;   // sorted by dimension
    double micro_avg = 0.0;
    std::optional<double> micro_gain;
    std::vector<std::string> warnings;

    const SubgroupStat* find(const std::string& dimension, const std::string& category) const;
    const DimensionSummary* find_dimension(const std::string& dimension) const;
};

struct EvalOptions {
    bool length_normalize = false;
    // Use implicit-reward margins (requires a reference model).
    bool implicit_reward = false;
    // Dimensions the caller expects; any absent from every pair produces a
    // warning and no macro entry.
    std::vector<std::string> expected_dimensions;
    kernels::Execution exec = kernels::Execution::kParallel;
};

/// Aggregation only: margins[i] belongs to pairs[i].
MarginReport report_from_margins(std::span<const PreferencePair> pairs, std::span<const double> margins,
                                 const MarginReport* baseline = nullptr,
                                 const std::vector<std::string>& expected_dimensions = {});

MarginReport build_report(const SequenceModel& policy, std::span<const PreferencePair> pairs,
                          const MarginReport* baseline = nullptr, const EvalOptions& options = {},
                          const SequenceModel* reference = nullptr);

/// Fills every margin_gain field with this - baseline for matching entries.
void apply_baseline(MarginReport& report, const MarginReport& baseline);

std::string report_to_json(const MarginReport& report);
MarginReport report_from_json(const std::string& text);
void write_report_json(const std::filesystem::path& path, const MarginReport& report);
MarginReport read_report_json(const std::filesystem::path& path);

inline constexpr const char* kReportCsvHeader = "dimension,category,count,mean_margin,margin_gain";
/// Subgroup rows, then one `<dimension>,__macro__` row per dimension and a
/// final `__all__,__micro__` row.
std::string report_to_csv(const MarginReport& report);
void write_report_csv(const std::filesystem::path& path, const MarginReport& report);

// Runtime overhead of the MixDPO variants relative to DPO.
struct RuntimeWorkload {
    std::size_t n_pairs = 2000;
    std::size_t batch_size = 64;
    std::size_t repetitions = 5;
    std::uint64_t seed = 0;
    ModelConfig model;
};

struct RuntimeEntry {
    std::string variant;
    double mean_seconds = 0.0;
    double sd_seconds = 0.0;
    // Per-repetition time / dpo time of the same repetition.
    double ratio_mean = 0.0;
    double ratio_sd = 0.0;
    std::optional<double> reference_point;
};

/// Times one training epoch per variant per repetition, interleaving the
/// variants inside each repetition. Variants: dpo, lognormal, gamma.
std::vector<RuntimeEntry> runtime_compare(const RuntimeWorkload& workload, const std::vector<std::string>& variants);
std::string format_runtime_table(const std::vector<RuntimeEntry>& entries);

/// DPO beta = 0.1, LogNormal(-2.3, 0.6) and Gamma(2.0, 16.7).
StrengthDistribution baseline_distribution(DistributionKind kind);

}  // namespace mixdpo
