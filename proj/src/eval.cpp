#include "mixdpo/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"
#include "mixdpo/datagen.hpp"
#include "mixdpo/train.hpp"

namespace mixdpo {

using ordered_json = nlohmann::ordered_json;

double preference_margin(const SequenceModel& policy, const PreferencePair& pair, bool length_normalize) {
    double w = sequence_logprob_value(policy, pair.prompt, pair.chosen);
    double l = sequence_logprob_value(policy, pair.prompt, pair.rejected);
    if (length_normalize) {
        w /= static_cast<double>(pair.chosen.size());
        l /= static_cast<double>(pair.rejected.size());
    }
    return w - l;
}

const SubgroupStat* MarginReport::find(const std::string& dimension, const std::string& category) const {
    for (const auto& s : per_subgroup) {
        if (s.dimension == dimension && s.category == category) {
            return &s;
        }
    }
    return nullptr;
}

const DimensionSummary* MarginReport::find_dimension(const std::string& dimension) const {
    for (const auto& d : dimensions) {
        if (d.dimension == dimension) {
            return &d;
        }
    }
    return nullptr;
}

MarginReport report_from_margins(std::span<const PreferencePair> pairs, std::span<const double> margins,
                                 const MarginReport* baseline, const std::vector<std::string>& expected_dimensions) {
    if (pairs.empty()) {
        throw std::invalid_argument("build_report: no pairs");
    }
    if (margins.size() != pairs.size()) {
        throw std::invalid_argument("build_report: one margin per pair required");
    }
    std::vector<std::uint64_t> ids(pairs.size());
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        ids[i] = pair_id(pairs[i]);
    }
    std::vector<std::size_t> order(pairs.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return ids[a] != ids[b] ? ids[a] < ids[b] : margins[a] < margins[b];
    });

    MarginReport report;
    std::map<std::pair<std::string, std::string>, std::pair<std::size_t, double>> groups;
    double total = 0.0;
    for (std::size_t i : order) {
        report.per_pair_margins.push_back({ids[i], margins[i]});
        total += margins[i];
        for (const auto& [dim, cat] : pairs[i].subgroups) {
            auto& g = groups[{dim, cat}];
            g.first += 1;
            g.second += margins[i];
        }
    }
    report.micro_avg = total / static_cast<double>(pairs.size());

    std::map<std::string, std::vector<const SubgroupStat*>> by_dim;
    report.per_subgroup.reserve(groups.size());
    for (const auto& [key, g] : groups) {
        report.per_subgroup.push_back({key.first, key.second, g.first, g.second / static_cast<double>(g.first), {}});
    }
    for (const auto& s : report.per_subgroup) {
        by_dim[s.dimension].push_back(&s);
    }
    for (const auto& [dim, stats] : by_dim) {
        DimensionSummary d;
        d.dimension = dim;
        double acc = 0.0;
        for (const auto* s : stats) {
            d.count += s->count;
            acc += s->mean_margin;
        }
        d.macro_avg = acc / static_cast<double>(stats.size());
        if (d.count < pairs.size()) {
            report.warnings.push_back("dimension '" + dim + "' missing from " + std::to_string(pairs.size() - d.count) +
                                      " pairs; they are excluded from its macro average");
        }
        report.dimensions.push_back(d);
    }
    for (const auto& dim : expected_dimensions) {
        if (by_dim.find(dim) == by_dim.end()) {
            report.warnings.push_back("dimension '" + dim + "' absent from the data; omitted from the macro table");
        }
    }
    if (baseline != nullptr) {
        apply_baseline(report, *baseline);
    }
    return report;
}

void apply_baseline(MarginReport& report, const MarginReport& baseline) {
    report.micro_gain = report.micro_avg - baseline.micro_avg;
    for (auto& s : report.per_subgroup) {
        if (const auto* b = baseline.find(s.dimension, s.category)) {
            s.margin_gain = s.mean_margin - b->mean_margin;
        }
    }
    for (auto& d : report.dimensions) {
        if (const auto* b = baseline.find_dimension(d.dimension)) {
            d.macro_gain = d.macro_avg - b->macro_avg;
        }
    }
}

MarginReport build_report(const SequenceModel& policy, std::span<const PreferencePair> pairs,
                          const MarginReport* baseline, const EvalOptions& options, const SequenceModel* reference) {
    if (pairs.empty()) {
        throw std::invalid_argument("build_report: no pairs");
    }
    std::vector<double> margins;
    if (options.implicit_reward) {
        if (reference == nullptr) {
            throw std::invalid_argument("build_report: implicit-reward margins need a reference model");
        }
        margins = kernels::implicit_reward_margins(policy, *reference, pairs, options.exec);
    } else {
        margins = kernels::policy_margins(policy, pairs, options.length_normalize, options.exec);
    }
    return report_from_margins(pairs, margins, baseline, options.expected_dimensions);
}

namespace {

ordered_json optional_json(const std::optional<double>& v) { return v ? ordered_json(*v) : ordered_json(nullptr); }

std::optional<double> optional_from(const nlohmann::json& j, const char* key) {
    if (!j.contains(key) || j.at(key).is_null()) {
        return std::nullopt;
    }
    return j.at(key).get<double>();
}

std::string hex_id(std::uint64_t id) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(id));
    return buf;
}

std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) {
        return s;
    }
    std::string out = "\"";
    for (char c : s) {
        out += c == '"' ? std::string("\"\"") : std::string(1, c);
    }
    return out + "\"";
}

}  // namespace

std::string report_to_json(const MarginReport& report) {
    ordered_json j;
    j["micro_avg"] = report.micro_avg;
    j["micro_gain"] = optional_json(report.micro_gain);
    j["dimensions"] = ordered_json::array();
    for (const auto& d : report.dimensions) {
        j["dimensions"].push_back({{"dimension", d.dimension},
                                   {"count", d.count},
                                   {"macro_avg", d.macro_avg},
                                   {"macro_gain", optional_json(d.macro_gain)}});
    }
    j["per_subgroup"] = ordered_json::array();
    for (const auto& s : report.per_subgroup) {
        j["per_subgroup"].push_back({{"dimension", s.dimension},
                                     {"category", s.category},
                                     {"count", s.count},
                                     {"mean_margin", s.mean_margin},
                                     {"margin_gain", optional_json(s.margin_gain)}});
    }
    j["per_pair_margins"] = ordered_json::array();
    for (const auto& p : report.per_pair_margins) {
        j["per_pair_margins"].push_back({{"id", hex_id(p.id)}, {"margin", p.margin}});
    }
    j["warnings"] = report.warnings;
    return j.dump(2) + "\n";
}

MarginReport report_from_json(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    MarginReport r;
    r.micro_avg = j.at("micro_avg").get<double>();
    r.micro_gain = optional_from(j, "micro_gain");
    for (const auto& d : j.at("dimensions")) {
        r.dimensions.push_back({d.at("dimension").get<std::string>(), d.at("count").get<std::size_t>(),
                                d.at("macro_avg").get<double>(), optional_from(d, "macro_gain")});
    }
    for (const auto& s : j.at("per_subgroup")) {
        r.per_subgroup.push_back({s.at("dimension").get<std::string>(), s.at("category").get<std::string>(),
                                  s.at("count").get<std::size_t>(), s.at("mean_margin").get<double>(),
                                  optional_from(s, "margin_gain")});
    }
    for (const auto& p : j.at("per_pair_margins")) {
        r.per_pair_margins.push_back(
            {std::stoull(p.at("id").get<std::string>(), nullptr, 16), p.at("margin").get<double>()});
    }
    if (j.contains("warnings")) {
        r.warnings = j.at("warnings").get<std::vector<std::string>>();
    }
    return r;
}

void write_report_json(const std::filesystem::path& path, const MarginReport& report) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot open '" + path.string() + "' for writing");
    }
    out << report_to_json(report);
}

MarginReport read_report_json(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open report '" + path.string() + "'");
    }
    std::stringstream ss;
    ss << in.rdbuf();
    try {
        return report_from_json(ss.str());
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("report '" + path.string() + "' is malformed: " + e.what());
    }
}

std::string report_to_csv(const MarginReport& report) {
    std::string out = std::string(kReportCsvHeader) + "\n";
    const auto gain = [](const std::optional<double>& g) { return g ? num(*g) : std::string(); };
    for (const auto& s : report.per_subgroup) {
        out += csv_field(s.dimension) + "," + csv_field(s.category) + "," + std::to_string(s.count) + "," +
               num(s.mean_margin) + "," + gain(s.margin_gain) + "\n";
    }
    for (const auto& d : report.dimensions) {
        out += csv_field(d.dimension) + ",__macro__," + std::to_string(d.count) + "," + num(d.macro_avg) + "," +
               gain(d.macro_gain) + "\n";
    }
    out += "__all__,__micro__," + std::to_string(report.per_pair_margins.size()) + "," + num(report.micro_avg) + "," +
           gain(report.micro_gain) + "\n";
    return out;
}

void write_report_csv(const std::filesystem::path& path, const MarginReport& report) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot open '" + path.string() + "' for writing");
    }
    out << report_to_csv(report);
}

StrengthDistribution baseline_distribution(DistributionKind kind) {
    switch (kind) {
        case DistributionKind::kPointMass:
            return StrengthDistribution::point_mass(0.1);
        case DistributionKind::kLogNormal:
            return StrengthDistribution::lognormal(-2.3, 0.6);
        case DistributionKind::kGamma:
            return StrengthDistribution::gamma(2.0, 16.7);
    }
    throw std::logic_error("baseline_distribution: unknown kind");
}

namespace {

struct MeanSd {
    double mean = 0.0;
    double sd = 0.0;
};

MeanSd mean_sd(const std::vector<double>& v) {
    MeanSd out;
    out.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    if (v.size() > 1) {
        double sq = 0.0;
        for (double x : v) {
            sq += (x - out.mean) * (x - out.mean);
        }
        out.sd = std::sqrt(sq / static_cast<double>(v.size() - 1));
    }
    return out;
}

}  // namespace

std::vector<RuntimeEntry> runtime_compare(const RuntimeWorkload& workload, const std::vector<std::string>& variants) {
    if (workload.repetitions < 1) {
        throw std::invalid_argument("runtime_compare: repetitions must be >= 1");
    }
    std::vector<std::string> names = variants;
    if (std::find(names.begin(), names.end(), "dpo") == names.end()) {
        names.insert(names.begin(), "dpo");
    }
    GeneratorSpec spec;
    spec.n_pairs = workload.n_pairs;
    spec.vocab = workload.model.vocab;
    spec.rng_seed = workload.seed;
    const auto pairs = generate(spec);
    const SequenceModel reference(workload.model, true);
    const SequenceModel policy = reference.trainable_copy();

    TrainConfig cfg;
    cfg.batch_size = workload.batch_size;
    cfg.eval_every = static_cast<std::size_t>(-1);
    cfg.rng_seed = workload.seed;

    std::map<std::string, std::vector<double>> seconds;
    for (std::size_t rep = 0; rep < workload.repetitions; ++rep) {
        for (const auto& name : names) {
            const auto dist = baseline_distribution(distribution_kind_from_string(name));
            const auto t0 = std::chrono::steady_clock::now();
            (void)train(pairs, policy, reference, dist, cfg);
            const auto t1 = std::chrono::steady_clock::now();
            seconds[name].push_back(std::chrono::duration<double>(t1 - t0).count());
        }
    }

    std::vector<RuntimeEntry> out;
    const auto& base = seconds.at("dpo");
    for (const auto& name : names) {
        const auto& s = seconds.at(name);
        std::vector<double> ratios(s.size());
        for (std::size_t i = 0; i < s.size(); ++i) {
            ratios[i] = s[i] / base[i];
        }
        const MeanSd t = mean_sd(s);
        const MeanSd r = mean_sd(ratios);
        RuntimeEntry e{name, t.mean, t.sd, r.mean, r.sd, std::nullopt};
        if (name == "lognormal") {
            e.reference_point = 1.02;
        } else if (name == "gamma") {
            e.reference_point = 1.1;
        }
        out.push_back(e);
    }
    return out;
}

std::string format_runtime_table(const std::vector<RuntimeEntry>& entries) {
    std::string out = "variant      seconds(mean+-sd)      ratio_to_dpo(mean+-sd)  reference_point\n";
    char buf[160];
    for (const auto& e : entries) {
        std::snprintf(buf, sizeof buf, "%-12s %8.4f +- %-8.4f     %6.3f +- %-6.3f         %s\n", e.variant.c_str(),
                      e.mean_seconds, e.sd_seconds, e.ratio_mean, e.ratio_sd,
                      e.reference_point ? (num(*e.reference_point) + "x").c_str() : "-");
        out += buf;
    }
    return out;
}

}  // namespace mixdpo
