#include <algorithm>
#include <cstdio>
#include <cmath>
#include <map>
#include <numeric>

#include "doctest.h"
#include "mixdpo/datagen.hpp"
#include "mixdpo/eval.hpp"
#include "test_util.hpp"

using namespace mixdpo;

namespace {

PreferencePair tagged(std::size_t i, std::map<std::string, std::string> groups) {
    return {{i % 5}, {(i + 1) % 7, 2}, {(i + 3) % 7}, std::move(groups), "a" + std::to_string(i), {}, {}};
}

ModelConfig eval_model() {
    ModelConfig c;
    c.vocab = {8, 3, 4};
    c.hidden = 4;
    c.init_std = 0.6;
    c.seed = 13;
    return c;
}

void check_same(const MarginReport& a, const MarginReport& b) {
    REQUIRE(a.per_pair_margins.size() == b.per_pair_margins.size());
    for (std::size_t i = 0; i < a.per_pair_margins.size(); ++i) {
        CHECK(a.per_pair_margins[i].id == b.per_pair_margins[i].id);
        CHECK(a.per_pair_margins[i].margin == b.per_pair_margins[i].margin);
    }
    REQUIRE(a.per_subgroup.size() == b.per_subgroup.size());
    for (std::size_t i = 0; i < a.per_subgroup.size(); ++i) {
        CHECK(a.per_subgroup[i].dimension == b.per_subgroup[i].dimension);
        CHECK(a.per_subgroup[i].category == b.per_subgroup[i].category);
        CHECK(a.per_subgroup[i].count == b.per_subgroup[i].count);
        CHECK(a.per_subgroup[i].mean_margin == b.per_subgroup[i].mean_margin);
        CHECK(a.per_subgroup[i].margin_gain == b.per_subgroup[i].margin_gain);
    }
    REQUIRE(a.dimensions.size() == b.dimensions.size());
    for (std::size_t i = 0; i < a.dimensions.size(); ++i) {
        CHECK(a.dimensions[i].dimension == b.dimensions[i].dimension);
        CHECK(a.dimensions[i].count == b.dimensions[i].count);
        CHECK(a.dimensions[i].macro_avg == b.dimensions[i].macro_avg);
        CHECK(a.dimensions[i].macro_gain == b.dimensions[i].macro_gain);
    }
    CHECK(a.micro_avg == b.micro_avg);
    CHECK(a.micro_gain == b.micro_gain);
    CHECK(a.warnings == b.warnings);
}

}  // namespace

TEST_SUITE("eval") {
    TEST_CASE("nine versus one masks the minority") {
        std::vector<PreferencePair> pairs;
        std::vector<double> margins;
        for (std::size_t i = 0; i < 10; ++i) {
            pairs.push_back(tagged(i, {{"group", i < 9 ? "A" : "B"}}));
            margins.push_back(i < 9 ? 1.0 : -1.0);
        }
        const auto r = report_from_margins(pairs, margins);
        CHECK(r.micro_avg == 0.8);
        REQUIRE(r.find_dimension("group") != nullptr);
        CHECK(r.find_dimension("group")->macro_avg == 0.0);
        CHECK(r.find("group", "A")->count == 9);
        CHECK(r.find("group", "B")->mean_margin == -1.0);
        CHECK(r.warnings.empty());
    }

    TEST_CASE("single subgroup gives micro equal to macro") {
        std::vector<PreferencePair> pairs;
        std::vector<double> margins;
        for (std::size_t i = 0; i < 6; ++i) {
            pairs.push_back(tagged(i, {{"g", "only"}}));
            margins.push_back(0.25 * static_cast<double>(i) - 0.4);
        }
        const auto r = report_from_margins(pairs, margins);
        CHECK(r.micro_avg == doctest::Approx(r.find_dimension("g")->macro_avg).epsilon(1e-15));
    }

    TEST_CASE("ten-pair fixture matches a brute-force recomputation") {
        const SequenceModel policy(eval_model(), true);
        const char* cats[] = {"red", "green", "blue"};
        std::vector<PreferencePair> pairs;
        for (std::size_t i = 0; i < 10; ++i) {
            std::map<std::string, std::string> g = {{"colour", cats[(i * 7) % 3]}};
            if (i % 4 != 0) {
                g["size"] = i % 2 == 0 ? "big" : "small";
            }
            pairs.push_back(tagged(i, g));
        }
        const auto r = build_report(policy, pairs);

        std::vector<double> m;
        for (const auto& p : pairs) {
            m.push_back(sequence_logprob_value(policy, p.prompt, p.chosen) -
                        sequence_logprob_value(policy, p.prompt, p.rejected));
        }
        CHECK(r.micro_avg == doctest::Approx(std::accumulate(m.begin(), m.end(), 0.0) / 10.0).epsilon(1e-14));
        for (const std::string dim : {"colour", "size"}) {
            std::map<std::string, std::vector<double>> by;
            for (std::size_t i = 0; i < 10; ++i) {
                if (auto it = pairs[i].subgroups.find(dim); it != pairs[i].subgroups.end()) {
                    by[it->second].push_back(m[i]);
                }
            }
            double macro = 0.0;
            std::size_t covered = 0;
            for (const auto& [cat, v] : by) {
                const auto* s = r.find(dim, cat);
                REQUIRE(s != nullptr);
                CHECK(s->count == v.size());
                const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
                CHECK(s->mean_margin == doctest::Approx(mean).epsilon(1e-14));
                CHECK_FALSE(s->margin_gain.has_value());
                macro += mean;
                covered += v.size();
            }
            const auto* d = r.find_dimension(dim);
            REQUIRE(d != nullptr);
            CHECK(d->count == covered);
            CHECK(d->macro_avg == doctest::Approx(macro / static_cast<double>(by.size())).epsilon(1e-14));
        }
        CHECK(r.per_subgroup.size() == 5);
        CHECK(r.per_pair_margins.size() == 10);
        CHECK(std::is_sorted(r.per_pair_margins.begin(), r.per_pair_margins.end(),
                             [](const PairMargin& a, const PairMargin& b) { return a.id < b.id; }));
        // The size dimension is missing from three pairs.
        REQUIRE(r.warnings.size() == 1);
        CHECK(r.warnings[0].find("'size'") != std::string::npos);
    }

    TEST_CASE("micro equals the count-weighted subgroup mean") {
        GeneratorSpec spec;
        spec.n_pairs = 400;
        spec.vocab = eval_model().vocab;
        const auto pairs = generate(spec);
        const auto r = build_report(SequenceModel(eval_model(), true), pairs);
        for (const auto& d : r.dimensions) {
            double acc = 0.0;
            for (const auto& s : r.per_subgroup) {
                if (s.dimension == d.dimension) {
                    acc += s.mean_margin * static_cast<double>(s.count);
                }
            }
            CHECK(std::abs(acc / 400.0 - r.micro_avg) <= 1e-12);
        }
    }

    TEST_CASE("permutation invariance and self baseline") {
        GeneratorSpec spec;
        spec.n_pairs = 250;
        spec.vocab = eval_model().vocab;
        auto pairs = generate(spec);
        const SequenceModel policy(eval_model(), true);
        const auto a = build_report(policy, pairs);
        std::reverse(pairs.begin(), pairs.end());
        std::rotate(pairs.begin(), pairs.begin() + 77, pairs.end());
        const auto b = build_report(policy, pairs);
        check_same(a, b);

        const auto self = build_report(policy, pairs, &a);
        CHECK(*self.micro_gain == 0.0);
        for (const auto& s : self.per_subgroup) {
            CHECK(*s.margin_gain == 0.0);
        }
        for (const auto& d : self.dimensions) {
            CHECK(*d.macro_gain == 0.0);
        }
    }

    TEST_CASE("margin variants") {
        const SequenceModel policy(eval_model(), true);
        PreferencePair same{{1}, {2, 3}, {2, 3}, {}, "s", {}, {}};
        CHECK(preference_margin(policy, same) == 0.0);
        const PreferencePair p{{1, 4}, {2, 3, 5}, {6}, {{"g", "x"}}, "p", {}, {}};
        const double w = sequence_logprob_value(policy, p.prompt, p.chosen);
        const double l = sequence_logprob_value(policy, p.prompt, p.rejected);
        CHECK(preference_margin(policy, p) == w - l);
        CHECK(preference_margin(policy, p, true) == doctest::Approx(w / 3.0 - l).epsilon(1e-15));

        EvalOptions opts;
        opts.implicit_reward = true;
        CHECK_THROWS_AS(build_report(policy, std::span(&p, 1), nullptr, opts), std::invalid_argument);
        const auto r = build_report(policy, std::span(&p, 1), nullptr, opts, &policy);
        CHECK(r.micro_avg == 0.0);
    }

    TEST_CASE("expected dimensions absent from the data warn") {
        const std::vector<PreferencePair> pairs = {tagged(0, {{"age", "x"}}), tagged(1, {{"age", "y"}})};
        const auto r = report_from_margins(pairs, std::vector<double>{1.0, 2.0}, nullptr, {"age", "gender"});
        CHECK(r.find_dimension("gender") == nullptr);
        REQUIRE(r.warnings.size() == 1);
        CHECK(r.warnings[0].find("'gender'") != std::string::npos);
    }

    TEST_CASE("exports") {
        const std::vector<PreferencePair> pairs = {tagged(0, {{"g", "a,b"}}), tagged(1, {{"g", "c"}}),
                                                   tagged(2, {{"h", "z"}})};
        const std::vector<double> margins = {0.5, -0.25, 1.0 / 3.0};
        const auto base = report_from_margins(pairs, std::vector<double>{0.0, 0.0, 0.0});
        const auto r = report_from_margins(pairs, margins, &base);
        check_same(report_from_json(report_to_json(r)), r);

        const std::string csv = report_to_csv(r);
        CHECK(csv.rfind(std::string(kReportCsvHeader) + "\n", 0) == 0);
        CHECK(csv.find("g,\"a,b\",1,0.5,0.5\n") != std::string::npos);
        CHECK(csv.find("g,__macro__,2,0.125,0.125\n") != std::string::npos);
        char micro[64];
        std::snprintf(micro, sizeof micro, "%.17g,%.17g\n", r.micro_avg, *r.micro_gain);
        const std::string last = "__all__,__micro__,3," + std::string(micro);
        CHECK(csv.substr(csv.size() - last.size()) == last);
        const auto no_gain = report_to_csv(report_from_margins(pairs, margins));
        CHECK(no_gain.find("g,c,1,-0.25,\n") != std::string::npos);

        const auto dir = testutil::scratch("eval_exports");
        write_report_json(dir / "r.json", r);
        check_same(read_report_json(dir / "r.json"), r);
        CHECK_THROWS_AS(read_report_json(dir / "missing.json"), std::runtime_error);
    }

    TEST_CASE("baseline distributions") {
        CHECK(baseline_distribution(DistributionKind::kPointMass).beta() == 0.1);
        const auto ln = baseline_distribution(DistributionKind::kLogNormal);
        CHECK(ln.mu() == -2.3);
        CHECK(ln.sigma() == doctest::Approx(0.6).epsilon(1e-14));
        const auto g = baseline_distribution(DistributionKind::kGamma);
        CHECK(g.shape() == doctest::Approx(2.0).epsilon(1e-14));
        CHECK(g.rate() == doctest::Approx(16.7).epsilon(1e-14));
    }

    TEST_CASE("runtime comparison reports ratios") {
        RuntimeWorkload w;
        w.n_pairs = 64;
        w.batch_size = 32;
        w.repetitions = 2;
        w.model.hidden = 4;
        const auto entries = runtime_compare(w, {"lognormal", "gamma"});
        REQUIRE(entries.size() == 3);
        CHECK(entries[0].variant == "dpo");
        CHECK(entries[0].ratio_mean == 1.0);
        CHECK_FALSE(entries[0].reference_point.has_value());
        CHECK(*entries[1].reference_point == 1.02);
        CHECK(*entries[2].reference_point == 1.1);
        for (const auto& e : entries) {
            CHECK(e.mean_seconds > 0.0);
            CHECK(e.ratio_mean > 0.0);
        }
        const auto table = format_runtime_table(entries);
        CHECK(table.find("1.02x") != std::string::npos);
        CHECK(table.find("gamma") != std::string::npos);
        w.repetitions = 0;
        CHECK_THROWS_AS(runtime_compare(w, {"dpo"}), std::invalid_argument);
    }
}
