#include "mixdpo/config.hpp"

#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "json.hpp"

namespace mixdpo {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

namespace {

std::string escape_pointer_token(const std::string& key) {
    std::string out;
    for (char c : key) {
        if (c == '~') {
            out += "~0";
        } else if (c == '/') {
            out += "~1";
        } else {
            out += c;
        }
    }
    return out;
}

// Typed access to one JSON object that remembers which keys were read, so
// leftovers can be reported as unknown.
class Section {
public:
    Section(const json& j, std::string pointer) : j_(j), pointer_(std::move(pointer)) {
        if (!j_.is_object()) {
            throw ConfigError(pointer_.empty() ? "/" : pointer_, "expected an object");
        }
    }

    const std::string& pointer() const { return pointer_; }
    std::string child(const std::string& key) const { return pointer_ + "/" + escape_pointer_token(key); }

    bool has(const std::string& key) {
        seen_.insert(key);
        return j_.contains(key) && !j_.at(key).is_null();
    }

    const json& raw(const std::string& key) {
        seen_.insert(key);
        return j_.at(key);
    }

    double number(const std::string& key, double fallback) {
        if (!has(key)) {
            return fallback;
        }
        const json& v = j_.at(key);
        if (!v.is_number()) {
            throw ConfigError(child(key), "expected a number");
        }
        return v.get<double>();
    }

    std::uint64_t unsigned_integer(const std::string& key, std::uint64_t fallback) {
        if (!has(key)) {
            return fallback;
        }
        const json& v = j_.at(key);
        if (v.is_number_unsigned()) {
            return v.get<std::uint64_t>();
        }
        if (v.is_number_integer() && v.get<long long>() >= 0) {
            return static_cast<std::uint64_t>(v.get<long long>());
        }
        throw ConfigError(child(key), "expected a non-negative integer");
    }

    std::size_t size(const std::string& key, std::size_t fallback) {
        return static_cast<std::size_t>(unsigned_integer(key, fallback));
    }

    bool boolean(const std::string& key, bool fallback) {
        if (!has(key)) {
            return fallback;
        }
        const json& v = j_.at(key);
        if (!v.is_boolean()) {
            throw ConfigError(child(key), "expected true or false");
        }
        return v.get<bool>();
    }

    std::string string(const std::string& key, const std::string& fallback) {
        if (!has(key)) {
            return fallback;
        }
        const json& v = j_.at(key);
        if (!v.is_string()) {
            throw ConfigError(child(key), "expected a string");
        }
        return v.get<std::string>();
    }

    std::vector<std::string> strings(const std::string& key) {
        std::vector<std::string> out;
        if (!has(key)) {
            return out;
        }
        const json& v = j_.at(key);
        if (!v.is_array()) {
            throw ConfigError(child(key), "expected an array of strings");
        }
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (!v[i].is_string()) {
                throw ConfigError(child(key) + "/" + std::to_string(i), "expected a string");
            }
            out.push_back(v[i].get<std::string>());
        }
        return out;
    }

    std::vector<double> numbers(const std::string& key) {
        std::vector<double> out;
        if (!has(key)) {
            return out;
        }
        const json& v = j_.at(key);
        if (!v.is_array()) {
            throw ConfigError(child(key), "expected an array of numbers");
        }
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (!v[i].is_number()) {
                throw ConfigError(child(key) + "/" + std::to_string(i), "expected a number");
            }
            out.push_back(v[i].get<double>());
        }
        return out;
    }

    void reject_unknown() const {
        for (const auto& [key, value] : j_.items()) {
            (void)value;
            if (seen_.find(key) == seen_.end()) {
                throw ConfigError(child(key), "unknown key");
            }
        }
    }

private:
    const json& j_;
    std::string pointer_;
    std::set<std::string> seen_;
};

StrengthDistribution parse_distribution(Section& s, bool allow_summary) {
    const std::string variant = s.string("variant", "dpo");
    DistributionKind kind;
    try {
        kind = distribution_kind_from_string(variant);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(s.child("variant"), e.what());
    }
    if (allow_summary) {
        (void)s.number("mean", 0.0);
        (void)s.number("variance", 0.0);
    }
    const bool trainable = s.boolean("trainable", true);
    const std::vector<double> raw = s.numbers("raw");
    try {
        StrengthDistribution d;
        switch (kind) {
            case DistributionKind::kPointMass:
                d = StrengthDistribution::point_mass(s.number("beta", 0.1));
                break;
            case DistributionKind::kLogNormal:
                d = StrengthDistribution::lognormal(s.number("mu", -2.3), s.number("sigma", 0.6), trainable);
                break;
            case DistributionKind::kGamma:
                d = StrengthDistribution::gamma(s.number("k", 2.0), s.number("lambda", 16.7), trainable);
                break;
        }
        if (!raw.empty()) {
            d.set_raw_params(raw);
        }
        s.reject_unknown();
        return d;
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError(s.pointer(), e.what());
    }
}

VocabConfig parse_vocab(Section& s) {
    VocabConfig v;
    v.vocab_size = s.size("vocab_size", v.vocab_size);
    v.max_prompt_len = s.size("max_prompt_len", v.max_prompt_len);
    v.max_response_len = s.size("max_response_len", v.max_response_len);
    s.reject_unknown();
    try {
        v.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(s.pointer(), e.what());
    }
    if (v.vocab_size > std::numeric_limits<std::uint32_t>::max()) {
        throw ConfigError(s.pointer(), "vocab_size too large");
    }
    return v;
}

void parse_generator(Section& s, RunConfig& rc) {
    GeneratorSpec& g = rc.generator;
    g.n_pairs = s.size("n_pairs", g.n_pairs);
    if (s.has("vocab")) {
        Section v(s.raw("vocab"), s.child("vocab"));
        g.vocab = parse_vocab(v);
    }
    if (s.has("subgroup_dims")) {
        const json& arr = s.raw("subgroup_dims");
        if (!arr.is_array()) {
            throw ConfigError(s.child("subgroup_dims"), "expected an array");
        }
        g.subgroup_dims.clear();
        for (std::size_t i = 0; i < arr.size(); ++i) {
            Section d(arr[i], s.child("subgroup_dims") + "/" + std::to_string(i));
            SubgroupDimension dim;
            dim.name = d.string("name", "");
            dim.categories = d.strings("categories");
            dim.weights = d.numbers("weights");
            if (dim.weights.empty()) {
                dim.weights.assign(dim.categories.size(), 1.0);
            }
            d.reject_unknown();
            g.subgroup_dims.push_back(std::move(dim));
        }
    }
    g.beta_dimension = s.string("beta_dimension", g.beta_dimension);
    if (s.has("beta_dist_per_category")) {
        Section m(s.raw("beta_dist_per_category"), s.child("beta_dist_per_category"));
        for (const auto& [cat, value] : s.raw("beta_dist_per_category").items()) {
            (void)m.has(cat);
            Section d(value, m.child(cat));
            g.beta_dist_per_category[cat] = parse_distribution(d, false);
        }
    }
    if (s.has("default_beta")) {
        Section d(s.raw("default_beta"), s.child("default_beta"));
        g.default_beta = parse_distribution(d, false);
    }
    g.teacher_delta_scale = s.number("teacher_delta_scale", g.teacher_delta_scale);
    g.rng_seed = s.unsigned_integer("seed", g.rng_seed);
    g.teacher_seed = s.unsigned_integer("teacher_seed", g.teacher_seed);
    if (s.has("fixed_delta")) {
        g.fixed_delta = s.number("fixed_delta", 0.0);
    }
    g.negate_teacher = s.boolean("negate_teacher", g.negate_teacher);
    rc.generator_chunk_size = s.size("chunk_size", 0);
    s.reject_unknown();
    try {
        g.validate();
    } catch (const SpecError& e) {
        throw ConfigError(s.pointer() + e.pointer(), e.what());
    }
}

void parse_model(Section& s, ModelConfig& m) {
    m.hidden = s.size("hidden", m.hidden);
    m.window = s.size("window", m.window);
    m.init_std = s.number("init_std", m.init_std);
    m.seed = s.unsigned_integer("seed", m.seed);
    m.zero_output = s.boolean("zero_output", m.zero_output);
    s.reject_unknown();
    try {
        m.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(s.pointer(), e.what());
    }
}

void parse_train(Section& s, TrainConfig& t) {
    t.policy_lr = s.number("policy_lr", t.policy_lr);
    t.beta_lr = s.number("beta_lr", t.beta_lr);
    t.batch_size = s.size("batch_size", t.batch_size);
    t.epochs = s.size("epochs", t.epochs);
    t.grad_clip_max_norm = s.number("grad_clip_max_norm", t.grad_clip_max_norm);
    try {
        t.optimizer = optimizer_kind_from_string(s.string("optimizer", to_string(t.optimizer)));
    } catch (const std::invalid_argument& e) {
        throw ConfigError(s.child("optimizer"), e.what());
    }
    t.rms_decay = s.number("rms_decay", t.rms_decay);
    t.rms_epsilon = s.number("rms_epsilon", t.rms_epsilon);
    t.eval_every = s.size("eval_every", t.eval_every);
    t.rng_seed = s.unsigned_integer("seed", t.rng_seed);
    t.loss.mc_samples = s.size("mc_samples", t.loss.mc_samples);
    t.loss.shared_noise = s.boolean("shared_noise", t.loss.shared_noise);
    t.loss.series.truncation_terms =
        static_cast<int>(s.size("truncation_terms", static_cast<std::size_t>(t.loss.series.truncation_terms)));
    t.loss.series.tail_correction = !s.boolean("paper_exact", !t.loss.series.tail_correction);
    s.reject_unknown();
    try {
        t.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(s.pointer(), e.what());
    }
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
    const std::filesystem::path path(p);
    return path.is_absolute() ? path : (base / path).lexically_normal();
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text, const std::filesystem::path& base_dir) {
    json root;
    try {
        root = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ConfigError("/", std::string("invalid JSON: ") + e.what());
    }
    RunConfig rc;
    Section top(root, "");
    if (top.has("generator")) {
        Section s(top.raw("generator"), "/generator");
        parse_generator(s, rc);
    }
    rc.model.vocab = rc.generator.vocab;
    if (top.has("model")) {
        Section s(top.raw("model"), "/model");
        parse_model(s, rc.model);
    }
    if (top.has("distribution")) {
        Section s(top.raw("distribution"), "/distribution");
        rc.distribution = parse_distribution(s, false);
    }
    if (top.has("train")) {
        Section s(top.raw("train"), "/train");
        parse_train(s, rc.train);
    }
    if (top.has("eval")) {
        Section s(top.raw("eval"), "/eval");
        rc.eval.length_normalize = s.boolean("length_normalize", false);
        rc.eval.implicit_reward = s.boolean("implicit_reward", false);
        rc.eval.dimensions = s.strings("dimensions");
        s.reject_unknown();
    }
    if (top.has("paths")) {
        Section s(top.raw("paths"), "/paths");
        for (const auto& [key, slot] : {std::pair{"data", &rc.paths.data}, std::pair{"out", &rc.paths.out},
                                        std::pair{"checkpoint", &rc.paths.checkpoint},
                                        std::pair{"baseline", &rc.paths.baseline}}) {
            if (s.has(key)) {
                *slot = resolve(base_dir, s.string(key, ""));
            }
        }
        s.reject_unknown();
    }
    top.reject_unknown();
    return rc;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ConfigError("/", "cannot open config '" + path.string() + "'");
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_run_config(ss.str(), std::filesystem::absolute(path).parent_path());
}

std::string distribution_to_json(const StrengthDistribution& dist) {
    ordered_json j;
    j["variant"] = to_string(dist.kind());
    switch (dist.kind()) {
        case DistributionKind::kPointMass:
            j["beta"] = dist.beta();
            break;
        case DistributionKind::kLogNormal:
            j["mu"] = dist.mu();
            j["sigma"] = dist.sigma();
            break;
        case DistributionKind::kGamma:
            j["k"] = dist.shape();
            j["lambda"] = dist.rate();
            break;
    }
    j["raw"] = dist.raw_params();
    j["trainable"] = dist.trainable();
    j["mean"] = dist.mean();
    j["variance"] = dist.variance();
    return j.dump(2) + "\n";
}

StrengthDistribution distribution_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError("/", std::string("invalid JSON: ") + e.what());
    }
    Section s(j, "");
    return parse_distribution(s, true);
}

void write_distribution_json(const std::filesystem::path& path, const StrengthDistribution& dist) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot open '" + path.string() + "' for writing");
    }
    out << distribution_to_json(dist);
}

StrengthDistribution read_distribution_json(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open '" + path.string() + "'");
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return distribution_from_json(ss.str());
}

}  // namespace mixdpo
