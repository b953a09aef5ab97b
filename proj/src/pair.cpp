#include "mixdpo/pair.hpp"

#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace mixdpo {

using ordered_json = nlohmann::ordered_json;

void validate_pair(const PreferencePair& pair, std::size_t vocab_size) {
    if (pair.chosen.empty() || pair.rejected.empty()) {
        throw std::invalid_argument("preference pair: responses must be non-empty");
    }
    if (pair.chosen == pair.rejected) {
        throw std::invalid_argument("preference pair: chosen and rejected are identical");
    }
    for (const TokenSeq* seq : {&pair.prompt, &pair.chosen, &pair.rejected}) {
        for (std::size_t t : *seq) {
            if (t >= vocab_size) {
                throw std::out_of_range("preference pair: token " + std::to_string(t) +
                                        " outside vocabulary of size " + std::to_string(vocab_size));
            }
        }
    }
}

namespace {

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

void fnv_bytes(std::uint64_t& h, const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= kFnvPrime;
    }
}

void fnv_u64(std::uint64_t& h, std::uint64_t v) {
    unsigned char bytes[8];
    for (int i = 0; i < 8; ++i) {
        bytes[i] = static_cast<unsigned char>(v >> (8 * i));
    }
    fnv_bytes(h, bytes, 8);
}

void fnv_seq(std::uint64_t& h, const TokenSeq& seq) {
    fnv_u64(h, seq.size());
    for (std::size_t t : seq) {
        fnv_u64(h, t);
    }
}

TokenSeq tokens_from_json(const ordered_json& j, const char* field) {
    if (!j.contains(field) || !j.at(field).is_array()) {
        throw std::invalid_argument(std::string("pair JSON: field '") + field + "' must be an integer array");
    }
    TokenSeq out;
    for (const auto& v : j.at(field)) {
        if (!v.is_number_integer() || v.get<long long>() < 0) {
            throw std::invalid_argument(std::string("pair JSON: field '") + field +
                                        "' must contain non-negative integers");
        }
        out.push_back(v.get<std::size_t>());
    }
    return out;
}

std::optional<double> optional_number(const ordered_json& j, const char* field) {
    if (!j.contains(field) || j.at(field).is_null()) {
        return std::nullopt;
    }
    if (!j.at(field).is_number()) {
        throw std::invalid_argument(std::string("pair JSON: field '") + field + "' must be a number or null");
    }
    return j.at(field).get<double>();
}

}  // namespace

std::uint64_t pair_id(const PreferencePair& pair) {
    std::uint64_t h = kFnvOffset;
    fnv_seq(h, pair.prompt);
    fnv_seq(h, pair.chosen);
    fnv_seq(h, pair.rejected);
    fnv_u64(h, pair.annotator_id.size());
    fnv_bytes(h, pair.annotator_id.data(), pair.annotator_id.size());
    return h;
}

std::string pair_id_hex(const PreferencePair& pair) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(pair_id(pair)));
    return buf;
}

std::string to_json_line(const PreferencePair& pair) {
    ordered_json j;
    j["prompt"] = pair.prompt;
    j["chosen"] = pair.chosen;
    j["rejected"] = pair.rejected;
    j["subgroups"] = ordered_json::object();
    for (const auto& [k, v] : pair.subgroups) {
        j["subgroups"][k] = v;
    }
    j["annotator_id"] = pair.annotator_id;
    j["true_beta"] = pair.true_beta ? ordered_json(*pair.true_beta) : ordered_json(nullptr);
    j["true_delta"] = pair.true_delta ? ordered_json(*pair.true_delta) : ordered_json(nullptr);
    return j.dump();
}

PreferencePair from_json_line(const std::string& line) {
    const ordered_json j = ordered_json::parse(line);
    if (!j.is_object()) {
        throw std::invalid_argument("pair JSON: line is not an object");
    }
    PreferencePair p;
    p.prompt = tokens_from_json(j, "prompt");
    p.chosen = tokens_from_json(j, "chosen");
    p.rejected = tokens_from_json(j, "rejected");
    if (j.contains("subgroups")) {
        if (!j.at("subgroups").is_object()) {
            throw std::invalid_argument("pair JSON: 'subgroups' must be an object");
        }
        for (const auto& [k, v] : j.at("subgroups").items()) {
            if (!v.is_string()) {
                throw std::invalid_argument("pair JSON: subgroup '" + k + "' must map to a string");
            }
            p.subgroups[k] = v.get<std::string>();
        }
    }
    if (j.contains("annotator_id") && !j.at("annotator_id").is_null()) {
        p.annotator_id = j.at("annotator_id").get<std::string>();
    }
    p.true_beta = optional_number(j, "true_beta");
    p.true_delta = optional_number(j, "true_delta");
    return p;
}

void write_jsonl(std::ostream& out, const std::vector<PreferencePair>& pairs) {
    for (const auto& p : pairs) {
        out << to_json_line(p) << '\n';
    }
}

void write_jsonl(const std::filesystem::path& path, const std::vector<PreferencePair>& pairs) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot open '" + path.string() + "' for writing");
    }
    write_jsonl(out, pairs);
    if (!out) {
        throw std::runtime_error("write failed for '" + path.string() + "'");
    }
}

std::vector<PreferencePair> read_jsonl(std::istream& in) {
    std::vector<PreferencePair> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.empty()) {
            continue;
        }
        try {
            out.push_back(from_json_line(line));
        } catch (const std::exception& e) {
            throw std::invalid_argument("line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

std::vector<PreferencePair> read_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open '" + path.string() + "'");
    }
    return read_jsonl(in);
}

}  // namespace mixdpo
