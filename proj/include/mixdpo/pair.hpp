#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace mixdpo {

using TokenSeq = std::vector<std::size_t>;

struct PreferencePair {
    TokenSeq prompt;
    TokenSeq chosen;
    TokenSeq rejected;
    std::map<std::string, std::string> subgroups;
    std::string annotator_id;
    std::optional<double> true_beta;
    std::optional<double> true_delta;

    bool operator==(const PreferencePair&) const = default;
};

/// Throws std::invalid_argument when chosen == rejected or a token is
/// outside [0, vocab_size).
void validate_pair(const PreferencePair& pair, std::size_t vocab_size);

/// Content hash (FNV-1a 64) of prompt, chosen, rejected and annotator id;
/// stable across platforms and independent of the pair's position.
std::uint64_t pair_id(const PreferencePair& pair);
std::string pair_id_hex(const PreferencePair& pair);

// JSON Lines, one object per line with fields prompt, chosen, rejected,
// subgroups, annotator_id, true_beta, true_delta.
std::string to_json_line(const PreferencePair& pair);
PreferencePair from_json_line(const std::string& line);

void write_jsonl(std::ostream& out, const std::vector<PreferencePair>& pairs);
void write_jsonl(const std::filesystem::path& path, const std::vector<PreferencePair>& pairs);
std::vector<PreferencePair> read_jsonl(std::istream& in);
std::vector<PreferencePair> read_jsonl(const std::filesystem::path& path);

}  // namespace mixdpo
