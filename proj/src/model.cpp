#include "mixdpo/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "json.hpp"
#include "mixdpo/rng.hpp"

namespace mixdpo {

using ad::Node;
using ad::Tensor;

namespace {

constexpr std::uint64_t kInitStream = 0x6d6f64656cULL;

Tensor gaussian(ad::Shape shape, double std, Pcg32& rng) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& v : t.data) {
        v = std * rng.normal();
    }
    return t;
}

void check_tokens(const TokenSeq& seq, std::size_t vocab, const char* what) {
    for (std::size_t t : seq) {
        if (t >= vocab) {
            throw std::out_of_range(std::string(what) + " token " + std::to_string(t) +
                                    " outside vocabulary of size " + std::to_string(vocab));
        }
    }
}

}  // namespace

void VocabConfig::validate() const {
    if (vocab_size < 2) {
        throw std::invalid_argument("vocab_size must be >= 2");
    }
    if (max_prompt_len < 1 || max_response_len < 1) {
        throw std::invalid_argument("max_prompt_len and max_response_len must be >= 1");
    }
}

void ModelConfig::validate() const {
    vocab.validate();
    if (hidden < 1 || window < 1) {
        throw std::invalid_argument("model hidden width and window must be >= 1");
    }
    if (!(init_std >= 0.0)) {
        throw std::invalid_argument("model init_std must be >= 0");
    }
}

SequenceModel::SequenceModel(const ModelConfig& config, bool frozen) : config_(config), frozen_(frozen) {
    config_.validate();
    const std::size_t v = config_.vocab.vocab_size;
    const std::size_t d = config_.hidden;
    Pcg32 rng(config_.seed, kInitStream);
    const bool grad = !frozen;
    params_.emplace_back(gaussian({v, d}, config_.init_std, rng), grad);
    params_.emplace_back(gaussian({d, d}, config_.init_std, rng), grad);
    params_.emplace_back(Tensor::zeros({d}), grad);
    Tensor out_w = gaussian({d, v}, config_.init_std, rng);
    if (config_.zero_output) {
        out_w = Tensor::zeros({d, v});
    }
    params_.emplace_back(std::move(out_w), grad);
    params_.emplace_back(Tensor::zeros({v}), grad);
}

const std::vector<std::string>& SequenceModel::parameter_names() {
    static const std::vector<std::string> names = {"embedding", "hidden_w", "hidden_b", "output_w",
                                                   "output_b"};
    return names;
}

SequenceModel SequenceModel::frozen_copy() const {
    std::vector<Node> ps;
    for (const auto& p : params_) {
        ps.emplace_back(p.value(), false);
    }
    return SequenceModel(config_, std::move(ps), true);
}

SequenceModel SequenceModel::trainable_copy() const {
    std::vector<Node> ps;
    for (const auto& p : params_) {
        ps.emplace_back(p.value(), true);
    }
    return SequenceModel(config_, std::move(ps), false);
}

std::uint64_t SequenceModel::fingerprint() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& p : params_) {
        for (double v : p.value().data) {
            auto bits = std::bit_cast<std::uint64_t>(v);
            for (int i = 0; i < 8; ++i) {
                h ^= (bits >> (8 * i)) & 0xffu;
                h *= 0x100000001b3ULL;
            }
        }
    }
    return h;
}

void SequenceModel::zero_grad() {
    for (auto& p : params_) {
        p.zero_grad();
    }
}

Node position_logprobs(const SequenceModel& model, const TokenSeq& prompt, const TokenSeq& response) {
    const std::size_t vocab = model.vocab_size();
    if (response.empty()) {
        throw std::invalid_argument("sequence_logprob: response must be non-empty");
    }
    check_tokens(prompt, vocab, "prompt");
    check_tokens(response, vocab, "response");

    const std::size_t window = model.config().window;
    const std::size_t steps = response.size();
    // Context tokens for step t are the last `window` tokens of prompt ++ response[0, t).
    std::vector<std::size_t> flat;
    std::vector<std::pair<std::size_t, std::size_t>> spans;  // (offset, count) into flat
    for (std::size_t t = 0; t < steps; ++t) {
        const std::size_t avail = prompt.size() + t;
        const std::size_t count = std::min(window, avail);
        spans.emplace_back(flat.size(), count);
        for (std::size_t i = avail - count; i < avail; ++i) {
            flat.push_back(i < prompt.size() ? prompt[i] : response[i - prompt.size()]);
        }
    }
    Tensor averaging = Tensor::zeros({steps, flat.size()});
    for (std::size_t t = 0; t < steps; ++t) {
        const auto [offset, count] = spans[t];
        for (std::size_t j = 0; j < count; ++j) {
            averaging.at(t, offset + j) = 1.0 / static_cast<double>(count);
        }
    }

    const auto& ps = model.parameters();
    Node context = ad::matmul(Node(std::move(averaging)), ad::gather_rows(ps[0], flat));
    Node hidden = ad::tanh(ad::add_rows(ad::matmul(context, ps[1]), ps[2]));
    Node logits = ad::add_rows(ad::matmul(hidden, ps[3]), ps[4]);
    return ad::log_softmax(logits, 1);
}

Node sequence_logprob(const SequenceModel& model, const TokenSeq& prompt, const TokenSeq& response) {
    return ad::sum(ad::pick(position_logprobs(model, prompt, response), response));
}

double sequence_logprob_value(const SequenceModel& model, const TokenSeq& prompt, const TokenSeq& response) {
    ad::NoGradGuard guard;
    return sequence_logprob(model, prompt, response).item();
}

Node implicit_reward_delta(const SequenceModel& policy, const SequenceModel& reference,
                           const PreferencePair& pair) {
    ReferenceLogprobs ref;
    ref.chosen = sequence_logprob_value(reference, pair.prompt, pair.chosen);
    ref.rejected = sequence_logprob_value(reference, pair.prompt, pair.rejected);
    return implicit_reward_delta(policy, ref, pair);
}

Node implicit_reward_delta(const SequenceModel& policy, const ReferenceLogprobs& reference,
                           const PreferencePair& pair) {
    Node chosen = ad::shift(sequence_logprob(policy, pair.prompt, pair.chosen), -reference.chosen);
    Node rejected = ad::shift(sequence_logprob(policy, pair.prompt, pair.rejected), -reference.rejected);
    return ad::sub(chosen, rejected);
}

void save_checkpoint(const SequenceModel& model, const std::filesystem::path& path) {
    const ModelConfig& c = model.config();
    nlohmann::ordered_json j;
    j["format"] = "mixdpo-checkpoint";
    j["version"] = kCheckpointVersion;
    j["config"] = {{"vocab_size", c.vocab.vocab_size},
                   {"max_prompt_len", c.vocab.max_prompt_len},
                   {"max_response_len", c.vocab.max_response_len},
                   {"hidden", c.hidden},
                   {"window", c.window},
                   {"init_std", c.init_std},
                   {"seed", c.seed}};
    j["tensors"] = nlohmann::ordered_json::array();
    const auto& names = SequenceModel::parameter_names();
    for (std::size_t i = 0; i < names.size(); ++i) {
        const Tensor& t = model.parameters()[i].value();
        j["tensors"].push_back({{"name", names[i]}, {"shape", t.shape}, {"data", t.data}});
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot open '" + path.string() + "' for writing");
    }
    out << j.dump() << '\n';
}

SequenceModel load_checkpoint(const std::filesystem::path& path, bool frozen) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open checkpoint '" + path.string() + "'");
    }
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError("checkpoint '" + path.string() + "' is not valid JSON: " + e.what());
    }
    if (j.value("format", "") != "mixdpo-checkpoint") {
        throw CheckpointError("'" + path.string() + "' is not a mixdpo checkpoint");
    }
    const int version = j.value("version", -1);
    if (version != kCheckpointVersion) {
        throw CheckpointError("checkpoint version mismatch: file has " + std::to_string(version) +
                              ", this build reads " + std::to_string(kCheckpointVersion));
    }
    ModelConfig c;
    const auto& jc = j.at("config");
    c.vocab.vocab_size = jc.at("vocab_size").get<std::size_t>();
    c.vocab.max_prompt_len = jc.at("max_prompt_len").get<std::size_t>();
    c.vocab.max_response_len = jc.at("max_response_len").get<std::size_t>();
    c.hidden = jc.at("hidden").get<std::size_t>();
    c.window = jc.at("window").get<std::size_t>();
    c.init_std = jc.at("init_std").get<double>();
    c.seed = jc.at("seed").get<std::uint64_t>();
    SequenceModel model(c, frozen);
    const auto& names = SequenceModel::parameter_names();
    const auto& tensors = j.at("tensors");
    if (tensors.size() != names.size()) {
        throw CheckpointError("checkpoint has " + std::to_string(tensors.size()) + " tensors, expected " +
                              std::to_string(names.size()));
    }
    for (std::size_t i = 0; i < names.size(); ++i) {
        const auto& jt = tensors.at(i);
        if (jt.at("name").get<std::string>() != names[i]) {
            throw CheckpointError("checkpoint tensor " + std::to_string(i) + " is '" +
                                  jt.at("name").get<std::string>() + "', expected '" + names[i] + "'");
        }
        Tensor t(jt.at("shape").get<ad::Shape>(), jt.at("data").get<std::vector<double>>());
        Tensor& dst = model.parameters()[i].mutable_value();
        if (t.shape != dst.shape) {
            throw CheckpointError("checkpoint tensor '" + names[i] + "' has shape " +
                                  ad::shape_to_string(t.shape) + ", expected " + ad::shape_to_string(dst.shape));
        }
        dst = std::move(t);
    }
    return model;
}

}  // namespace mixdpo
