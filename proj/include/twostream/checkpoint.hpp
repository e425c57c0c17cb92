#pragma once

// Checkpoints are a single JSON document: model config, step counter, and
// every parameter tensor (online and momentum) by name. nlohmann serializes
// doubles with shortest round-trip formatting, so save/load is exact at
// 64-bit and identical runs produce identical files.

#include <cstdint>
#include <fstream>
#include <string>

#include <json.hpp>

#include "twostream/encoder.hpp"
#include "twostream/errors.hpp"

namespace twostream {

namespace detail {

inline nlohmann::json encoder_config_to_json(const EncoderConfig& c) {
    return {{"vocab", c.vocab},   {"max_len", c.max_len}, {"depth", c.depth}, {"d", c.d},
            {"heads", c.heads},   {"ff_mult", c.ff_mult}, {"d_out", c.d_out}};
}

inline EncoderConfig encoder_config_from_json(const nlohmann::json& j) {
    EncoderConfig c;
    c.vocab = j.at("vocab").get<int>();
    c.max_len = j.at("max_len").get<int>();
    c.depth = j.at("depth").get<int>();
    c.d = j.at("d").get<int>();
    c.heads = j.at("heads").get<int>();
    c.ff_mult = j.at("ff_mult").get<int>();
    c.d_out = j.at("d_out").get<int>();
    return c;
}

inline nlohmann::json tensor_to_json(const Tensor& t) {
    return {{"shape", t.shape()}, {"values", t.values()}};
}

inline void tensor_from_json(const nlohmann::json& j, Tensor& t, const std::string& name) {
    auto shape = j.at("shape").get<std::vector<int>>();
    auto values = j.at("values").get<std::vector<double>>();
    if (shape != t.shape())
        throw ParseError("checkpoint: shape mismatch for parameter " + name);
    if (values.size() != t.numel())
        throw ParseError("checkpoint: value count mismatch for parameter " + name);
    t.mutable_values() = std::move(values);
}

}  // namespace detail

struct Checkpoint {
    TwoStreamModel model;
    MomentumState momentum;
    int64_t step = 0;
};

inline void save_checkpoint(const std::string& path, TwoStreamModel& model,
                            MomentumState& momentum, int64_t step) {
    nlohmann::json j;
    j["format"] = "twostream-checkpoint-v1";
    j["step"] = step;
    j["config"] = {{"vision", detail::encoder_config_to_json(model.cfg.vision)},
                   {"text", detail::encoder_config_to_json(model.cfg.text)}};
    nlohmann::json params = nlohmann::json::object();
    for (auto& [name, t] : model.named_params()) params[name] = detail::tensor_to_json(*t);
    j["params"] = std::move(params);
    nlohmann::json mom = nlohmann::json::object();
    for (auto& [name, t] : momentum.vision.named_params())
        mom["vision." + name] = detail::tensor_to_json(*t);
    for (auto& [name, t] : momentum.text.named_params())
        mom["text." + name] = detail::tensor_to_json(*t);
    j["momentum_params"] = std::move(mom);

    std::ofstream out(path);
    if (!out) throw FileError("save_checkpoint: cannot open " + path + " for writing");
    out << j.dump() << '\n';
    if (!out) throw FileError("save_checkpoint: write failure on " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FileError("load_checkpoint: cannot open " + path);
    nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded()) throw ParseError("load_checkpoint: malformed JSON in " + path);
    try {
        if (j.at("format").get<std::string>() != "twostream-checkpoint-v1")
            throw ParseError("load_checkpoint: unknown format in " + path);
        ModelConfig cfg;
        cfg.vision = detail::encoder_config_from_json(j.at("config").at("vision"));
        cfg.text = detail::encoder_config_from_json(j.at("config").at("text"));
        Checkpoint ck;
        auto [model, momentum] = init_model(cfg, 0);
        ck.model = std::move(model);
        ck.momentum = std::move(momentum);
        ck.step = j.at("step").get<int64_t>();
        const auto& params = j.at("params");
        for (auto& [name, t] : ck.model.named_params())
            detail::tensor_from_json(params.at(name), *t, name);
        const auto& mom = j.at("momentum_params");
        for (auto& [name, t] : ck.momentum.vision.named_params())
            detail::tensor_from_json(mom.at("vision." + name), *t, "momentum vision." + name);
        for (auto& [name, t] : ck.momentum.text.named_params())
            detail::tensor_from_json(mom.at("text." + name), *t, "momentum text." + name);
        return ck;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("load_checkpoint: " + path + ": " + e.what());
    }
}

}  // namespace twostream
