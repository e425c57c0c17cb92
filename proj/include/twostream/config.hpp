#pragma once

// Experiment configuration: one JSON document with full defaulting covering
// corpus generation, model size, training and evaluation. Every command
// echoes the resolved config into its output directory; re-running from that
// echo reproduces the outputs bit-exactly. All randomness flows from the root
// seed; component seeds are derived by tagged splitting.

#include <cstdint>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "twostream/data.hpp"
#include "twostream/encoder.hpp"
#include "twostream/errors.hpp"
#include "twostream/random.hpp"
#include "twostream/trainer.hpp"

namespace twostream {

struct ArchConfig {
    int d = 32;
    int depth = 2;
    int heads = 2;
    int ff_mult = 2;
    int d_out = 32;
};

struct EvalConfig {
    std::vector<int> ks{1, 5, 10};
    int frames_per_video = 4;
    bool video_renorm = true;
};

struct ExperimentConfig {
    uint64_t seed = 42;
    std::string out_dir = "out";
    CorpusConfig corpus;
    ArchConfig model;
    TrainConfig train;
    EvalConfig eval;
    double eval_fraction = 0.2;  // tail of the generated corpus held out, kept clean

    // Component seeds are derived from the root so one --seed override moves
    // the whole experiment coherently.
    void derive_component_seeds() {
        corpus.seed = derive_seed(seed, "corpus");
        train.seed = derive_seed(seed, "train");
    }

    uint64_t model_seed() const { return derive_seed(seed, "model"); }
    uint64_t noise_seed() const { return derive_seed(seed, "noise"); }
    uint64_t video_seed() const { return derive_seed(seed, "videos"); }

    void validate() const {
        corpus.validate();
        train.validate();
        if (eval_fraction < 0.0 || eval_fraction >= 1.0)
            throw ConfigError("config: eval_fraction must lie in [0,1)");
        if (eval.frames_per_video < 1)
            throw ConfigError("config: frames_per_video must be >= 1");
        if (eval.ks.empty()) throw ConfigError("config: eval.ks must not be empty");
    }
};

inline ModelConfig model_config_from(const ExperimentConfig& cfg) {
    ModelConfig mc;
    mc.vision = EncoderConfig{.vocab = cfg.corpus.V_v, .max_len = cfg.corpus.P,
                              .depth = cfg.model.depth, .d = cfg.model.d,
                              .heads = cfg.model.heads, .ff_mult = cfg.model.ff_mult,
                              .d_out = cfg.model.d_out};
    mc.text = EncoderConfig{.vocab = cfg.corpus.V_t, .max_len = cfg.corpus.L_max,
                            .depth = cfg.model.depth, .d = cfg.model.d,
                            .heads = cfg.model.heads, .ff_mult = cfg.model.ff_mult,
                            .d_out = cfg.model.d_out};
    return mc;
}

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& j, const std::set<std::string>& known,
                                const std::string& where) {
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!known.count(it.key()))
            throw ConfigError("config: unknown key '" + it.key() + "' in " + where);
}

template <typename T>
void read_field(const nlohmann::json& j, const char* key, T& out) {
    if (j.contains(key)) {
        try {
            out = j.at(key).get<T>();
        } catch (const nlohmann::json::exception&) {
            throw ConfigError(std::string("config: bad value for '") + key + "'");
        }
    }
}

}  // namespace detail

inline nlohmann::json experiment_config_to_json(const ExperimentConfig& c) {
    return {
        {"seed", c.seed},
        {"out_dir", c.out_dir},
        {"corpus",
         {{"n_pairs", c.corpus.n_pairs},
          {"V_v", c.corpus.V_v},
          {"V_t", c.corpus.V_t},
          {"P", c.corpus.P},
          {"L_min", c.corpus.L_min},
          {"L_max", c.corpus.L_max},
          {"n_concepts", c.corpus.n_concepts},
          {"concept_sharpness", c.corpus.concept_sharpness},
          {"noise_rate", c.corpus.noise_rate}}},
        {"model",
         {{"d", c.model.d},
          {"depth", c.model.depth},
          {"heads", c.model.heads},
          {"ff_mult", c.model.ff_mult},
          {"d_out", c.model.d_out}}},
        {"train",
         {{"m", c.train.m},
          {"tau", c.train.tau},
          {"queue_capacity", c.train.queue_capacity},
          {"batch_size", c.train.batch_size},
          {"epochs", c.train.epochs},
          {"base_lr", c.train.base_lr},
          {"warmup_epochs_at_base", c.train.warmup_epochs_at_base},
          {"weight_decay", c.train.weight_decay},
          {"vision_mask_rate", c.train.vision_mask_rate},
          {"text_mask_rate", c.train.text_mask_rate},
          {"amf_enabled", c.train.amf_enabled},
          {"amf_k", c.train.amf_k},
          {"amf_warmup_min", c.train.amf_warmup_min},
          {"loss_weights",
           {{"inst", c.train.weights.inst},
            {"token", c.train.weights.token},
            {"task", c.train.weights.task}}},
          {"contrastive_from_masked", c.train.contrastive_from_masked}}},
        {"eval",
         {{"ks", c.eval.ks},
          {"frames_per_video", c.eval.frames_per_video},
          {"video_renorm", c.eval.video_renorm}}},
        {"eval_fraction", c.eval_fraction},
    };
}

inline ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("config: top level must be a JSON object");
    detail::reject_unknown_keys(
        j, {"seed", "out_dir", "corpus", "model", "train", "eval", "eval_fraction"},
        "top level");
    ExperimentConfig c;
    detail::read_field(j, "seed", c.seed);
    detail::read_field(j, "out_dir", c.out_dir);
    detail::read_field(j, "eval_fraction", c.eval_fraction);

    if (j.contains("corpus")) {
        const auto& jc = j.at("corpus");
        detail::reject_unknown_keys(jc,
                                    {"n_pairs", "V_v", "V_t", "P", "L_min", "L_max",
                                     "n_concepts", "concept_sharpness", "noise_rate"},
                                    "corpus");
        detail::read_field(jc, "n_pairs", c.corpus.n_pairs);
        detail::read_field(jc, "V_v", c.corpus.V_v);
        detail::read_field(jc, "V_t", c.corpus.V_t);
        detail::read_field(jc, "P", c.corpus.P);
        detail::read_field(jc, "L_min", c.corpus.L_min);
        detail::read_field(jc, "L_max", c.corpus.L_max);
        detail::read_field(jc, "n_concepts", c.corpus.n_concepts);
        detail::read_field(jc, "concept_sharpness", c.corpus.concept_sharpness);
        detail::read_field(jc, "noise_rate", c.corpus.noise_rate);
    }
    if (j.contains("model")) {
        const auto& jm = j.at("model");
        detail::reject_unknown_keys(jm, {"d", "depth", "heads", "ff_mult", "d_out"}, "model");
        detail::read_field(jm, "d", c.model.d);
        detail::read_field(jm, "depth", c.model.depth);
        detail::read_field(jm, "heads", c.model.heads);
        detail::read_field(jm, "ff_mult", c.model.ff_mult);
        detail::read_field(jm, "d_out", c.model.d_out);
    }
    if (j.contains("train")) {
        const auto& jt = j.at("train");
        detail::reject_unknown_keys(
            jt, {"m", "tau", "queue_capacity", "batch_size", "epochs", "base_lr",
                 "warmup_epochs_at_base", "weight_decay", "vision_mask_rate", "text_mask_rate",
                 "amf_enabled", "amf_k", "amf_warmup_min", "loss_weights",
                 "contrastive_from_masked"},
            "train");
        detail::read_field(jt, "m", c.train.m);
        detail::read_field(jt, "tau", c.train.tau);
        detail::read_field(jt, "queue_capacity", c.train.queue_capacity);
        detail::read_field(jt, "batch_size", c.train.batch_size);
        detail::read_field(jt, "epochs", c.train.epochs);
        detail::read_field(jt, "base_lr", c.train.base_lr);
        detail::read_field(jt, "warmup_epochs_at_base", c.train.warmup_epochs_at_base);
        detail::read_field(jt, "weight_decay", c.train.weight_decay);
        detail::read_field(jt, "vision_mask_rate", c.train.vision_mask_rate);
        detail::read_field(jt, "text_mask_rate", c.train.text_mask_rate);
        detail::read_field(jt, "amf_enabled", c.train.amf_enabled);
        detail::read_field(jt, "amf_k", c.train.amf_k);
        detail::read_field(jt, "amf_warmup_min", c.train.amf_warmup_min);
        detail::read_field(jt, "contrastive_from_masked", c.train.contrastive_from_masked);
        if (jt.contains("loss_weights")) {
            const auto& jw = jt.at("loss_weights");
            detail::reject_unknown_keys(jw, {"inst", "token", "task"}, "train.loss_weights");
            detail::read_field(jw, "inst", c.train.weights.inst);
            detail::read_field(jw, "token", c.train.weights.token);
            detail::read_field(jw, "task", c.train.weights.task);
        }
    }
    if (j.contains("eval")) {
        const auto& je = j.at("eval");
        detail::reject_unknown_keys(je, {"ks", "frames_per_video", "video_renorm"}, "eval");
        detail::read_field(je, "ks", c.eval.ks);
        detail::read_field(je, "frames_per_video", c.eval.frames_per_video);
        detail::read_field(je, "video_renorm", c.eval.video_renorm);
    }
    c.derive_component_seeds();
    return c;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FileError("config: cannot open " + path);
    nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded()) throw ConfigError("config: malformed JSON in " + path);
    return experiment_config_from_json(j);
}

// Train split first (optionally noised by the caller), clean eval tail.
struct CorpusSplit {
    Corpus train;
    Corpus eval;
};

inline CorpusSplit split_corpus(const Corpus& corpus, double eval_fraction) {
    const int n = static_cast<int>(corpus.size());
    const int n_eval = static_cast<int>(eval_fraction * n);
    CorpusSplit s;
    s.train.assign(corpus.begin(), corpus.end() - n_eval);
    s.eval.assign(corpus.end() - n_eval, corpus.end());
    return s;
}

inline void check_corpus_vocab(const Corpus& corpus, const ModelConfig& mc) {
    for (const auto& s : corpus) {
        for (int t : s.image_tokens)
            if (t < 0 || t >= mc.vision.vocab)
                throw ConfigError("corpus/model mismatch: image token " + std::to_string(t) +
                                  " outside vocabulary of size " +
                                  std::to_string(mc.vision.vocab));
        for (int t : s.text_tokens)
            if (t < 0 || t >= mc.text.vocab)
                throw ConfigError("corpus/model mismatch: text token " + std::to_string(t) +
                                  " outside vocabulary of size " + std::to_string(mc.text.vocab));
        if (static_cast<int>(s.image_tokens.size()) > mc.vision.max_len)
            throw ConfigError("corpus/model mismatch: image sequence longer than max_len");
        if (static_cast<int>(s.text_tokens.size()) > mc.text.max_len)
            throw ConfigError("corpus/model mismatch: text sequence longer than max_len");
    }
}

}  // namespace twostream
