#pragma once

// Synthetic paired-token corpus generator. Each concept owns one sharpened
// categorical distribution per stream and position; paired image/text token
// sequences are drawn from the same concept, which makes the retrieval task
// learnable at desk scale and lets tests plant mismatched pairs on purpose.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "twostream/errors.hpp"
#include "twostream/random.hpp"

namespace twostream {

struct PairedSample {
    std::vector<int> image_tokens;  // fixed length P, over [0, V_v)
    std::vector<int> text_tokens;   // length in [L_min, L_max], over [0, V_t)
    int concept_id = 0;             // latent; generator/evaluation only
    bool is_noise = false;          // true iff the pair was deliberately mismatched

    bool operator==(const PairedSample&) const = default;
};

using Corpus = std::vector<PairedSample>;

struct CorpusConfig {
    int n_pairs = 2000;
    int V_v = 64;
    int V_t = 64;
    int P = 16;  // image tokens per sample
    int L_min = 6;
    int L_max = 12;
    int n_concepts = 4;
    double concept_sharpness = 20.0;
    double noise_rate = 0.0;
    uint64_t seed = 42;

    void validate() const {
        if (n_pairs <= 0 || V_v <= 0 || V_t <= 0 || P <= 0 || L_min <= 0)
            throw ConfigError("corpus config: all sizes must be positive");
        if (L_max < L_min) throw ConfigError("corpus config: L_max < L_min");
        if (n_concepts < 2) throw ConfigError("corpus config: n_concepts must be >= 2");
        if (noise_rate < 0.0 || noise_rate >= 1.0)
            throw ConfigError("corpus config: noise_rate must lie in [0,1)");
        if (concept_sharpness < 0.0)
            throw ConfigError("corpus config: concept_sharpness must be >= 0");
    }
};

struct VideoSample {
    std::vector<std::vector<int>> frames;  // same length P, same concept
    std::vector<int> caption;
    int concept_id = 0;
};

namespace detail {

// One categorical distribution per (concept, position): softmax of sharpened
// Gumbel draws, so the top token typically dominates once sharpness reaches
// the tens while a minority of positions stay genuinely mixed.
// sharpness -> inf collapses onto a single token per position; 0 is uniform.
class ConceptModel {
public:
    ConceptModel(std::mt19937_64& rng, int n_concepts, int vocab, int positions,
                 double sharpness) {
        std::uniform_real_distribution<double> unif(0.0, 1.0);
        cdfs_.resize(static_cast<size_t>(n_concepts) * positions);
        for (auto& cdf : cdfs_) {
            std::vector<double> w(vocab);
            double mx = -1e300;
            for (double& x : w) {
                const double u = std::max(unif(rng), 1e-300);
                x = -std::log(-std::log(u));  // Gumbel(0,1)
                mx = std::max(mx, x);
            }
            double z = 0.0;
            for (double& x : w) {
                x = std::exp(sharpness * (x - mx));
                z += x;
            }
            cdf.resize(vocab);
            double acc = 0.0;
            for (int t = 0; t < vocab; ++t) {
                acc += w[t] / z;
                cdf[t] = acc;
            }
            cdf.back() = 1.0;
        }
        positions_ = positions;
    }

    int draw(std::mt19937_64& rng, int concept_id, int position) const {
        const auto& cdf = cdfs_[static_cast<size_t>(concept_id) * positions_ + position];
        std::uniform_real_distribution<double> unif(0.0, 1.0);
        const double u = unif(rng);
        return static_cast<int>(std::lower_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
    }

private:
    std::vector<std::vector<double>> cdfs_;
    int positions_ = 0;
};

}  // namespace detail

inline Corpus generate_corpus(const CorpusConfig& cfg) {
    cfg.validate();
    auto model_rng = make_rng(derive_seed(cfg.seed, "concept-model"));
    detail::ConceptModel image_model(model_rng, cfg.n_concepts, cfg.V_v, cfg.P,
                                     cfg.concept_sharpness);
    detail::ConceptModel text_model(model_rng, cfg.n_concepts, cfg.V_t, cfg.L_max,
                                    cfg.concept_sharpness);

    auto rng = make_rng(derive_seed(cfg.seed, "corpus-draw"));
    std::uniform_int_distribution<int> concept_dist(0, cfg.n_concepts - 1);
    std::uniform_int_distribution<int> len_dist(cfg.L_min, cfg.L_max);

    Corpus corpus;
    corpus.reserve(cfg.n_pairs);
    for (int i = 0; i < cfg.n_pairs; ++i) {
        PairedSample s;
        s.concept_id = concept_dist(rng);
        s.image_tokens.resize(cfg.P);
        for (int j = 0; j < cfg.P; ++j) s.image_tokens[j] = image_model.draw(rng, s.concept_id, j);
        const int len = len_dist(rng);
        s.text_tokens.resize(len);
        for (int j = 0; j < len; ++j) s.text_tokens[j] = text_model.draw(rng, s.concept_id, j);
        corpus.push_back(std::move(s));
    }
    return corpus;
}

// Swaps texts among a chosen subset in one cycle so the text multiset is
// preserved while every flagged sample receives a text from a different
// concept. Uses the grouped-shift construction: order the chosen samples by
// concept and shift by the largest group, which mismatches every pair
// whenever the largest group is at most half the selection.
inline Corpus inject_noise(Corpus corpus, double noise_rate, uint64_t seed) {
    if (noise_rate < 0.0 || noise_rate >= 1.0)
        throw ConfigError("inject_noise: noise_rate must lie in [0,1)");
    const int n = static_cast<int>(corpus.size());
    const int k = static_cast<int>(noise_rate * n);
    if (k == 0) return corpus;

    auto rng = make_rng(derive_seed(seed, "noise-select"));
    std::vector<int> all(n);
    std::iota(all.begin(), all.end(), 0);

    constexpr int kMaxAttempts = 200;
    for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
        std::shuffle(all.begin(), all.end(), rng);
        std::vector<int> chosen(all.begin(), all.begin() + k);
        std::shuffle(chosen.begin(), chosen.end(), rng);
        std::stable_sort(chosen.begin(), chosen.end(), [&](int a, int b) {
            return corpus[a].concept_id < corpus[b].concept_id;
        });
        std::map<int, int> class_count;
        for (int idx : chosen) class_count[corpus[idx].concept_id]++;
        int largest = 0;
        for (auto& [c, cnt] : class_count) largest = std::max(largest, cnt);
        if (largest > k - largest) continue;  // cannot mismatch everyone; re-pick

        std::vector<std::vector<int>> donor_texts(k);
        for (int i = 0; i < k; ++i) donor_texts[i] = corpus[chosen[i]].text_tokens;
        for (int i = 0; i < k; ++i) {
            const int donor = (i + largest) % k;
            corpus[chosen[i]].text_tokens = donor_texts[donor];
            corpus[chosen[i]].is_noise = true;
        }
        return corpus;
    }
    throw ConfigError(
        "inject_noise: could not select a mismatchable subset (too few pairs or concepts)");
}

inline std::vector<VideoSample> make_videos(const Corpus& corpus, int frames_per_video,
                                            uint64_t seed) {
    if (frames_per_video < 1)
        throw ConfigError("make_videos: frames_per_video must be >= 1");
    std::map<int, std::vector<int>> by_concept;
    for (int i = 0; i < static_cast<int>(corpus.size()); ++i)
        by_concept[corpus[i].concept_id].push_back(i);

    auto rng = make_rng(derive_seed(seed, "video-group"));
    std::vector<VideoSample> videos;
    for (auto& [cid, members] : by_concept) {
        std::shuffle(members.begin(), members.end(), rng);
        for (size_t start = 0; start + frames_per_video <= members.size();
             start += frames_per_video) {
            VideoSample v;
            v.concept_id = cid;
            int caption_from = -1;
            for (int f = 0; f < frames_per_video; ++f) {
                const auto& s = corpus[members[start + f]];
                v.frames.push_back(s.image_tokens);
                if (caption_from < 0 && !s.is_noise) caption_from = static_cast<int>(start + f);
            }
            if (caption_from < 0) continue;  // no concept-consistent caption available
            v.caption = corpus[members[caption_from]].text_tokens;
            videos.push_back(std::move(v));
        }
    }
    if (videos.empty())
        throw ConfigError("make_videos: insufficient same-concept samples to form any video");
    return videos;
}

// Corpus file: UTF-8, one JSON object per line with fields image_tokens,
// text_tokens, concept_id, is_noise.
inline void save_corpus(const Corpus& corpus, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw FileError("save_corpus: cannot open " + path + " for writing");
    for (const auto& s : corpus) {
        nlohmann::json j{{"image_tokens", s.image_tokens},
                         {"text_tokens", s.text_tokens},
                         {"concept_id", s.concept_id},
                         {"is_noise", s.is_noise}};
        out << j.dump() << '\n';
    }
    if (!out) throw FileError("save_corpus: write failure on " + path);
}

inline Corpus load_corpus(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FileError("load_corpus: cannot open " + path);
    Corpus corpus;
    std::string line;
    int record = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object())
            throw ParseError("load_corpus: malformed record " + std::to_string(record) + " in " +
                             path);
        try {
            PairedSample s;
            s.image_tokens = j.at("image_tokens").get<std::vector<int>>();
            s.text_tokens = j.at("text_tokens").get<std::vector<int>>();
            s.concept_id = j.at("concept_id").get<int>();
            s.is_noise = j.at("is_noise").get<bool>();
            corpus.push_back(std::move(s));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError("load_corpus: record " + std::to_string(record) + " in " + path +
                             ": " + e.what());
        }
        ++record;
    }
    return corpus;
}

}  // namespace twostream
