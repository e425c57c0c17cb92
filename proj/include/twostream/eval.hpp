#pragma once

// Retrieval evaluation over precomputed embedding indexes: R@k, median rank,
// text-to-video via mean frame pooling, plus a wall-clock scaling benchmark
// contrasting dot-product retrieval with a simulated pairwise-fusion scorer.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "twostream/data.hpp"
#include "twostream/encoder.hpp"
#include "twostream/errors.hpp"
#include "twostream/random.hpp"
#include "twostream/tensor.hpp"

namespace twostream {

struct RetrievalIndex {
    Tensor candidate_embeddings;  // [N, d_out], unit-norm rows
    std::vector<int> candidate_ids;
    std::string modality;
};

struct MetricsReport {
    std::string direction;  // I2T, T2I or T2V
    std::map<int, double> r_at;
    double median_rank = 0.0;
    int n_queries = 0;
    std::map<std::string, double> wall_times;  // seconds per phase
};

// Deployment path: candidates are encoded with the online encoder; the
// momentum twins are a training device only.
inline RetrievalIndex build_index(TwoStreamModel& model, const Corpus& samples,
                                  Stream modality) {
    RetrievalIndex index;
    index.modality = modality == Stream::vision ? "vision" : "text";
    const int d = model.cfg.vision.d_out;
    Tensor all({static_cast<int>(samples.size()), d});
    for (size_t i = 0; i < samples.size(); ++i) {
        const auto& tokens =
            modality == Stream::vision ? samples[i].image_tokens : samples[i].text_tokens;
        const EncoderParams& p = modality == Stream::vision ? model.vision : model.text;
        Tensor g = encode(nullptr, p, tokens).global;
        for (int j = 0; j < d; ++j) all.mutable_values()[i * d + j] = g.at(0, j);
        index.candidate_ids.push_back(static_cast<int>(i));
    }
    index.candidate_embeddings = all;
    return index;
}

// 1 + number of candidates scoring strictly higher than the true match
// (optimistic tie handling).
inline int rank_of_match(const Tensor& query_embedding, const RetrievalIndex& index,
                         int true_id) {
    const int n = index.candidate_embeddings.rows();
    const int d = index.candidate_embeddings.cols();
    int true_row = -1;
    for (int i = 0; i < n; ++i)
        if (index.candidate_ids[i] == true_id) {
            true_row = i;
            break;
        }
    if (true_row < 0) throw EvalError("rank_of_match: true id not present in index");
    auto score = [&](int row) {
        double s = 0.0;
        for (int j = 0; j < d; ++j) s += query_embedding.at(0, j) * index.candidate_embeddings.at(row, j);
        return s;
    };
    const double true_score = score(true_row);
    int greater = 0;
    for (int i = 0; i < n; ++i)
        if (i != true_row && score(i) > true_score) ++greater;
    return 1 + greater;
}

// r_at[k] = fraction of queries ranked <= k; median rank uses the lower
// median for even counts.
inline MetricsReport evaluate_retrieval(const Tensor& query_embeddings,
                                        const std::vector<int>& true_ids,
                                        const RetrievalIndex& index, const std::vector<int>& ks,
                                        const std::string& direction = "") {
    if (query_embeddings.rows() == 0) throw EvalError("evaluate_retrieval: no queries");
    if (index.candidate_embeddings.rows() == 0)
        throw EvalError("evaluate_retrieval: empty index");
    if (static_cast<int>(true_ids.size()) != query_embeddings.rows())
        throw EvalError("evaluate_retrieval: one true id per query required");

    const auto t0 = std::chrono::steady_clock::now();
    std::vector<int> ranks;
    ranks.reserve(true_ids.size());
    for (int q = 0; q < query_embeddings.rows(); ++q) {
        Tensor row({1, query_embeddings.cols()});
        for (int j = 0; j < query_embeddings.cols(); ++j)
            row.mutable_values()[j] = query_embeddings.at(q, j);
        ranks.push_back(rank_of_match(row, index, true_ids[q]));
    }
    const auto t1 = std::chrono::steady_clock::now();

    MetricsReport report;
    report.direction = direction;
    report.n_queries = static_cast<int>(ranks.size());
    for (int k : ks) {
        int hits = 0;
        for (int r : ranks)
            if (r <= k) ++hits;
        report.r_at[k] = static_cast<double>(hits) / ranks.size();
    }
    std::vector<int> sorted = ranks;
    std::sort(sorted.begin(), sorted.end());
    report.median_rank = sorted[(sorted.size() - 1) / 2];
    report.wall_times["rank"] = std::chrono::duration<double>(t1 - t0).count();
    return report;
}

// Mean of per-frame globals, re-normalized to unit length by default. A
// single frame short-circuits so the one-frame video reduces to image
// retrieval bit-exactly.
inline Tensor video_embedding(TwoStreamModel& model, const VideoSample& video,
                              bool renormalize = true) {
    if (video.frames.empty()) throw std::invalid_argument("video_embedding: zero frames");
    if (video.frames.size() == 1)
        return encode(nullptr, model.vision, video.frames[0]).global.detach();
    const int d = model.cfg.vision.d_out;
    Tensor acc({1, d});
    for (const auto& frame : video.frames) {
        Tensor g = encode(nullptr, model.vision, frame).global;
        for (int j = 0; j < d; ++j) acc.mutable_values()[j] += g.at(0, j);
    }
    for (int j = 0; j < d; ++j) acc.mutable_values()[j] /= static_cast<double>(video.frames.size());
    return renormalize ? l2_normalize_rows(nullptr, acc) : acc;
}

struct PairRetrievalReports {
    MetricsReport i2t;
    MetricsReport t2i;
};

// Both retrieval directions over a 1:1 paired corpus; the true match of
// query i is candidate i.
inline PairRetrievalReports evaluate_pair_retrieval(TwoStreamModel& model, const Corpus& corpus,
                                                    const std::vector<int>& ks) {
    if (corpus.empty()) throw EvalError("evaluate_pair_retrieval: empty corpus");
    auto image_index = build_index(model, corpus, Stream::vision);
    auto text_index = build_index(model, corpus, Stream::text);
    std::vector<int> ids(corpus.size());
    std::iota(ids.begin(), ids.end(), 0);
    PairRetrievalReports out;
    out.i2t = evaluate_retrieval(image_index.candidate_embeddings, ids, text_index, ks, "I2T");
    out.t2i = evaluate_retrieval(text_index.candidate_embeddings, ids, image_index, ks, "T2I");
    return out;
}

// Text-to-video retrieval: captions query mean-frame video embeddings.
inline MetricsReport evaluate_t2v(TwoStreamModel& model, const std::vector<VideoSample>& videos,
                                  const std::vector<int>& ks, bool renormalize = true) {
    if (videos.empty()) throw EvalError("evaluate_t2v: no videos");
    const int d = model.cfg.vision.d_out;
    RetrievalIndex index;
    index.modality = "video";
    index.candidate_embeddings = Tensor({static_cast<int>(videos.size()), d});
    Tensor queries({static_cast<int>(videos.size()), model.cfg.text.d_out});
    std::vector<int> ids;
    for (size_t i = 0; i < videos.size(); ++i) {
        Tensor emb = video_embedding(model, videos[i], renormalize);
        for (int j = 0; j < d; ++j)
            index.candidate_embeddings.mutable_values()[i * d + j] = emb.at(0, j);
        index.candidate_ids.push_back(static_cast<int>(i));
        Tensor q = encode(nullptr, model.text, videos[i].caption).global;
        for (int j = 0; j < q.cols(); ++j)
            queries.mutable_values()[i * q.cols() + j] = q.at(0, j);
        ids.push_back(static_cast<int>(i));
    }
    return evaluate_retrieval(queries, ids, index, ks, "T2V");
}

// --- inference-efficiency benchmark -------------------------------------

// Calibrated dense workloads standing in for network evaluations. The
// two-stream side pays one encode per sample; the single-stream side pays one
// fusion evaluation per query-candidate pair. Absolute costs are arbitrary;
// only how the totals scale with N is asserted.
struct FusionCostModel {
    int encode_dim = 32;
    int encode_iters = 20;
    int fusion_dim = 8;
    int fusion_iters = 2;
};

struct BenchRow {
    int n = 0;
    double t_precompute = 0.0;  // encode N candidates
    double t_query = 0.0;       // encode N queries + rank each against the index
    double t_single = 0.0;      // fusion stub over all N^2 pairs
    double ratio = 0.0;         // t_single / (t_precompute + t_query)
};

struct BenchReport {
    std::vector<BenchRow> rows;
    double slope_single = 0.0;  // log-log fit of t_single vs N
    double slope_query = 0.0;   // log-log fit of t_query vs N
};

namespace detail {

// dim x dim matmul iterated `iters` times; returns a sink value so the work
// cannot be optimized away.
inline double dense_stub(double seed_a, double seed_b, int dim, int iters) {
    std::vector<double> a(static_cast<size_t>(dim) * dim), b(a.size()), c(a.size());
    double x = seed_a;
    for (auto& v : a) {
        x = x * 1.000000119 + seed_b;
        v = x;
    }
    for (size_t i = 0; i < b.size(); ++i) b[i] = a[(i * 7 + 3) % b.size()];
    double sink = 0.0;
    for (int it = 0; it < iters; ++it) {
        std::fill(c.begin(), c.end(), 0.0);
        for (int i = 0; i < dim; ++i)
            for (int k = 0; k < dim; ++k) {
                const double av = a[static_cast<size_t>(i) * dim + k];
                for (int j = 0; j < dim; ++j)
                    c[static_cast<size_t>(i) * dim + j] += av * b[static_cast<size_t>(k) * dim + j];
            }
        sink += c[(it * 131) % c.size()];
        std::swap(a, c);
    }
    return sink;
}

inline double lsq_slope(const std::vector<double>& logx, const std::vector<double>& logy) {
    const double n = static_cast<double>(logx.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (size_t i = 0; i < logx.size(); ++i) {
        sx += logx[i];
        sy += logy[i];
        sxx += logx[i] * logx[i];
        sxy += logx[i] * logy[i];
    }
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

}  // namespace detail

inline BenchReport benchmark_efficiency(const std::vector<int>& sizes, int d_out,
                                        const FusionCostModel& cost = {}, uint64_t seed = 7) {
    if (sizes.size() < 2)
        throw ConfigError("benchmark_efficiency: need at least two index sizes");
    using clock = std::chrono::steady_clock;
    BenchReport report;
    volatile double sink = 0.0;

    for (int n : sizes) {
        auto rng = make_rng(derive_seed(seed, "bench", n));
        std::uniform_real_distribution<double> unif(-1.0, 1.0);
        std::vector<double> candidates(static_cast<size_t>(n) * d_out);
        std::vector<double> queries(candidates.size());
        for (auto& v : candidates) v = unif(rng);
        for (auto& v : queries) v = unif(rng);

        BenchRow row;
        row.n = n;

        // two-stream precompute phase: embed every candidate once
        auto t0 = clock::now();
        for (int i = 0; i < n; ++i)
            sink = sink + detail::dense_stub(candidates[static_cast<size_t>(i) * d_out],
                                             candidates[static_cast<size_t>(i) * d_out + 1],
                                             cost.encode_dim, cost.encode_iters);
        auto t1 = clock::now();
        row.t_precompute = std::chrono::duration<double>(t1 - t0).count();

        // two-stream query phase: embed the query, then one dot-product pass
        // over the index
        t0 = clock::now();
        for (int q = 0; q < n; ++q) {
            sink = sink + detail::dense_stub(queries[static_cast<size_t>(q) * d_out],
                                             queries[static_cast<size_t>(q) * d_out + 1],
                                             cost.encode_dim, cost.encode_iters);
            const double* qv = queries.data() + static_cast<size_t>(q) * d_out;
            double best = -1e300;
            int best_i = -1;
            for (int i = 0; i < n; ++i) {
                const double* cv = candidates.data() + static_cast<size_t>(i) * d_out;
                double s = 0.0;
                for (int j = 0; j < d_out; ++j) s += qv[j] * cv[j];
                if (s > best) {
                    best = s;
                    best_i = i;
                }
            }
            sink = sink + best_i;
        }
        t1 = clock::now();
        row.t_query = std::chrono::duration<double>(t1 - t0).count();

        // single-stream simulation: one fusion evaluation per pair
        t0 = clock::now();
        for (int q = 0; q < n; ++q) {
            double best = -1e300;
            for (int i = 0; i < n; ++i) {
                const double s = detail::dense_stub(queries[static_cast<size_t>(q) * d_out],
                                                    candidates[static_cast<size_t>(i) * d_out],
                                                    cost.fusion_dim, cost.fusion_iters);
                if (s > best) best = s;
            }
            sink = sink + best;
        }
        t1 = clock::now();
        row.t_single = std::chrono::duration<double>(t1 - t0).count();

        row.ratio = row.t_single / (row.t_precompute + row.t_query);
        report.rows.push_back(row);
    }

    std::vector<double> lx, ly_single, ly_query;
    for (const auto& r : report.rows) {
        lx.push_back(std::log(static_cast<double>(r.n)));
        ly_single.push_back(std::log(r.t_single));
        ly_query.push_back(std::log(r.t_query));
    }
    report.slope_single = detail::lsq_slope(lx, ly_single);
    report.slope_query = detail::lsq_slope(lx, ly_query);
    return report;
}

inline std::string bench_to_csv(const BenchReport& report) {
    std::string csv = "n,t_precompute,t_query,t_single,ratio\n";
    char buf[160];
    for (const auto& r : report.rows) {
        std::snprintf(buf, sizeof(buf), "%d,%.9f,%.9f,%.9f,%.9f\n", r.n, r.t_precompute,
                      r.t_query, r.t_single, r.ratio);
        csv += buf;
    }
    return csv;
}

}  // namespace twostream
