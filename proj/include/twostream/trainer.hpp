#pragma once

// One training step, in protocol order: momentum-encode the full batch,
// filter it with the adaptive momentum threshold, compute losses for the
// kept subset against queue snapshots, update online parameters, EMA the
// momentum twins, and only then push the whole batch into the queues.
// Dropped pairs still feed the queues, so filtering never starves the
// similarity statistics.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <vector>

#include "twostream/data.hpp"
#include "twostream/encoder.hpp"
#include "twostream/errors.hpp"
#include "twostream/losses.hpp"
#include "twostream/queue.hpp"
#include "twostream/random.hpp"

namespace twostream {

struct TrainConfig {
    double m = 0.99;
    double tau = 0.05;
    int queue_capacity = 1024;  // N_q
    int batch_size = 32;        // N_b
    int epochs = 10;
    double base_lr = 5e-5;
    int warmup_epochs_at_base = 5;  // epochs at base_lr before linear decay
    double weight_decay = 0.02;
    double vision_mask_rate = 0.40;
    double text_mask_rate = 0.15;
    bool amf_enabled = true;
    double amf_k = 2.0;
    int amf_warmup_min = 100;
    LossWeights weights;
    // Whether contrastive globals come from the masked online pass instead of
    // a separate clean pass.
    bool contrastive_from_masked = false;
    uint64_t seed = 0;

    void validate() const {
        if (m < 0.0 || m > 1.0) throw ConfigError("train config: m must lie in [0,1]");
        if (tau <= 0.0) throw ConfigError("train config: tau must be positive");
        if (batch_size < 1 || queue_capacity < 1 || epochs < 1)
            throw ConfigError("train config: sizes must be positive");
        if (batch_size > queue_capacity)
            throw ConfigError("train config: batch_size must not exceed queue_capacity");
        if (vision_mask_rate < 0.0 || vision_mask_rate >= 1.0 || text_mask_rate < 0.0 ||
            text_mask_rate >= 1.0)
            throw ConfigError("train config: mask rates must lie in [0,1)");
        if (amf_warmup_min < 1) throw ConfigError("train config: amf_warmup_min must be >= 1");
        if (base_lr <= 0.0) throw ConfigError("train config: base_lr must be positive");
    }
};

// Adam with decoupled weight decay; betas (0.9, 0.999), eps 1e-8.
struct OptimizerState {
    std::vector<std::vector<double>> m1;
    std::vector<std::vector<double>> m2;
    int64_t t = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    void init(const std::vector<Tensor*>& params) {
        m1.clear();
        m2.clear();
        for (Tensor* p : params) {
            m1.emplace_back(p->numel(), 0.0);
            m2.emplace_back(p->numel(), 0.0);
        }
        t = 0;
    }
};

inline void adam_update(OptimizerState& opt, const std::vector<Tensor*>& params, double lr,
                        double weight_decay) {
    if (opt.m1.size() != params.size())
        throw std::invalid_argument("adam_update: optimizer state not aligned with parameters");
    opt.t += 1;
    const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.t));
    const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.t));
    for (size_t p = 0; p < params.size(); ++p) {
        Tensor& param = *params[p];
        if (opt.m1[p].size() != param.numel())
            throw std::invalid_argument("adam_update: parameter shape changed under optimizer");
        param.ensure_grad();
        auto& vals = param.mutable_values();
        const auto& grad = param.grad();
        auto& m1 = opt.m1[p];
        auto& m2 = opt.m2[p];
        for (size_t i = 0; i < vals.size(); ++i) {
            m1[i] = opt.beta1 * m1[i] + (1.0 - opt.beta1) * grad[i];
            m2[i] = opt.beta2 * m2[i] + (1.0 - opt.beta2) * grad[i] * grad[i];
            const double mhat = m1[i] / bc1;
            const double vhat = m2[i] / bc2;
            vals[i] -= lr * (mhat / (std::sqrt(vhat) + opt.eps) + weight_decay * vals[i]);
        }
    }
}

// base_lr through the warm epochs, then linear decay hitting 0 at the last
// step. With epochs <= warmup the schedule is flat.
inline double lr_at(int64_t step, const TrainConfig& cfg, int64_t steps_per_epoch,
                    int64_t total_steps) {
    const int64_t warm_steps = static_cast<int64_t>(cfg.warmup_epochs_at_base) * steps_per_epoch;
    if (step < warm_steps || total_steps <= warm_steps) return cfg.base_lr;
    const double span = static_cast<double>(total_steps - warm_steps);
    return cfg.base_lr * static_cast<double>(total_steps - 1 - step) / span;
}

struct MaskSets {
    std::vector<int> vision;
    std::vector<int> text;
};

// Vision: exactly round(rate * P) positions, uniform without replacement.
// Text: independent Bernoulli per token, redrawn once if empty so the token
// loss usually has at least one position to predict.
inline MaskSets sample_masks(const PairedSample& sample, const TrainConfig& cfg,
                             std::mt19937_64& rng) {
    MaskSets masks;
    const int p = static_cast<int>(sample.image_tokens.size());
    const int n_vision = static_cast<int>(std::lround(cfg.vision_mask_rate * p));
    if (n_vision > 0) {
        std::vector<int> positions(p);
        std::iota(positions.begin(), positions.end(), 0);
        for (int i = 0; i < n_vision; ++i) {
            std::uniform_int_distribution<int> pick(i, p - 1);
            std::swap(positions[i], positions[pick(rng)]);
        }
        masks.vision.assign(positions.begin(), positions.begin() + n_vision);
        std::sort(masks.vision.begin(), masks.vision.end());
    }
    if (cfg.text_mask_rate > 0.0) {
        std::bernoulli_distribution coin(cfg.text_mask_rate);
        for (int attempt = 0; attempt < 2 && masks.text.empty(); ++attempt) {
            for (int j = 0; j < static_cast<int>(sample.text_tokens.size()); ++j)
                if (coin(rng)) masks.text.push_back(j);
        }
    }
    return masks;
}

struct StepResult {
    LossBreakdown breakdown;
    bool skipped = false;            // B* was empty: no loss, no update
    int negatives_used = 0;          // queue length visible to this step's losses
    std::optional<AmfStats> amf;     // present once the similarity queue warmed up
    std::vector<int> kept;           // batch-local indices kept by the filter
    std::vector<int> dropped;        // batch-local indices dropped by the filter
};

namespace detail {

inline Tensor rows_at(const Tensor& t, const std::vector<int>& idx) {
    Tensor out({static_cast<int>(idx.size()), t.cols()});
    for (size_t i = 0; i < idx.size(); ++i)
        for (int j = 0; j < t.cols(); ++j)
            out.mutable_values()[i * t.cols() + j] = t.at(idx[i], j);
    return out;
}

}  // namespace detail

inline StepResult train_step(TwoStreamModel& model, MomentumState& momentum,
                             NegativeQueuePair& queue, OptimizerState& opt,
                             const std::vector<const PairedSample*>& batch,
                             const TrainConfig& cfg, double lr, std::mt19937_64& mask_rng) {
    const int n = static_cast<int>(batch.size());
    if (n < 1) throw std::invalid_argument("train_step: empty batch");
    StepResult res;

    // (1) momentum-encode the full batch, both streams, unmasked
    std::vector<Tensor> im_rows, tx_rows;
    im_rows.reserve(n);
    tx_rows.reserve(n);
    for (const PairedSample* s : batch) {
        im_rows.push_back(momentum_encode(momentum, Stream::vision, s->image_tokens));
        tx_rows.push_back(momentum_encode(momentum, Stream::text, s->text_tokens));
    }
    Tensor im_mom = concat_rows(nullptr, im_rows);
    Tensor tx_mom = concat_rows(nullptr, tx_rows);

    // (2) adaptive momentum filter
    res.kept.resize(n);
    std::iota(res.kept.begin(), res.kept.end(), 0);
    if (cfg.amf_enabled) {
        res.amf = queue.amf_stats(cfg.amf_k, cfg.amf_warmup_min);
        if (res.amf) {
            res.kept = filter_batch(im_mom, tx_mom, res.amf->threshold);
            std::vector<char> kept_flag(n, 0);
            for (int i : res.kept) kept_flag[i] = 1;
            for (int i = 0; i < n; ++i)
                if (!kept_flag[i]) res.dropped.push_back(i);
        }
    }
    res.breakdown.kept_fraction = static_cast<double>(res.kept.size()) / n;
    res.negatives_used = queue.size();

    const bool need_token =
        cfg.weights.token != 0.0 && (cfg.vision_mask_rate > 0.0 || cfg.text_mask_rate > 0.0);

    if (!res.kept.empty()) {
        // (3) masks for the kept subset
        std::vector<MaskSets> masks(res.kept.size());
        if (need_token)
            for (size_t i = 0; i < res.kept.size(); ++i)
                masks[i] = sample_masks(*batch[res.kept[i]], cfg, mask_rng);

        // (4) online passes: clean pass for globals, masked pass for states
        Graph g;
        std::vector<Tensor> v_globals, t_globals;
        std::vector<Tensor> cmvm_logits, cmlm_logits;
        std::vector<int> cmvm_targets, cmlm_targets;
        for (size_t i = 0; i < res.kept.size(); ++i) {
            const PairedSample& s = *batch[res.kept[i]];
            const auto& vm = masks[i].vision;
            const auto& tm = masks[i].text;

            EncodeOutput v_masked, t_masked;
            bool have_v_masked = false, have_t_masked = false;
            if (need_token && !vm.empty()) {
                v_masked = encode(&g, model.vision, s.image_tokens, vm);
                have_v_masked = true;
            }
            if (need_token && !tm.empty()) {
                t_masked = encode(&g, model.text, s.text_tokens, tm);
                have_t_masked = true;
            }

            EncodeOutput v_clean, t_clean;
            if (cfg.contrastive_from_masked && have_v_masked) {
                v_clean = v_masked;
            } else {
                v_clean = encode(&g, model.vision, s.image_tokens);
            }
            if (cfg.contrastive_from_masked && have_t_masked) {
                t_clean = t_masked;
            } else {
                t_clean = encode(&g, model.text, s.text_tokens);
            }
            v_globals.push_back(v_clean.global);
            t_globals.push_back(t_clean.global);

            if (have_v_masked) {
                cmvm_logits.push_back(
                    predict_masked_vision(&g, model, v_masked.states, vm, t_clean.global));
                for (int pos : vm) cmvm_targets.push_back(s.image_tokens[pos]);
            }
            if (have_t_masked) {
                cmlm_logits.push_back(
                    predict_masked_text(&g, model, t_masked.states, tm, v_clean.global));
                for (int pos : tm) cmlm_targets.push_back(s.text_tokens[pos]);
            }
        }

        Tensor f_v = concat_rows(&g, v_globals);
        Tensor f_l = concat_rows(&g, t_globals);
        Tensor pos_l = detail::rows_at(tx_mom, res.kept);  // momentum positives, constants
        Tensor pos_v = detail::rows_at(im_mom, res.kept);
        auto [neg_v, neg_l] = queue.snapshot();

        // (5) losses on B* against the pre-push snapshot
        LossTerms terms;
        terms.l_i2t = loss_i2t(&g, f_v, pos_l, neg_l, cfg.tau);
        terms.l_t2i = loss_t2i(&g, f_l, pos_v, neg_v, cfg.tau);
        if (cfg.weights.task != 0.0)
            terms.l_task = loss_task(&g, f_v, pos_l, neg_l, f_l, pos_v, neg_v, cfg.tau);
        if (!cmvm_logits.empty())
            terms.l_cmvm = loss_cmvm(&g, concat_rows(&g, cmvm_logits), cmvm_targets);
        if (!cmlm_logits.empty())
            terms.l_cmlm = loss_cmlm(&g, concat_rows(&g, cmlm_logits), cmlm_targets);
        auto [total, breakdown] = total_loss(&g, terms, cfg.weights);
        breakdown.kept_fraction = res.breakdown.kept_fraction;
        res.breakdown = breakdown;

        // (6) backward + optimizer
        zero_all_grads(model);
        g.backward(total);
        adam_update(opt, model.params(), lr, cfg.weight_decay);
    } else {
        res.skipped = true;
    }

    // (7) EMA update, (8) push the whole batch
    momentum_update(model, momentum, cfg.m);
    queue.push_batch(im_mom, tx_mom);
    return res;
}

struct MetricsRecord {
    int64_t step = 0;
    int epoch = 0;
    double lr = 0.0;
    LossBreakdown breakdown;
    bool skipped = false;
    int queue_len = 0;  // negatives visible to this step (pre-push)
    std::optional<AmfStats> amf;
    std::vector<int> dropped_ids;  // corpus indices dropped by the filter
};

struct TrainResult {
    int64_t total_steps = 0;
    std::vector<MetricsRecord> records;
};

// Seeded per-epoch shuffle, fixed-size batches (remainder dropped so every
// step sees exactly batch_size pairs), one metrics record per step.
inline TrainResult run_training(TwoStreamModel& model, MomentumState& momentum,
                                const Corpus& corpus, const TrainConfig& cfg) {
    cfg.validate();
    if (corpus.empty()) throw ConfigError("run_training: empty corpus");
    if (static_cast<int>(corpus.size()) < cfg.batch_size)
        throw ConfigError("run_training: corpus smaller than one batch");

    NegativeQueuePair queue(cfg.queue_capacity, model.cfg.vision.d_out);
    OptimizerState opt;
    opt.init(model.params());
    auto mask_rng = make_rng(derive_seed(cfg.seed, "masks"));

    const int64_t steps_per_epoch = static_cast<int64_t>(corpus.size()) / cfg.batch_size;
    const int64_t total_steps = steps_per_epoch * cfg.epochs;

    TrainResult result;
    result.records.reserve(total_steps);
    std::vector<int> order(corpus.size());
    std::iota(order.begin(), order.end(), 0);

    int64_t step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        auto shuffle_rng = make_rng(derive_seed(cfg.seed, "epoch-shuffle", epoch));
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        for (int64_t b = 0; b < steps_per_epoch; ++b) {
            std::vector<const PairedSample*> batch;
            std::vector<int> batch_ids;
            batch.reserve(cfg.batch_size);
            for (int i = 0; i < cfg.batch_size; ++i) {
                const int idx = order[b * cfg.batch_size + i];
                batch.push_back(&corpus[idx]);
                batch_ids.push_back(idx);
            }
            const double lr = lr_at(step, cfg, steps_per_epoch, total_steps);
            StepResult sr = train_step(model, momentum, queue, opt, batch, cfg, lr, mask_rng);

            MetricsRecord rec;
            rec.step = step;
            rec.epoch = epoch;
            rec.lr = lr;
            rec.breakdown = sr.breakdown;
            rec.skipped = sr.skipped;
            rec.queue_len = sr.negatives_used;
            rec.amf = sr.amf;
            for (int local : sr.dropped) rec.dropped_ids.push_back(batch_ids[local]);
            result.records.push_back(std::move(rec));
            ++step;
        }
    }
    result.total_steps = step;
    return result;
}

}  // namespace twostream
