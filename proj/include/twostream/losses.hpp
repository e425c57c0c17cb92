#pragma once

// Training objectives: the instance-level contrastive pair against queue
// negatives, the task-level symmetric-KL alignment between the two retrieval
// distributions, and the token-level masked prediction losses. Momentum
// embeddings and queue snapshots enter as gradient-free constants; gradients
// reach online embeddings only.

#include <stdexcept>
#include <vector>

#include "twostream/errors.hpp"
#include "twostream/tensor.hpp"

namespace twostream {

struct LossBreakdown {
    double l_i2t = 0.0;
    double l_t2i = 0.0;
    double l_inst = 0.0;
    double l_task = 0.0;
    double l_cmvm = 0.0;
    double l_cmlm = 0.0;
    double l_token = 0.0;
    double total = 0.0;
    double kept_fraction = 1.0;  // |B*| / |B|
};

struct LossWeights {
    double inst = 1.0;
    double token = 1.0;
    double task = 1.0;
};

// Probability rows over [positive, queue entries], positive first.
struct TaskDistributions {
    std::vector<double> d_i2t;
    std::vector<double> d_t2i;
};

namespace detail {

// [pos_sim, neg sims] / tau, one row per sample. Works with an empty queue.
inline Tensor contrastive_logits(Graph* g, const Tensor& online, const Tensor& momentum_pos,
                                 const Tensor& negatives, double tau) {
    if (tau <= 0.0) throw ConfigError("contrastive loss: tau must be positive");
    if (online.rows() != momentum_pos.rows() || online.cols() != momentum_pos.cols())
        throw std::invalid_argument("contrastive loss: positive pair shape mismatch");
    if (negatives.rows() > 0 && negatives.cols() != online.cols())
        throw std::invalid_argument("contrastive loss: negative width mismatch");
    Tensor pos = row_sum(g, mul(g, online, momentum_pos));
    Tensor z = pos;
    if (negatives.rows() > 0) {
        Tensor negs = matmul(g, online, transpose(g, negatives));
        z = concat_cols(g, {pos, negs});
    }
    return scale(g, z, 1.0 / tau);
}

inline Tensor nll_from_logits(Graph* g, const Tensor& logits) {
    Tensor lse = logsumexp_rows(g, logits);
    Tensor pos = slice_cols(g, logits, 0, 1);
    return mean(g, sub(g, lse, pos));
}

}  // namespace detail

// -(1/N) sum_i log( exp(f_v_i . f_hat_l_i / tau) / (pos + sum_j exp(f_v_i . q_l_j / tau)) )
// With an empty queue the positive carries all the mass and the loss is 0.
inline Tensor loss_i2t(Graph* g, const Tensor& f_v, const Tensor& f_hat_l, const Tensor& neg_l,
                       double tau) {
    return detail::nll_from_logits(g, detail::contrastive_logits(g, f_v, f_hat_l, neg_l, tau));
}

inline Tensor loss_t2i(Graph* g, const Tensor& f_l, const Tensor& f_hat_v, const Tensor& neg_v,
                       double tau) {
    return detail::nll_from_logits(g, detail::contrastive_logits(g, f_l, f_hat_v, neg_v, tau));
}

// Per-sample retrieval-task distributions (positive first, then aligned queue
// entries). Plain values; the differentiable path lives in loss_task.
inline TaskDistributions task_distributions(const Tensor& f_v_i, const Tensor& f_hat_l_i,
                                            const Tensor& neg_l, const Tensor& f_l_i,
                                            const Tensor& f_hat_v_i, const Tensor& neg_v,
                                            double tau) {
    if (tau <= 0.0) throw ConfigError("task_distributions: tau must be positive");
    if (neg_l.rows() != neg_v.rows())
        throw std::invalid_argument("task_distributions: queue lengths differ");
    auto softmax_sims = [tau](const Tensor& query, const Tensor& pos, const Tensor& negs) {
        const int d = query.cols();
        std::vector<double> z(1 + negs.rows());
        double dot = 0.0;
        for (int j = 0; j < d; ++j) dot += query.at(0, j) * pos.at(0, j);
        z[0] = dot / tau;
        for (int i = 0; i < negs.rows(); ++i) {
            double nd = 0.0;
            for (int j = 0; j < d; ++j) nd += query.at(0, j) * negs.at(i, j);
            z[1 + i] = nd / tau;
        }
        double mx = z[0];
        for (double v : z) mx = std::max(mx, v);
        double sum = 0.0;
        for (double& v : z) {
            v = std::exp(v - mx);
            sum += v;
        }
        for (double& v : z) v /= sum;
        return z;
    };
    TaskDistributions out;
    out.d_i2t = softmax_sims(f_v_i, f_hat_l_i, neg_l);
    out.d_t2i = softmax_sims(f_l_i, f_hat_v_i, neg_v);
    return out;
}

// (1/N) sum_i [ KL(D_i2t || D_t2i) + KL(D_t2i || D_i2t) ], where both
// distributions are softmaxes over the positive plus index-aligned queue
// entries. Gradient flows to the online embeddings on both sides.
inline Tensor loss_task(Graph* g, const Tensor& f_v, const Tensor& f_hat_l, const Tensor& neg_l,
                        const Tensor& f_l, const Tensor& f_hat_v, const Tensor& neg_v,
                        double tau) {
    if (neg_l.rows() != neg_v.rows())
        throw std::invalid_argument("loss_task: queue lengths differ");
    const int n = f_v.rows();
    Tensor z_i2t = detail::contrastive_logits(g, f_v, f_hat_l, neg_l, tau);
    Tensor z_t2i = detail::contrastive_logits(g, f_l, f_hat_v, neg_v, tau);
    Tensor p = softmax_rows(g, z_i2t);
    Tensor q = softmax_rows(g, z_t2i);
    // sym KL row sum = sum_j (p - q) * (log p - log q)
    Tensor dpq = sub(g, p, q);
    Tensor dlog = sub(g, log(g, p), log(g, q));
    return scale(g, sum(g, mul(g, dpq, dlog)), 1.0 / n);
}

// Mean negative log-softmax of the target id per masked position.
inline Tensor loss_cmvm(Graph* g, const Tensor& logits, const std::vector<int>& targets) {
    if (logits.rows() < 1) throw std::invalid_argument("loss_cmvm: needs at least one row");
    if (static_cast<int>(targets.size()) != logits.rows())
        throw std::invalid_argument("loss_cmvm: one target per masked position required");
    Tensor lse = logsumexp_rows(g, logits);
    Tensor tgt = take_per_row(g, logits, targets);
    return mean(g, sub(g, lse, tgt));
}

inline Tensor loss_cmlm(Graph* g, const Tensor& logits, const std::vector<int>& targets) {
    return loss_cmvm(g, logits, targets);
}

struct LossTerms {
    Tensor l_i2t = Tensor::scalar(0.0);
    Tensor l_t2i = Tensor::scalar(0.0);
    Tensor l_cmvm = Tensor::scalar(0.0);
    Tensor l_cmlm = Tensor::scalar(0.0);
    Tensor l_task = Tensor::scalar(0.0);
};

// Unit-weight composition by default; the three coefficients exist so
// ablations can zero out whole interaction levels.
inline std::pair<Tensor, LossBreakdown> total_loss(Graph* g, const LossTerms& terms,
                                                   const LossWeights& w) {
    Tensor l_inst = add(g, terms.l_i2t, terms.l_t2i);
    Tensor l_token = add(g, terms.l_cmvm, terms.l_cmlm);
    Tensor total = add(g, add(g, scale(g, l_inst, w.inst), scale(g, l_token, w.token)),
                       scale(g, terms.l_task, w.task));
    LossBreakdown b;
    b.l_i2t = terms.l_i2t.item();
    b.l_t2i = terms.l_t2i.item();
    b.l_inst = l_inst.item();
    b.l_cmvm = terms.l_cmvm.item();
    b.l_cmlm = terms.l_cmlm.item();
    b.l_token = l_token.item();
    b.l_task = terms.l_task.item();
    b.total = total.item();
    return {total, b};
}

}  // namespace twostream
