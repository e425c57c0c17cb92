#pragma once

// Paired FIFO negative queues of momentum embeddings plus the derived
// similarity queue, and the adaptive momentum filter statistics. The three
// buffers advance in lockstep; the per-index pairing is what makes the
// similarity queue a sample of the corpus similarity distribution.

#include <cmath>
#include <cstddef>
#include <deque>
#include <optional>
#include <stdexcept>
#include <vector>

#include "twostream/tensor.hpp"

namespace twostream {

struct AmfStats {
    double mu = 0.0;
    double sigma = 0.0;  // population standard deviation
    double threshold = 0.0;  // mu - k * sigma
};

class NegativeQueuePair {
public:
    explicit NegativeQueuePair(int capacity, int dim)
        : capacity_(capacity), dim_(dim) {
        if (capacity < 1 || dim < 1)
            throw std::invalid_argument("queue: capacity and dim must be positive");
    }

    int capacity() const { return capacity_; }
    int dim() const { return dim_; }
    int size() const { return static_cast<int>(sims_.size()); }

    // Appends aligned momentum embedding pairs, evicting the earliest entries
    // once past capacity. Similarities are fixed at push time; queue contents
    // are gradient-free constants so they can never go stale.
    void push_batch(const Tensor& image_momentum, const Tensor& text_momentum) {
        if (image_momentum.rows() != text_momentum.rows())
            throw std::invalid_argument("queue: image/text batch row counts differ");
        if (image_momentum.rows() == 0) return;
        if (image_momentum.cols() != dim_ || text_momentum.cols() != dim_)
            throw std::invalid_argument("queue: embedding width does not match queue dim");
        for (int i = 0; i < image_momentum.rows(); ++i) {
            if (size() == capacity_) {
                image_.pop_front();
                text_.pop_front();
                sims_.pop_front();
            }
            std::vector<double> iv(dim_), tv(dim_);
            double dot = 0.0;
            for (int j = 0; j < dim_; ++j) {
                iv[j] = image_momentum.at(i, j);
                tv[j] = text_momentum.at(i, j);
                dot += iv[j] * tv[j];
            }
            image_.push_back(std::move(iv));
            text_.push_back(std::move(tv));
            sims_.push_back(dot);
        }
    }

    // Immutable copies in arrival order; loss code consumes these, never the
    // live buffers.
    std::pair<Tensor, Tensor> snapshot() const {
        const int n = size();
        Tensor img({n, dim_});
        Tensor txt({n, dim_});
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < dim_; ++j) {
                img.mutable_values()[static_cast<size_t>(i) * dim_ + j] = image_[i][j];
                txt.mutable_values()[static_cast<size_t>(i) * dim_ + j] = text_[i][j];
            }
        return {img, txt};
    }

    std::vector<double> similarities() const {
        return std::vector<double>(sims_.begin(), sims_.end());
    }

    // Mean / population-std / threshold of the similarity queue. Returns
    // nothing until warmup_min entries have arrived; filtering is disabled
    // until then.
    std::optional<AmfStats> amf_stats(double k, int warmup_min) const {
        if (size() < warmup_min || size() == 0) return std::nullopt;
        double mu = 0.0;
        for (double s : sims_) mu += s;
        mu /= size();
        double var = 0.0;
        for (double s : sims_) var += (s - mu) * (s - mu);
        var /= size();
        AmfStats st;
        st.mu = mu;
        st.sigma = std::sqrt(var);
        st.threshold = mu - k * st.sigma;
        return st;
    }

private:
    int capacity_;
    int dim_;
    std::deque<std::vector<double>> image_;
    std::deque<std::vector<double>> text_;
    std::deque<double> sims_;
};

// Indices whose paired momentum similarity strictly exceeds the threshold,
// in original order. An empty result is legal; the trainer decides policy.
inline std::vector<int> filter_batch(const Tensor& batch_image_momentum,
                                     const Tensor& batch_text_momentum, double threshold) {
    if (batch_image_momentum.rows() != batch_text_momentum.rows() ||
        batch_image_momentum.cols() != batch_text_momentum.cols())
        throw std::invalid_argument("filter_batch: batch shapes differ");
    std::vector<int> kept;
    const int n = batch_image_momentum.rows(), d = batch_image_momentum.cols();
    for (int i = 0; i < n; ++i) {
        double dot = 0.0;
        for (int j = 0; j < d; ++j)
            dot += batch_image_momentum.at(i, j) * batch_text_momentum.at(i, j);
        if (dot > threshold) kept.push_back(i);
    }
    return kept;
}

}  // namespace twostream
