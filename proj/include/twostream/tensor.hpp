#pragma once

// Dense 2-d tensors (64-bit, row-major) with tape-based reverse-mode
// differentiation. Deliberately small: just the operations the token
// encoders and loss functions need, plus a finite-difference checker.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "twostream/errors.hpp"

namespace twostream {

struct TensorData {
    std::vector<int> shape;
    std::vector<double> values;
    std::vector<double> grad;  // empty until backward touches this tensor
};

inline size_t numel_of(const std::vector<int>& shape) {
    size_t n = 1;
    for (int d : shape) {
        if (d < 0) throw std::invalid_argument("tensor: negative dimension");
        n *= static_cast<size_t>(d);
    }
    return n;
}

// Cheap shared handle onto tensor storage. Values are immutable after an op
// creates them; only the grad buffer accumulates afterwards.
class Tensor {
public:
    Tensor() : d_(std::make_shared<TensorData>()) { d_->shape = {0, 0}; }

    explicit Tensor(std::vector<int> shape) : d_(std::make_shared<TensorData>()) {
        d_->shape = std::move(shape);
        d_->values.assign(numel_of(d_->shape), 0.0);
    }

    Tensor(std::vector<int> shape, std::vector<double> values)
        : d_(std::make_shared<TensorData>()) {
        if (numel_of(shape) != values.size())
            throw std::invalid_argument("tensor: shape does not match value count");
        d_->shape = std::move(shape);
        d_->values = std::move(values);
    }

    static Tensor scalar(double v) { return Tensor({1, 1}, {v}); }

    static Tensor row(std::vector<double> v) {
        int n = static_cast<int>(v.size());
        return Tensor({1, n}, std::move(v));
    }

    const std::vector<int>& shape() const { return d_->shape; }
    size_t numel() const { return d_->values.size(); }
    int rows() const { return dim2().first; }
    int cols() const { return dim2().second; }

    double at(int i, int j) const { return d_->values[static_cast<size_t>(i) * cols() + j]; }
    double item() const {
        if (numel() != 1) throw std::invalid_argument("tensor: item() on non-scalar");
        return d_->values[0];
    }

    const std::vector<double>& values() const { return d_->values; }
    std::vector<double>& mutable_values() { return d_->values; }

    bool has_grad() const { return !d_->grad.empty(); }
    const std::vector<double>& grad() const { return d_->grad; }
    double grad_at(int i, int j) const {
        return d_->grad.empty() ? 0.0 : d_->grad[static_cast<size_t>(i) * cols() + j];
    }

    void ensure_grad() {
        if (d_->grad.empty()) d_->grad.assign(d_->values.size(), 0.0);
    }
    void zero_grad() { d_->grad.assign(d_->values.size(), 0.0); }
    void drop_grad() { d_->grad.clear(); }

    // Fresh storage with the same values and no gradient history.
    Tensor detach() const { return Tensor(d_->shape, d_->values); }

    bool all_finite() const {
        for (double v : d_->values)
            if (!std::isfinite(v)) return false;
        return true;
    }

    std::shared_ptr<TensorData> data() const { return d_; }

private:
    std::pair<int, int> dim2() const {
        if (d_->shape.size() != 2)
            throw std::invalid_argument("tensor: expected 2-d shape");
        return {d_->shape[0], d_->shape[1]};
    }

    std::shared_ptr<TensorData> d_;
};

// Ordered record of executed operations. Backward replays the tape in exact
// reverse execution order; running backward twice without reset is an error.
class Graph {
public:
    void record(std::function<void()> backward_fn) {
        tape_.push_back(std::move(backward_fn));
    }

    size_t size() const { return tape_.size(); }

    void backward(const Tensor& loss) {
        if (ran_backward_)
            throw std::logic_error("graph: backward already ran; reset first");
        if (loss.numel() != 1)
            throw std::invalid_argument("graph: backward requires a scalar loss");
        ran_backward_ = true;
        auto d = loss.data();
        if (d->grad.empty()) d->grad.assign(1, 0.0);
        d->grad[0] += 1.0;
        for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) (*it)();
    }

    void reset() {
        tape_.clear();
        ran_backward_ = false;
    }

private:
    std::vector<std::function<void()>> tape_;
    bool ran_backward_ = false;
};

namespace detail {

inline void check_2d(const Tensor& t, const char* who) {
    if (t.shape().size() != 2)
        throw std::invalid_argument(std::string(who) + ": expected 2-d tensor");
}

inline std::pair<int, int> rc(const Tensor& t) { return {t.rows(), t.cols()}; }

// out-grad empty means no consumer contributed; nothing to propagate.
inline bool no_outgrad(const std::shared_ptr<TensorData>& out) {
    return out->grad.empty();
}

inline void ensure(const std::shared_ptr<TensorData>& d) {
    if (d->grad.empty()) d->grad.assign(d->values.size(), 0.0);
}

}  // namespace detail

inline Tensor matmul(Graph* g, const Tensor& a, const Tensor& b) {
    detail::check_2d(a, "matmul");
    detail::check_2d(b, "matmul");
    const int m = a.rows(), k = a.cols(), k2 = b.rows(), n = b.cols();
    if (k != k2) throw std::invalid_argument("matmul: inner dimensions disagree");
    Tensor out({m, n});
    {
        const double* A = a.values().data();
        const double* B = b.values().data();
        double* C = out.mutable_values().data();
        for (int i = 0; i < m; ++i) {
            const double* arow = A + static_cast<size_t>(i) * k;
            double* crow = C + static_cast<size_t>(i) * n;
            for (int kk = 0; kk < k; ++kk) {
                const double av = arow[kk];
                if (av == 0.0) continue;
                const double* brow = B + static_cast<size_t>(kk) * n;
                for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        }
    }
    if (g) {
        auto ad = a.data(), bd = b.data(), od = out.data();
        g->record([ad, bd, od, m, k, n] {
            if (detail::no_outgrad(od)) return;
            const double* G = od->grad.data();
            detail::ensure(ad);
            detail::ensure(bd);
            const double* B = bd->values.data();
            const double* A = ad->values.data();
            double* dA = ad->grad.data();
            double* dB = bd->grad.data();
            for (int i = 0; i < m; ++i) {
                const double* grow = G + static_cast<size_t>(i) * n;
                const double* arow = A + static_cast<size_t>(i) * k;
                double* darow = dA + static_cast<size_t>(i) * k;
                for (int kk = 0; kk < k; ++kk) {
                    const double* brow = B + static_cast<size_t>(kk) * n;
                    double acc = 0.0;
                    for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
                    darow[kk] += acc;
                    const double av = arow[kk];
                    if (av == 0.0) continue;
                    double* dbrow = dB + static_cast<size_t>(kk) * n;
                    for (int j = 0; j < n; ++j) dbrow[j] += av * grow[j];
                }
            }
        });
    }
    return out;
}

inline Tensor transpose(Graph* g, const Tensor& a) {
    detail::check_2d(a, "transpose");
    const int m = a.rows(), n = a.cols();
    Tensor out({n, m});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            out.mutable_values()[static_cast<size_t>(j) * m + i] = a.at(i, j);
    if (g) {
        auto ad = a.data(), od = out.data();
        g->record([ad, od, m, n] {
            if (detail::no_outgrad(od)) return;
            detail::ensure(ad);
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j)
                    ad->grad[static_cast<size_t>(i) * n + j] +=
                        od->grad[static_cast<size_t>(j) * m + i];
        });
    }
    return out;
}

// add/mul accept equal shapes or a [1,n] second operand broadcast across rows.
inline Tensor add(Graph* g, const Tensor& a, const Tensor& b) {
    detail::check_2d(a, "add");
    detail::check_2d(b, "add");
    const int m = a.rows(), n = a.cols();
    const bool bcast = (b.rows() == 1 && m != 1);
    if ((!bcast && (b.rows() != m || b.cols() != n)) || (bcast && b.cols() != n))
        throw std::invalid_argument("add: shape mismatch");
    Tensor out({m, n});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            out.mutable_values()[static_cast<size_t>(i) * n + j] =
                a.at(i, j) + b.at(bcast ? 0 : i, j);
    if (g) {
        auto ad = a.data(), bd = b.data(), od = out.data();
        g->record([ad, bd, od, m, n, bcast] {
            if (detail::no_outgrad(od)) return;
            detail::ensure(ad);
            detail::ensure(bd);
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) {
                    const double gv = od->grad[static_cast<size_t>(i) * n + j];
                    ad->grad[static_cast<size_t>(i) * n + j] += gv;
                    bd->grad[bcast ? j : static_cast<size_t>(i) * n + j] += gv;
                }
        });
    }
    return out;
}

inline Tensor mul(Graph* g, const Tensor& a, const Tensor& b) {
    detail::check_2d(a, "mul");
    detail::check_2d(b, "mul");
    const int m = a.rows(), n = a.cols();
    const bool bcast = (b.rows() == 1 && m != 1);
    if ((!bcast && (b.rows() != m || b.cols() != n)) || (bcast && b.cols() != n))
        throw std::invalid_argument("mul: shape mismatch");
    Tensor out({m, n});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            out.mutable_values()[static_cast<size_t>(i) * n + j] =
                a.at(i, j) * b.at(bcast ? 0 : i, j);
    if (g) {
        auto ad = a.data(), bd = b.data(), od = out.data();
        g->record([ad, bd, od, m, n, bcast] {
            if (detail::no_outgrad(od)) return;
            detail::ensure(ad);
            detail::ensure(bd);
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) {
                    const size_t ij = static_cast<size_t>(i) * n + j;
                    const size_t bj = bcast ? j : ij;
                    const double gv = od->grad[ij];
                    ad->grad[ij] += gv * bd->values[bj];
                    bd->grad[bj] += gv * ad->values[ij];
                }
        });
    }
    return out;
}

inline Tensor scale(Graph* g, const Tensor& a, double c) {
    detail::check_2d(a, "scale");
    Tensor out(a.shape());
    for (size_t i = 0; i < a.numel(); ++i) out.mutable_values()[i] = a.values()[i] * c;
    if (g) {
        auto ad = a.data(), od = out.data();
        g->record([ad, od, c] {
            if (detail::no_outgrad(od)) return;
            detail::ensure(ad);
            for (size_t i = 0; i < ad->grad.size(); ++i) ad->grad[i] += c * od->grad[i];
        });
    }
    return out;
}

inline Tensor sub(Graph* g, const Tensor& a, const Tensor& b) {
    return add(g, a, scale(g, b, -1.0));
}

inline Tensor exp(Graph* g, const Tensor& a) {
    Tensor out(a.shape());
    for (size_t i = 0; i < a.numel(); ++i) out.mutable_values()[i] = std::exp(a.values()[i]);
    if (g) {
        auto ad = a.data(), od = out.data();
        g->record([ad, od] {
            if (detail::no_outgrad(od)) return;
            detail::ensure(ad);
            for (size_t i = 0; i < ad->grad.size(); ++i)
                ad->grad[i] += od->values[i] * od->grad[i];
        });
    }
    return out;
}

inline Tensor log(Graph* g, const Tensor& a) {
    Tensor out(a.shape());
    for (size_t i = 0; i < a.numel(); ++i) {
        if (a.values()[i] <= 0.0)
            throw std::domain_error("log: non-positive input");
        out.mutable_values()[i] = std::log(a.values()[i]);
    }
    if (g) {
        auto ad = a.data(), od = out.data();
        g->record([ad, od] {
            if (detail::no_outgrad(od)) return;
            detail::ensure(ad);
            for (size_t i = 0; i < ad->grad.size(); ++i)
                ad->grad[i] += od->grad[i] / ad->values[i];
        });
    }
    return out;
}

inline Tensor gelu(Graph* g, const Tensor& a) {
    constexpr double inv_sqrt2 = 0.7071067811865475244;
    constexpr double inv_sqrt2pi = 0.3989422804014326779;
    Tensor out(a.shape());
    for (size_t i = 0; i < a.numel(); ++i) {
        const double x = a.values()[i];
        out.mutable_values()[i] = 0.5 * x * (1.0 + std::erf(x * inv_sqrt2));
    }
    if (g) {
        auto ad = a.data(), od = out.data();
        g->record([ad, od] {
            if (detail::no_outgrad(od)) return;
            detail::ensure(ad);
            for (size_t i = 0; i < ad->grad.size(); ++i) {
                const double x = ad->values[i];
                const double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
                const double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
                ad->grad[i] += od->grad[i] * (cdf + x * pdf);
            }
        });
    }
    return out;
}

inline Tensor mean(Graph* g, const Tensor& a) {
    detail::check_2d(a, "mean");
    if (a.numel() == 0) throw std::invalid_argument("mean: empty tensor");
    double s = std::accumulate(a.values().begin(), a.values().end(), 0.0);
    Tensor out = Tensor::scalar(s / static_cast<double>(a.numel()));
    if (g) {
        auto ad = a.data(), od = out.data();
        const double inv_n = 1.0 / static_cast<double>(a.numel());
        g->record([ad, od, inv_n] {
            if (detail::no_outgrad(od)) return;
            detail::ensure(ad);
            const double gv = od->grad[0] * inv_n;
            for (double& x : ad->grad) x += gv;
        });
    }
    return out;
}

inline Tensor sum(Graph* g, const Tensor& a) {
    detail::check_2d(a, "sum");
    double s = std::accumulate(a.values().begin(), a.values().end(), 0.0);
    Tensor out = Tensor::scalar(s);
    if (g) {
        auto ad = a.data(), od = out.data();
        g->record([ad, od] {
            if (detail::no_outgrad(od)) return;
            detail::ensure(ad);
            const double gv = od->grad[0];
            for (double& x : ad->grad) x += gv;
        });
    }
    return out;
}

inline Tensor row_sum(Graph* g, const Tensor& a) {
    detail::check_2d(a, "row_sum");
    const int m = a.rows(), n = a.cols();
    Tensor out({m, 1});
    for (int i = 0; i < m; ++i) {
        double s = 0.0;
        for (int j = 0; j < n; ++j) s += a.at(i, j);
        out.mutable_values()[i] = s;
    }
    if (g) {
        auto ad = a.data(), od = out.data();
        g->record([ad, od, m, n] {
            if (detail::no_outgrad(od)) return;
            detail::ensure(ad);
            for (int i = 0; i < m; ++i) {
                const double gv = od->grad[i];
                for (int j = 0; j < n; ++j)
                    ad->grad[static_cast<size_t>(i) * n + j] += gv;
            }
        });
    }
    return out;
}

// Row-stable softmax (max subtraction). Rows sum to 1 within 1e-12.
inline Tensor softmax_rows(Graph* g, const Tensor& a) {
    detail::check_2d(a, "softmax_rows");
    const int m = a.rows(), n = a.cols();
    if (n == 0) throw std::invalid_argument("softmax_rows: zero-width rows");
    Tensor out({m, n});
    for (int i = 0; i < m; ++i) {
        double mx = a.at(i, 0);
        for (int j = 1; j < n; ++j) mx = std::max(mx, a.at(i, j));
        double z = 0.0;
        for (int j = 0; j < n; ++j) {
            const double e = std::exp(a.at(i, j) - mx);
            out.mutable_values()[static_cast<size_t>(i) * n + j] = e;
            z += e;
        }
        for (int j = 0; j < n; ++j)
            out.mutable_values()[static_cast<size_t>(i) * n + j] /= z;
    }
    if (g) {
        auto ad = a.data(), od = out.data();
        g->record([ad, od, m, n] {
            if (detail::no_outgrad(od)) return;
            detail::ensure(ad);
            for (int i = 0; i < m; ++i) {
                const double* y = od->values.data() + static_cast<size_t>(i) * n;
                const double* dy = od->grad.data() + static_cast<size_t>(i) * n;
                double dot = 0.0;
                for (int j = 0; j < n; ++j) dot += y[j] * dy[j];
                double* dx = ad->grad.data() + static_cast<size_t>(i) * n;
                for (int j = 0; j < n; ++j) dx[j] += y[j] * (dy[j] - dot);
            }
        });
    }
    return out;
}

// Per-row log(sum(exp(x))) with max subtraction; the stable core of every loss.
inline Tensor logsumexp_rows(Graph* g, const Tensor& a) {
    detail::check_2d(a, "logsumexp_rows");
    const int m = a.rows(), n = a.cols();
    if (n == 0) throw std::invalid_argument("logsumexp_rows: zero-width rows");
    Tensor out({m, 1});
    for (int i = 0; i < m; ++i) {
        double mx = a.at(i, 0);
        for (int j = 1; j < n; ++j) mx = std::max(mx, a.at(i, j));
        double z = 0.0;
        for (int j = 0; j < n; ++j) z += std::exp(a.at(i, j) - mx);
        out.mutable_values()[i] = mx + std::log(z);
    }
    if (g) {
        auto ad = a.data(), od = out.data();
        g->record([ad, od, m, n] {
            if (detail::no_outgrad(od)) return;
            detail::ensure(ad);
            for (int i = 0; i < m; ++i) {
                const double lse = od->values[i];
                const double gv = od->grad[i];
                if (gv == 0.0) continue;
                for (int j = 0; j < n; ++j)
                    ad->grad[static_cast<size_t>(i) * n + j] +=
                        gv * std::exp(ad->values[static_cast<size_t>(i) * n + j] - lse);
            }
        });
    }
    return out;
}

inline Tensor l2_normalize_rows(Graph* g, const Tensor& a) {
    detail::check_2d(a, "l2_normalize_rows");
    const int m = a.rows(), n = a.cols();
    constexpr double kEps = 1e-12;
    Tensor out({m, n});
    std::vector<double> norms(m);
    for (int i = 0; i < m; ++i) {
        double s = 0.0;
        for (int j = 0; j < n; ++j) s += a.at(i, j) * a.at(i, j);
        const double nrm = std::sqrt(s);
        if (nrm < kEps)
            throw std::domain_error("l2_normalize_rows: degenerate (near-zero) row");
        norms[i] = nrm;
        for (int j = 0; j < n; ++j)
            out.mutable_values()[static_cast<size_t>(i) * n + j] = a.at(i, j) / nrm;
    }
    if (g) {
        auto ad = a.data(), od = out.data();
        g->record([ad, od, m, n, norms = std::move(norms)] {
            if (detail::no_outgrad(od)) return;
            detail::ensure(ad);
            for (int i = 0; i < m; ++i) {
                const double* y = od->values.data() + static_cast<size_t>(i) * n;
                const double* dy = od->grad.data() + static_cast<size_t>(i) * n;
                double dot = 0.0;
                for (int j = 0; j < n; ++j) dot += y[j] * dy[j];
                double* dx = ad->grad.data() + static_cast<size_t>(i) * n;
                for (int j = 0; j < n; ++j) dx[j] += (dy[j] - y[j] * dot) / norms[i];
            }
        });
    }
    return out;
}

// Row-wise standardization to mean 0, variance 1 (no affine part; gains and
// biases are applied by callers via mul/add so their gradients stay simple).
inline Tensor layer_norm(Graph* g, const Tensor& a) {
    detail::check_2d(a, "layer_norm");
    const int m = a.rows(), n = a.cols();
    if (n == 0) throw std::invalid_argument("layer_norm: zero-width rows");
    constexpr double kEps = 1e-12;
    Tensor out({m, n});
    std::vector<double> inv_std(m);
    for (int i = 0; i < m; ++i) {
        double mu = 0.0;
        for (int j = 0; j < n; ++j) mu += a.at(i, j);
        mu /= n;
        double var = 0.0;
        for (int j = 0; j < n; ++j) {
            const double d = a.at(i, j) - mu;
            var += d * d;
        }
        var /= n;
        const double is = 1.0 / std::sqrt(var + kEps);
        inv_std[i] = is;
        for (int j = 0; j < n; ++j)
            out.mutable_values()[static_cast<size_t>(i) * n + j] = (a.at(i, j) - mu) * is;
    }
    if (g) {
        auto ad = a.data(), od = out.data();
        g->record([ad, od, m, n, inv_std = std::move(inv_std)] {
            if (detail::no_outgrad(od)) return;
            detail::ensure(ad);
            for (int i = 0; i < m; ++i) {
                const double* xh = od->values.data() + static_cast<size_t>(i) * n;
                const double* dy = od->grad.data() + static_cast<size_t>(i) * n;
                double mean_dy = 0.0, mean_dyxh = 0.0;
                for (int j = 0; j < n; ++j) {
                    mean_dy += dy[j];
                    mean_dyxh += dy[j] * xh[j];
                }
                mean_dy /= n;
                mean_dyxh /= n;
                double* dx = ad->grad.data() + static_cast<size_t>(i) * n;
                for (int j = 0; j < n; ++j)
                    dx[j] += inv_std[i] * (dy[j] - mean_dy - xh[j] * mean_dyxh);
            }
        });
    }
    return out;
}

// Gathers rows of `table` by id; backward scatter-adds into the table grad.
// Works on any tensor, which also covers selecting masked-position states.
inline Tensor embedding_lookup(Graph* g, const Tensor& table, const std::vector<int>& ids) {
    detail::check_2d(table, "embedding_lookup");
    const int v = table.rows(), d = table.cols();
    for (int id : ids)
        if (id < 0 || id >= v)
            throw std::out_of_range("embedding_lookup: id " + std::to_string(id) +
                                    " outside [0," + std::to_string(v) + ")");
    const int m = static_cast<int>(ids.size());
    Tensor out({m, d});
    for (int i = 0; i < m; ++i)
        std::copy_n(table.values().data() + static_cast<size_t>(ids[i]) * d, d,
                    out.mutable_values().data() + static_cast<size_t>(i) * d);
    if (g) {
        auto td = table.data(), od = out.data();
        g->record([td, od, ids, d] {
            if (detail::no_outgrad(od)) return;
            detail::ensure(td);
            for (size_t i = 0; i < ids.size(); ++i) {
                double* dst = td->grad.data() + static_cast<size_t>(ids[i]) * d;
                const double* src = od->grad.data() + i * d;
                for (int j = 0; j < d; ++j) dst[j] += src[j];
            }
        });
    }
    return out;
}

// Picks one entry per row (e.g. the target logit); backward scatters.
inline Tensor take_per_row(Graph* g, const Tensor& a, const std::vector<int>& ids) {
    detail::check_2d(a, "take_per_row");
    const int m = a.rows(), n = a.cols();
    if (static_cast<int>(ids.size()) != m)
        throw std::invalid_argument("take_per_row: one id per row required");
    for (int id : ids)
        if (id < 0 || id >= n) throw std::out_of_range("take_per_row: column id out of range");
    Tensor out({m, 1});
    for (int i = 0; i < m; ++i) out.mutable_values()[i] = a.at(i, ids[i]);
    if (g) {
        auto ad = a.data(), od = out.data();
        g->record([ad, od, ids, n] {
            if (detail::no_outgrad(od)) return;
            detail::ensure(ad);
            for (size_t i = 0; i < ids.size(); ++i)
                ad->grad[i * n + ids[i]] += od->grad[i];
        });
    }
    return out;
}

inline Tensor concat_rows(Graph* g, const std::vector<Tensor>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: empty input");
    const int n = parts[0].cols();
    int m = 0;
    for (const auto& p : parts) {
        detail::check_2d(p, "concat_rows");
        if (p.cols() != n) throw std::invalid_argument("concat_rows: column mismatch");
        m += p.rows();
    }
    Tensor out({m, n});
    int r = 0;
    for (const auto& p : parts) {
        std::copy(p.values().begin(), p.values().end(),
                  out.mutable_values().begin() + static_cast<size_t>(r) * n);
        r += p.rows();
    }
    if (g) {
        std::vector<std::shared_ptr<TensorData>> pd;
        pd.reserve(parts.size());
        for (const auto& p : parts) pd.push_back(p.data());
        auto od = out.data();
        g->record([pd, od, n] {
            if (detail::no_outgrad(od)) return;
            size_t off = 0;
            for (const auto& d : pd) {
                detail::ensure(d);
                for (size_t i = 0; i < d->grad.size(); ++i) d->grad[i] += od->grad[off + i];
                off += d->values.size();
            }
        });
    }
    return out;
}

inline Tensor concat_cols(Graph* g, const std::vector<Tensor>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: empty input");
    const int m = parts[0].rows();
    int n = 0;
    for (const auto& p : parts) {
        detail::check_2d(p, "concat_cols");
        if (p.rows() != m) throw std::invalid_argument("concat_cols: row mismatch");
        n += p.cols();
    }
    Tensor out({m, n});
    int c = 0;
    for (const auto& p : parts) {
        for (int i = 0; i < m; ++i)
            std::copy_n(p.values().data() + static_cast<size_t>(i) * p.cols(), p.cols(),
                        out.mutable_values().data() + static_cast<size_t>(i) * n + c);
        c += p.cols();
    }
    if (g) {
        std::vector<std::shared_ptr<TensorData>> pd;
        std::vector<int> widths;
        for (const auto& p : parts) {
            pd.push_back(p.data());
            widths.push_back(p.cols());
        }
        auto od = out.data();
        g->record([pd, od, widths, m, n] {
            if (detail::no_outgrad(od)) return;
            int c = 0;
            for (size_t k = 0; k < pd.size(); ++k) {
                detail::ensure(pd[k]);
                const int w = widths[k];
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < w; ++j)
                        pd[k]->grad[static_cast<size_t>(i) * w + j] +=
                            od->grad[static_cast<size_t>(i) * n + c + j];
                c += w;
            }
        });
    }
    return out;
}

inline Tensor slice_rows(Graph* g, const Tensor& a, int r0, int r1) {
    detail::check_2d(a, "slice_rows");
    const int m = a.rows(), n = a.cols();
    if (r0 < 0 || r1 > m || r0 > r1) throw std::out_of_range("slice_rows: bad range");
    Tensor out({r1 - r0, n});
    std::copy_n(a.values().data() + static_cast<size_t>(r0) * n,
                static_cast<size_t>(r1 - r0) * n, out.mutable_values().data());
    if (g) {
        auto ad = a.data(), od = out.data();
        g->record([ad, od, r0, n] {
            if (detail::no_outgrad(od)) return;
            detail::ensure(ad);
            for (size_t i = 0; i < od->grad.size(); ++i)
                ad->grad[static_cast<size_t>(r0) * n + i] += od->grad[i];
        });
    }
    return out;
}

inline Tensor slice_cols(Graph* g, const Tensor& a, int c0, int c1) {
    detail::check_2d(a, "slice_cols");
    const int m = a.rows(), n = a.cols();
    if (c0 < 0 || c1 > n || c0 > c1) throw std::out_of_range("slice_cols: bad range");
    const int w = c1 - c0;
    Tensor out({m, w});
    for (int i = 0; i < m; ++i)
        std::copy_n(a.values().data() + static_cast<size_t>(i) * n + c0, w,
                    out.mutable_values().data() + static_cast<size_t>(i) * w);
    if (g) {
        auto ad = a.data(), od = out.data();
        g->record([ad, od, m, n, c0, w] {
            if (detail::no_outgrad(od)) return;
            detail::ensure(ad);
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < w; ++j)
                    ad->grad[static_cast<size_t>(i) * n + c0 + j] +=
                        od->grad[static_cast<size_t>(i) * w + j];
        });
    }
    return out;
}

inline Tensor randn(std::mt19937_64& rng, int rows, int cols, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    Tensor t({rows, cols});
    for (auto& v : t.mutable_values()) v = dist(rng);
    return t;
}

// Compares the analytic gradient of a scalar-valued computation against
// central finite differences; returns the worst relative error. Errors on
// gradients below 1 in magnitude are measured absolutely (denominator
// max(1,|analytic|,|numeric|)) so step-size truncation does not dominate.
template <typename F>
double grad_check(F&& f, const Tensor& x, double eps = 1e-5) {
    Tensor x0 = x.detach();
    Graph g;
    Tensor loss = f(&g, x0);
    g.backward(loss);
    std::vector<double> analytic(x0.numel(), 0.0);
    if (x0.has_grad()) analytic = x0.grad();

    double worst = 0.0;
    for (size_t i = 0; i < x0.numel(); ++i) {
        Tensor xp = x0.detach();
        Tensor xm = x0.detach();
        xp.mutable_values()[i] += eps;
        xm.mutable_values()[i] -= eps;
        const double fp = f(nullptr, xp).item();
        const double fm = f(nullptr, xm).item();
        const double numeric = (fp - fm) / (2.0 * eps);
        const double denom = std::max({std::fabs(analytic[i]), std::fabs(numeric), 1.0});
        worst = std::max(worst, std::fabs(analytic[i] - numeric) / denom);
    }
    return worst;
}

}  // namespace twostream
