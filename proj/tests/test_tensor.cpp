#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "twostream/tensor.hpp"

using namespace twostream;

namespace {

Tensor random_tensor(std::mt19937_64& rng, int rows, int cols, double lo = -2.0, double hi = 2.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    Tensor t({rows, cols});
    for (auto& v : t.mutable_values()) v = dist(rng);
    return t;
}

}  // namespace

TEST_CASE("matmul forward") {
    Tensor eye({2, 2}, {1, 0, 0, 1});
    Tensor b({2, 2}, {5, 6, 7, 8});
    Tensor c = matmul(nullptr, eye, b);
    REQUIRE(c.values() == std::vector<double>{5, 6, 7, 8});

    Tensor a({1, 2}, {1, 2});
    Tensor v({2, 1}, {3, 4});
    REQUIRE(matmul(nullptr, a, v).item() == 11.0);

    Tensor bad({3, 2});
    REQUIRE_THROWS_AS(matmul(nullptr, a, bad), std::invalid_argument);
}

TEST_CASE("matmul gradient vs finite differences") {
    std::mt19937_64 rng(7);
    Tensor b = random_tensor(rng, 3, 4);
    Tensor a0 = random_tensor(rng, 2, 3);
    double err = grad_check(
        [&](Graph* g, const Tensor& a) { return sum(g, matmul(g, a, b)); }, a0);
    REQUIRE(err < 1e-6);

    // closed form: d sum(AB) / dA = ones * B^T
    Graph g;
    Tensor a = a0.detach();
    Tensor loss = sum(&g, matmul(&g, a, b));
    g.backward(loss);
    for (int i = 0; i < 2; ++i)
        for (int k = 0; k < 3; ++k) {
            double expect = 0.0;
            for (int j = 0; j < 4; ++j) expect += b.at(k, j);
            REQUIRE_THAT(a.grad_at(i, k), Catch::Matchers::WithinAbs(expect, 1e-12));
        }
}

TEST_CASE("softmax_rows examples") {
    Tensor t = softmax_rows(nullptr, Tensor::row({0, 0}));
    REQUIRE_THAT(t.at(0, 0), Catch::Matchers::WithinAbs(0.5, 1e-15));
    REQUIRE_THAT(t.at(0, 1), Catch::Matchers::WithinAbs(0.5, 1e-15));

    Tensor big = softmax_rows(nullptr, Tensor::row({1000, 0}));
    REQUIRE(big.all_finite());
    REQUIRE_THAT(big.at(0, 0), Catch::Matchers::WithinAbs(1.0, 1e-12));
    REQUIRE_THAT(big.at(0, 1), Catch::Matchers::WithinAbs(0.0, 1e-12));

    Tensor l = softmax_rows(nullptr, Tensor::row({std::log(1.0), std::log(3.0)}));
    REQUIRE_THAT(l.at(0, 0), Catch::Matchers::WithinAbs(0.25, 1e-12));
    REQUIRE_THAT(l.at(0, 1), Catch::Matchers::WithinAbs(0.75, 1e-12));
}

TEST_CASE("softmax_rows rows sum to one for arbitrary finite input") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        Tensor x = random_tensor(rng, 4, 6, -50.0, 50.0);
        Tensor y = softmax_rows(nullptr, x);
        for (int i = 0; i < 4; ++i) {
            double s = 0.0;
            for (int j = 0; j < 6; ++j) {
                REQUIRE(y.at(i, j) >= 0.0);
                s += y.at(i, j);
            }
            REQUIRE_THAT(s, Catch::Matchers::WithinAbs(1.0, 1e-12));
        }
    }
}

TEST_CASE("l2_normalize_rows") {
    Tensor t = l2_normalize_rows(nullptr, Tensor::row({3, 4}));
    REQUIRE_THAT(t.at(0, 0), Catch::Matchers::WithinAbs(0.6, 1e-15));
    REQUIRE_THAT(t.at(0, 1), Catch::Matchers::WithinAbs(0.8, 1e-15));

    // idempotent on unit rows
    Tensor twice = l2_normalize_rows(nullptr, t);
    for (int j = 0; j < 2; ++j)
        REQUIRE_THAT(twice.at(0, j), Catch::Matchers::WithinAbs(t.at(0, j), 1e-9));

    REQUIRE_THROWS_AS(l2_normalize_rows(nullptr, Tensor::row({0, 0})), std::domain_error);

    std::mt19937_64 rng(3);
    Tensor x0 = random_tensor(rng, 3, 5);
    double err = grad_check(
        [](Graph* g, const Tensor& x) {
            Tensor y = l2_normalize_rows(g, x);
            return sum(g, mul(g, y, y.detach()));
        },
        x0);
    REQUIRE(err < 1e-5);
}

TEST_CASE("embedding_lookup gather and scatter") {
    Tensor table({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor out = embedding_lookup(nullptr, table, {1, 0, 1});
    REQUIRE(out.values() == std::vector<double>{4, 5, 6, 1, 2, 3, 4, 5, 6});

    Tensor empty = embedding_lookup(nullptr, table, {});
    REQUIRE(empty.rows() == 0);
    REQUIRE(empty.cols() == 3);

    REQUIRE_THROWS_AS(embedding_lookup(nullptr, table, {2}), std::out_of_range);

    Graph g;
    Tensor gathered = embedding_lookup(&g, table, {0, 0});
    Tensor loss = sum(&g, gathered);
    g.backward(loss);
    for (int j = 0; j < 3; ++j) {
        REQUIRE(table.grad_at(0, j) == 2.0);
        REQUIRE(table.grad_at(1, j) == 0.0);
    }
}

TEST_CASE("elementwise suite basics") {
    Tensor x = Tensor::row({-10, -1, 0.5, 10});
    Tensor y = log(nullptr, exp(nullptr, x));
    for (int j = 0; j < 4; ++j)
        REQUIRE_THAT(y.at(0, j), Catch::Matchers::WithinAbs(x.at(0, j), 1e-12));

    REQUIRE(mean(nullptr, Tensor::row({1, 2, 3})).item() == 2.0);
    REQUIRE_THROWS_AS(log(nullptr, Tensor::row({-1.0})), std::domain_error);
    REQUIRE_THROWS_AS(log(nullptr, Tensor::row({0.0})), std::domain_error);
}

TEST_CASE("layer_norm standardizes rows") {
    std::mt19937_64 rng(5);
    Tensor x = random_tensor(rng, 4, 8);
    Tensor y = layer_norm(nullptr, x);
    for (int i = 0; i < 4; ++i) {
        double mu = 0.0, var = 0.0;
        for (int j = 0; j < 8; ++j) mu += y.at(i, j);
        mu /= 8;
        for (int j = 0; j < 8; ++j) var += (y.at(i, j) - mu) * (y.at(i, j) - mu);
        var /= 8;
        REQUIRE_THAT(mu, Catch::Matchers::WithinAbs(0.0, 1e-9));
        REQUIRE_THAT(var, Catch::Matchers::WithinAbs(1.0, 1e-9));
    }
}

TEST_CASE("grad_check examples") {
    Tensor x({1, 2}, {1, 2});
    double err = grad_check(
        [](Graph* g, const Tensor& t) { return sum(g, mul(g, t, t)); }, x);
    REQUIRE(err < 1e-8);

    Graph g;
    Tensor x2 = x.detach();
    Tensor loss = sum(&g, mul(&g, x2, x2));
    g.backward(loss);
    REQUIRE_THAT(x2.grad_at(0, 0), Catch::Matchers::WithinAbs(2.0, 1e-12));
    REQUIRE_THAT(x2.grad_at(0, 1), Catch::Matchers::WithinAbs(4.0, 1e-12));

    // constant function: gradient exactly zero (never touched)
    double cerr = grad_check(
        [](Graph*, const Tensor&) { return Tensor::scalar(3.0); }, x);
    REQUIRE(cerr == 0.0);
}

TEST_CASE("finite-difference sweep over every differentiable op") {
    std::mt19937_64 rng(123);
    auto check = [&](auto f, int rows, int cols, double lo, double hi, double tol = 1e-4) {
        Tensor x = random_tensor(rng, rows, cols, lo, hi);
        REQUIRE(grad_check(f, x) < tol);
    };

    for (int rep = 0; rep < 3; ++rep) {
        check([](Graph* g, const Tensor& x) { return mean(g, exp(g, x)); }, 3, 4, -2, 2);
        check([](Graph* g, const Tensor& x) { return mean(g, log(g, x)); }, 3, 4, 0.5, 2);
        check([](Graph* g, const Tensor& x) { return mean(g, gelu(g, x)); }, 3, 4, -2, 2);
        check([](Graph* g, const Tensor& x) { return mean(g, softmax_rows(g, x)); }, 2, 5, -2, 2);
        check([](Graph* g, const Tensor& x) { return sum(g, logsumexp_rows(g, x)); }, 3, 5, -2, 2);
        check([](Graph* g, const Tensor& x) { return mean(g, layer_norm(g, x)); }, 3, 6, -2, 2);
        check([](Graph* g, const Tensor& x) {
            Tensor ln = layer_norm(g, x);
            return sum(g, mul(g, ln, ln.detach()));
        }, 3, 6, -2, 2);
        check([](Graph* g, const Tensor& x) { return mean(g, transpose(g, x)); }, 3, 4, -2, 2);
        check([](Graph* g, const Tensor& x) { return sum(g, take_per_row(g, x, {1, 0, 2})); },
              3, 4, -2, 2);
        check([](Graph* g, const Tensor& x) {
            return sum(g, slice_cols(g, concat_cols(g, {x, x}), 1, 5));
        }, 3, 4, -2, 2);
        check([](Graph* g, const Tensor& x) {
            return sum(g, slice_rows(g, concat_rows(g, {x, scale(g, x, 2.0)}), 1, 4));
        }, 3, 4, -2, 2);
        check([](Graph* g, const Tensor& x) { return mean(g, row_sum(g, x)); }, 4, 3, -2, 2);
        check([](Graph* g, const Tensor& x) {
            Tensor b = slice_rows(g, x, 0, 1);
            return sum(g, add(g, x, b));
        }, 4, 3, -2, 2);
        check([](Graph* g, const Tensor& x) {
            Tensor b = slice_rows(g, x, 0, 1);
            return sum(g, mul(g, x, b));
        }, 4, 3, -2, 2);
    }
}

TEST_CASE("graph invariants") {
    Tensor x = Tensor::row({1.0, 2.0});
    Graph g;
    Tensor loss = sum(&g, mul(&g, x, x));
    g.backward(loss);
    REQUIRE_THROWS_AS(g.backward(loss), std::logic_error);
    g.reset();

    // non-scalar loss rejected
    Graph g2;
    Tensor y = mul(&g2, x, x);
    REQUIRE_THROWS_AS(g2.backward(y), std::invalid_argument);
}

TEST_CASE("gradient accumulation is additive across independent subgraphs") {
    std::mt19937_64 rng(17);
    Tensor x = random_tensor(rng, 2, 3);
    Tensor y = random_tensor(rng, 2, 3);

    // combined: loss = f(x) + h(y) on a single tape
    Tensor xc = x.detach(), yc = y.detach();
    Graph g;
    Tensor lx = sum(&g, mul(&g, xc, xc));
    Tensor ly = mean(&g, exp(&g, yc));
    g.backward(add(&g, lx, ly));

    // separate tapes
    Tensor xs = x.detach(), ys = y.detach();
    Graph gx, gy;
    gx.backward(sum(&gx, mul(&gx, xs, xs)));
    gy.backward(mean(&gy, exp(&gy, ys)));

    for (size_t i = 0; i < x.numel(); ++i) {
        REQUIRE_THAT(xc.grad()[i], Catch::Matchers::WithinAbs(xs.grad()[i], 1e-15));
        REQUIRE_THAT(yc.grad()[i], Catch::Matchers::WithinAbs(ys.grad()[i], 1e-15));
    }
}

TEST_CASE("tensor reused twice accumulates both contributions") {
    Tensor x = Tensor::row({3.0});
    Graph g;
    Tensor a = mul(&g, x, x);           // x^2
    Tensor b = add(&g, a, x);           // x^2 + x
    g.backward(sum(&g, b));
    REQUIRE_THAT(x.grad()[0], Catch::Matchers::WithinAbs(7.0, 1e-12));  // 2x + 1
}
