#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <deque>
#include <random>

#include "twostream/queue.hpp"

using namespace twostream;

namespace {

Tensor rows_from(const std::vector<std::vector<double>>& rows) {
    const int n = static_cast<int>(rows.size());
    const int d = n ? static_cast<int>(rows[0].size()) : 0;
    Tensor t({n, d});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) t.mutable_values()[static_cast<size_t>(i) * d + j] = rows[i][j];
    return t;
}

// unit vector in the plane spanned by axes (a,b) at angle theta
std::vector<double> planar_unit(int d, int a, int b, double theta) {
    std::vector<double> v(d, 0.0);
    v[a] = std::cos(theta);
    v[b] = std::sin(theta);
    return v;
}

}  // namespace

TEST_CASE("snapshot of empty queue") {
    NegativeQueuePair q(8, 4);
    auto [img, txt] = q.snapshot();
    REQUIRE(img.rows() == 0);
    REQUIRE(txt.rows() == 0);
    REQUIRE(img.cols() == 4);
}

TEST_CASE("fifo order and capacity eviction") {
    NegativeQueuePair q(4, 2);
    auto tag = [](double serial) { return std::vector<double>{serial, 0.0}; };

    q.push_batch(rows_from({tag(0), tag(1), tag(2)}), rows_from({tag(0), tag(1), tag(2)}));
    REQUIRE(q.size() == 3);
    q.push_batch(rows_from({tag(3), tag(4), tag(5)}), rows_from({tag(3), tag(4), tag(5)}));
    REQUIRE(q.size() == 4);

    auto [img, txt] = q.snapshot();
    // 3rd entry of the first batch, then all of the second
    REQUIRE(img.at(0, 0) == 2.0);
    REQUIRE(img.at(1, 0) == 3.0);
    REQUIRE(img.at(2, 0) == 4.0);
    REQUIRE(img.at(3, 0) == 5.0);

    // snapshot is a copy
    img.mutable_values()[0] = 99.0;
    REQUIRE(q.snapshot().first.at(0, 0) == 2.0);
}

TEST_CASE("push of zero rows is a no-op; mismatched rows rejected") {
    NegativeQueuePair q(4, 2);
    q.push_batch(Tensor({0, 2}), Tensor({0, 2}));
    REQUIRE(q.size() == 0);
    REQUIRE_THROWS_AS(q.push_batch(Tensor({2, 2}), Tensor({1, 2})), std::invalid_argument);
}

TEST_CASE("amf_stats matches direct arithmetic") {
    NegativeQueuePair q(8, 2);
    // pairs engineered so dots are 0.1, 0.2, 0.3, 0.4
    std::vector<std::vector<double>> img, txt;
    for (double s : {0.1, 0.2, 0.3, 0.4}) {
        img.push_back({1.0, 0.0});
        txt.push_back({s, std::sqrt(1.0 - s * s)});
    }
    q.push_batch(rows_from(img), rows_from(txt));

    auto st = q.amf_stats(2.0, 1);
    REQUIRE(st.has_value());
    REQUIRE_THAT(st->mu, Catch::Matchers::WithinAbs(0.25, 1e-12));
    REQUIRE_THAT(st->sigma, Catch::Matchers::WithinAbs(std::sqrt(0.0125), 1e-12));
    REQUIRE_THAT(st->threshold, Catch::Matchers::WithinAbs(0.25 - 2.0 * std::sqrt(0.0125), 1e-12));

    auto k0 = q.amf_stats(0.0, 1);
    REQUIRE_THAT(k0->threshold, Catch::Matchers::WithinAbs(k0->mu, 1e-15));

    // below warmup: not ready
    REQUIRE_FALSE(q.amf_stats(2.0, 100).has_value());
}

TEST_CASE("amf_stats zero variance") {
    NegativeQueuePair q(8, 2);
    std::vector<std::vector<double>> img(5, std::vector<double>{1.0, 0.0});
    std::vector<std::vector<double>> txt(5, std::vector<double>{0.5, std::sqrt(0.75)});
    q.push_batch(rows_from(img), rows_from(txt));
    auto st = q.amf_stats(2.0, 1);
    REQUIRE(st->sigma == 0.0);
    REQUIRE_THAT(st->threshold, Catch::Matchers::WithinAbs(0.5, 1e-12));
}

TEST_CASE("filter_batch strict inequality") {
    Tensor img = rows_from({{1, 0}, {1, 0}, {1, 0}});
    double s0 = 0.05, s1 = -0.10, s2 = 0.30;
    Tensor txt = rows_from({{s0, std::sqrt(1 - s0 * s0)},
                            {s1, std::sqrt(1 - s1 * s1)},
                            {s2, std::sqrt(1 - s2 * s2)}});

    REQUIRE(filter_batch(img, txt, -2.0) == std::vector<int>{0, 1, 2});
    REQUIRE(filter_batch(img, txt, 2.0).empty());
    const double threshold = 0.25 - 2.0 * std::sqrt(0.0125);  // continues amf example
    REQUIRE(filter_batch(img, txt, threshold) == std::vector<int>{0, 2});

    // boundary-equal similarity is dropped
    REQUIRE(filter_batch(img, txt, s0) == std::vector<int>{2});
}

TEST_CASE("randomized operation sequences preserve alignment, capacity, order") {
    std::mt19937_64 rng(2024);
    const int d = 6;
    for (int trial = 0; trial < 300; ++trial) {
        std::uniform_int_distribution<int> cap_dist(1, 12);
        const int cap = cap_dist(rng);
        NegativeQueuePair q(cap, d);

        // reference model: deque of serial-tagged pairs
        struct Entry {
            std::vector<double> img, txt;
            long serial;
        };
        std::deque<Entry> ref;
        std::vector<long> evicted;
        long serial = 0;

        std::uniform_int_distribution<int> nops(1, 20);
        const int ops = nops(rng);
        for (int op = 0; op < ops; ++op) {
            std::uniform_int_distribution<int> batch_dist(0, 5);
            const int nb = batch_dist(rng);
            std::vector<std::vector<double>> img, txt;
            std::uniform_real_distribution<double> angle(0.0, 6.28318);
            for (int i = 0; i < nb; ++i) {
                img.push_back(planar_unit(d, 0, 1, angle(rng)));
                txt.push_back(planar_unit(d, 0, 1, angle(rng)));
                ref.push_back({img.back(), txt.back(), serial++});
                if (static_cast<int>(ref.size()) > cap) {
                    evicted.push_back(ref.front().serial);
                    ref.pop_front();
                }
            }
            q.push_batch(rows_from(img), rows_from(txt));

            REQUIRE(q.size() == static_cast<int>(ref.size()));
            REQUIRE(q.size() <= cap);
            auto [qi, qt] = q.snapshot();
            auto sims = q.similarities();
            for (int i = 0; i < q.size(); ++i) {
                double dot = 0.0;
                for (int j = 0; j < d; ++j) {
                    REQUIRE(qi.at(i, j) == ref[i].img[j]);
                    REQUIRE(qt.at(i, j) == ref[i].txt[j]);
                    dot += qi.at(i, j) * qt.at(i, j);
                }
                REQUIRE_THAT(sims[i], Catch::Matchers::WithinAbs(dot, 1e-12));
            }
        }
        // evicted serials form a prefix of arrival order
        for (size_t i = 0; i < evicted.size(); ++i)
            REQUIRE(evicted[i] == static_cast<long>(i));

        // stats equal brute-force recomputation over snapshot contents
        if (q.size() > 0) {
            auto st = q.amf_stats(2.0, 1);
            auto sims = q.similarities();
            double mu = 0.0;
            for (double s : sims) mu += s;
            mu /= sims.size();
            double var = 0.0;
            for (double s : sims) var += (s - mu) * (s - mu);
            var /= sims.size();
            REQUIRE_THAT(st->mu, Catch::Matchers::WithinAbs(mu, 1e-12));
            REQUIRE_THAT(st->sigma, Catch::Matchers::WithinAbs(std::sqrt(var), 1e-12));
        }
    }
}
