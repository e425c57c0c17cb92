#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <random>

#include "twostream/checkpoint.hpp"
#include "twostream/encoder.hpp"
#include "twostream/losses.hpp"

using namespace twostream;

namespace {

ModelConfig small_config() {
    ModelConfig cfg;
    cfg.vision = EncoderConfig{.vocab = 32, .max_len = 8, .depth = 2, .d = 16, .heads = 2,
                               .ff_mult = 2, .d_out = 16};
    cfg.text = EncoderConfig{.vocab = 24, .max_len = 10, .depth = 2, .d = 16, .heads = 2,
                             .ff_mult = 2, .d_out = 16};
    return cfg;
}

std::vector<int> random_tokens(std::mt19937_64& rng, int len, int vocab) {
    std::uniform_int_distribution<int> d(0, vocab - 1);
    std::vector<int> t(len);
    for (auto& x : t) x = d(rng);
    return t;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    double m = 0.0;
    for (size_t i = 0; i < a.numel(); ++i)
        m = std::max(m, std::fabs(a.values()[i] - b.values()[i]));
    return m;
}

}  // namespace

TEST_CASE("globals are unit-norm for online and momentum paths") {
    auto [model, momentum] = init_model(small_config(), 3);
    std::mt19937_64 rng(100);
    for (int i = 0; i < 100; ++i) {
        auto tokens = random_tokens(rng, 6, model.cfg.vision.vocab);
        Tensor g1 = encode(nullptr, model.vision, tokens).global;
        Tensor g2 = momentum_encode(momentum, Stream::vision, tokens);
        double n1 = 0.0, n2 = 0.0;
        for (int j = 0; j < g1.cols(); ++j) {
            n1 += g1.at(0, j) * g1.at(0, j);
            n2 += g2.at(0, j) * g2.at(0, j);
        }
        REQUIRE_THAT(std::sqrt(n1), Catch::Matchers::WithinAbs(1.0, 1e-9));
        REQUIRE_THAT(std::sqrt(n2), Catch::Matchers::WithinAbs(1.0, 1e-9));
    }
}

TEST_CASE("full mask erases token identity") {
    auto [model, momentum] = init_model(small_config(), 4);
    std::vector<int> all{0, 1, 2, 3, 4, 5};
    auto a = encode(nullptr, model.vision, {1, 5, 9, 11, 2, 7}, all);
    auto b = encode(nullptr, model.vision, {30, 0, 21, 4, 18, 25}, all);
    REQUIRE(max_abs_diff(a.global, b.global) == 0.0);
    REQUIRE(max_abs_diff(a.states, b.states) == 0.0);
}

TEST_CASE("empty mask ignores the mask embedding") {
    auto [model, momentum] = init_model(small_config(), 5);
    std::vector<int> tokens{3, 1, 4, 1, 5};
    auto before = encode(nullptr, model.vision, tokens);
    for (auto& v : model.vision.mask_embedding.mutable_values()) v += 17.0;
    auto after = encode(nullptr, model.vision, tokens);
    REQUIRE(max_abs_diff(before.global, after.global) == 0.0);
    REQUIRE(max_abs_diff(before.states, after.states) == 0.0);
}

TEST_CASE("encode validates tokens, lengths and mask positions") {
    auto [model, momentum] = init_model(small_config(), 6);
    REQUIRE_THROWS_AS(encode(nullptr, model.vision, {99}), std::out_of_range);
    REQUIRE_THROWS_AS(encode(nullptr, model.vision, std::vector<int>(9, 1)), std::out_of_range);
    REQUIRE_THROWS_AS(encode(nullptr, model.vision, {1, 2}, {2}), std::out_of_range);
    REQUIRE_THROWS_AS(encode(nullptr, model.vision, {}), std::invalid_argument);
}

TEST_CASE("encode is permutation-sensitive") {
    auto [model, momentum] = init_model(small_config(), 7);
    auto a = encode(nullptr, model.vision, {1, 2, 3, 4});
    auto b = encode(nullptr, model.vision, {4, 3, 2, 1});
    REQUIRE(max_abs_diff(a.global, b.global) > 1e-8);
}

TEST_CASE("momentum twin equals online at init and drifts after updates") {
    auto [model, momentum] = init_model(small_config(), 8);
    std::vector<int> tokens{2, 4, 6};
    Tensor online = encode(nullptr, model.vision, tokens).global;
    Tensor twin = momentum_encode(momentum, Stream::vision, tokens);
    REQUIRE(max_abs_diff(online, twin) < 1e-12);

    // perturb online (non-uniformly; uniform shifts are norm-invariant),
    // one EMA step at m=0.99: outputs must now differ
    {
        auto& vals = model.vision.token_embedding.mutable_values();
        for (size_t i = 0; i < vals.size(); ++i) vals[i] += 0.5 * (static_cast<int>(i % 3) - 1);
    }
    momentum_update(model, momentum, 0.99);
    Tensor after = momentum_encode(momentum, Stream::vision, tokens);
    REQUIRE(max_abs_diff(after, encode(nullptr, model.vision, tokens).global) > 1e-9);
    REQUIRE(max_abs_diff(after, twin) > 1e-12);
}

TEST_CASE("momentum_update arithmetic") {
    auto [model, momentum] = init_model(small_config(), 9);

    auto online_snapshot = model.vision.token_embedding.detach();
    for (auto& v : model.vision.token_embedding.mutable_values()) v += 1.0;

    // m = 1: twin unchanged
    auto before = momentum.vision.token_embedding.detach();
    momentum_update(model, momentum, 1.0);
    REQUIRE(max_abs_diff(momentum.vision.token_embedding, before) == 0.0);

    // m = 0: exact copy of online
    momentum_update(model, momentum, 0.0);
    REQUIRE(max_abs_diff(momentum.vision.token_embedding, model.vision.token_embedding) == 0.0);

    // forced arithmetic at the default m: p_hat=1, p=0, m=0.99 -> 0.99
    momentum.vision.token_embedding.mutable_values()[0] = 1.0;
    model.vision.token_embedding.mutable_values()[0] = 0.0;
    momentum_update(model, momentum, 0.99);
    REQUIRE_THAT(momentum.vision.token_embedding.values()[0],
                 Catch::Matchers::WithinAbs(0.99, 1e-15));

    // contraction: |p_hat' - p| == m * |p_hat - p|
    auto [m2, mom2] = init_model(small_config(), 10);
    for (auto& v : m2.vision.projection.mutable_values()) v += 0.25;
    std::vector<double> gap_before;
    for (size_t i = 0; i < m2.vision.projection.numel(); ++i)
        gap_before.push_back(mom2.vision.projection.values()[i] -
                             m2.vision.projection.values()[i]);
    momentum_update(m2, mom2, 0.75);
    for (size_t i = 0; i < m2.vision.projection.numel(); ++i) {
        const double gap_after =
            mom2.vision.projection.values()[i] - m2.vision.projection.values()[i];
        REQUIRE_THAT(gap_after, Catch::Matchers::WithinAbs(0.75 * gap_before[i], 1e-15));
    }

    (void)online_snapshot;
}

TEST_CASE("no gradient ever reaches momentum parameters") {
    auto [model, momentum] = init_model(small_config(), 11);
    Graph g;
    std::vector<int> vt{1, 2, 3, 4}, tt{5, 6, 7};
    Tensor f_v = encode(&g, model.vision, vt).global;
    Tensor pos = momentum_encode(momentum, Stream::text, tt);
    Tensor negs = momentum_encode(momentum, Stream::vision, vt);
    Tensor loss = loss_i2t(&g, f_v, pos, negs, 0.1);
    g.backward(loss);

    for (Tensor* p : momentum.params()) {
        if (!p->has_grad()) continue;
        for (double v : p->grad()) REQUIRE(v == 0.0);
    }
    // while online parameters did receive gradient
    bool any = false;
    for (Tensor* p : model.vision.params())
        if (p->has_grad())
            for (double v : p->grad()) any |= (v != 0.0);
    REQUIRE(any);
}

TEST_CASE("masked prediction heads") {
    auto [model, momentum] = init_model(small_config(), 12);
    std::vector<int> vt{1, 2, 3, 4, 5, 6};
    std::vector<int> masked{1, 4};

    Graph g;
    auto enc = encode(&g, model.vision, vt, masked);
    Tensor text_global = momentum_encode(momentum, Stream::text, {1, 2, 3});

    // zero head: uniform logits, loss is exactly ln V
    for (auto& v : model.vision_head.mutable_values()) v = 0.0;
    Tensor logits = predict_masked_vision(&g, model, enc.states, masked, text_global);
    REQUIRE_THAT(loss_cmvm(nullptr, logits, {0, 5}).item(),
                 Catch::Matchers::WithinAbs(std::log(double(model.cfg.vision.vocab)), 1e-12));

    // non-zero head: conditioning on the other stream is live
    auto [model2, momentum2] = init_model(small_config(), 13);
    auto enc2 = encode(nullptr, model2.vision, vt, masked);
    Tensor tg1({1, 16});
    tg1.mutable_values()[0] = 1.0;
    Tensor tg2({1, 16});
    tg2.mutable_values()[1] = 1.0;
    Tensor la = predict_masked_vision(nullptr, model2, enc2.states, masked, tg1);
    Tensor lb = predict_masked_vision(nullptr, model2, enc2.states, masked, tg2);
    REQUIRE(max_abs_diff(la, lb) > 1e-9);

    REQUIRE_THROWS_AS(predict_masked_vision(nullptr, model2, enc2.states, {}, tg1),
                      std::invalid_argument);
}

TEST_CASE("token losses reach both encoders through the cross-modal heads") {
    auto [model, momentum] = init_model(small_config(), 14);
    std::vector<int> vt{1, 2, 3, 4}, tt{5, 6, 7, 8};
    std::vector<int> vmask{0, 2};

    Graph g;
    auto venc = encode(&g, model.vision, vt, vmask);
    auto tenc = encode(&g, model.text, tt);
    Tensor logits = predict_masked_vision(&g, model, venc.states, vmask, tenc.global);
    Tensor loss = loss_cmvm(&g, logits, {vt[0], vt[2]});
    g.backward(loss);

    auto grad_norm = [](std::vector<Tensor*> params) {
        double s = 0.0;
        for (Tensor* p : params)
            if (p->has_grad())
                for (double v : p->grad()) s += v * v;
        return s;
    };
    REQUIRE(grad_norm(model.vision.params()) > 0.0);
    REQUIRE(grad_norm(model.text.params()) > 0.0);
}

TEST_CASE("conditioning fuse map is used when d_out differs from d") {
    ModelConfig cfg = small_config();
    cfg.vision.d_out = 8;
    cfg.text.d_out = 8;
    auto [model, momentum] = init_model(cfg, 15);
    REQUIRE(model.vision_cond_fuse.shape() == std::vector<int>{8, 16});

    std::vector<int> vt{1, 2, 3};
    Graph g;
    auto enc = encode(&g, model.vision, vt, {1});
    Tensor tg = momentum_encode(momentum, Stream::text, {4, 5});
    REQUIRE(tg.cols() == 8);
    Tensor logits = predict_masked_vision(&g, model, enc.states, {1}, tg);
    REQUIRE(logits.cols() == cfg.vision.vocab);
    Tensor loss = loss_cmvm(&g, logits, {0});
    g.backward(loss);
    bool fuse_grad = model.vision_cond_fuse.has_grad();
    REQUIRE(fuse_grad);
}

TEST_CASE("init is deterministic per seed and distinct across seeds") {
    auto [a, am] = init_model(small_config(), 77);
    auto [b, bm] = init_model(small_config(), 77);
    for (size_t i = 0; i < a.params().size(); ++i)
        REQUIRE(a.params()[i]->values() == b.params()[i]->values());

    for (uint64_t s = 0; s < 10; ++s) {
        auto [c, cm] = init_model(small_config(), 1000 + s);
        auto [d, dm] = init_model(small_config(), 2000 + s);
        bool differ = false;
        for (size_t i = 0; i < c.params().size() && !differ; ++i)
            differ = c.params()[i]->values() != d.params()[i]->values();
        REQUIRE(differ);
    }
}

TEST_CASE("checkpoint round-trip is exact") {
    auto [model, momentum] = init_model(small_config(), 21);
    // make the state less trivial than init
    for (auto& v : model.vision.projection.mutable_values()) v *= 1.7;
    momentum_update(model, momentum, 0.5);

    const std::string path = "/tmp/ts_checkpoint_test.json";
    save_checkpoint(path, model, momentum, 123);
    Checkpoint ck = load_checkpoint(path);
    REQUIRE(ck.step == 123);

    auto names_a = model.named_params();
    auto names_b = ck.model.named_params();
    REQUIRE(names_a.size() == names_b.size());
    for (size_t i = 0; i < names_a.size(); ++i) {
        REQUIRE(names_a[i].first == names_b[i].first);
        REQUIRE(names_a[i].second->values() == names_b[i].second->values());
    }
    for (size_t i = 0; i < momentum.params().size(); ++i)
        REQUIRE(momentum.params()[i]->values() == ck.momentum.params()[i]->values());

    // loaded model reproduces forward outputs bit-exactly
    auto before = encode(nullptr, model.vision, {1, 2, 3});
    auto after = encode(nullptr, ck.model.vision, {1, 2, 3});
    REQUIRE(before.global.values() == after.global.values());

    // and a re-save produces an identical file
    const std::string path2 = "/tmp/ts_checkpoint_test2.json";
    save_checkpoint(path2, ck.model, ck.momentum, ck.step);
    std::ifstream f1(path), f2(path2);
    std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    REQUIRE(s1 == s2);
    std::remove(path.c_str());
    std::remove(path2.c_str());

    REQUIRE_THROWS_AS(load_checkpoint("/tmp/ts_no_such_checkpoint.json"), FileError);
}
