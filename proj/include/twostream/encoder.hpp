#pragma once

// Two-stream token encoders. Each stream is a small pre-norm transformer over
// discrete tokens with a leading classification slot; the global embedding is
// the projected, L2-normalized classification state. Momentum twins mirror
// the encoder parameters (projection included, prediction heads excluded) and
// are updated only by EMA, never by gradients.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "twostream/random.hpp"
#include "twostream/tensor.hpp"

namespace twostream {

struct EncoderConfig {
    int vocab = 64;
    int max_len = 16;  // token positions, classification slot excluded
    int depth = 2;
    int d = 32;
    int heads = 2;
    int ff_mult = 2;
    int d_out = 32;

    void validate() const {
        if (vocab < 1 || max_len < 1 || depth < 1 || d < 1 || heads < 1 || ff_mult < 1 ||
            d_out < 1)
            throw std::invalid_argument("encoder config: all sizes must be positive");
        if (d % heads != 0)
            throw std::invalid_argument("encoder config: d must be divisible by heads");
    }
};

struct BlockParams {
    Tensor ln1_g, ln1_b;
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor ln2_g, ln2_b;
    Tensor ff1, ff1_b, ff2, ff2_b;
};

struct EncoderParams {
    EncoderConfig cfg;
    Tensor token_embedding;     // [vocab, d]
    Tensor position_embedding;  // [max_len + 1, d]; row 0 is the class slot
    Tensor mask_embedding;      // [1, d]
    Tensor cls_embedding;       // [1, d]
    std::vector<BlockParams> blocks;
    Tensor final_ln_g, final_ln_b;
    Tensor projection;  // [d, d_out]

    std::vector<std::pair<std::string, Tensor*>> named_params() {
        std::vector<std::pair<std::string, Tensor*>> out = {
            {"token_embedding", &token_embedding},
            {"position_embedding", &position_embedding},
            {"mask_embedding", &mask_embedding},
            {"cls_embedding", &cls_embedding},
        };
        for (size_t b = 0; b < blocks.size(); ++b) {
            auto& blk = blocks[b];
            const std::string p = "block" + std::to_string(b) + ".";
            out.insert(out.end(), {{p + "ln1_g", &blk.ln1_g}, {p + "ln1_b", &blk.ln1_b},
                                   {p + "wq", &blk.wq},       {p + "bq", &blk.bq},
                                   {p + "wk", &blk.wk},       {p + "bk", &blk.bk},
                                   {p + "wv", &blk.wv},       {p + "bv", &blk.bv},
                                   {p + "wo", &blk.wo},       {p + "bo", &blk.bo},
                                   {p + "ln2_g", &blk.ln2_g}, {p + "ln2_b", &blk.ln2_b},
                                   {p + "ff1", &blk.ff1},     {p + "ff1_b", &blk.ff1_b},
                                   {p + "ff2", &blk.ff2},     {p + "ff2_b", &blk.ff2_b}});
        }
        out.push_back({"final_ln_g", &final_ln_g});
        out.push_back({"final_ln_b", &final_ln_b});
        out.push_back({"projection", &projection});
        return out;
    }

    std::vector<Tensor*> params() {
        std::vector<Tensor*> out;
        for (auto& [name, t] : named_params()) out.push_back(t);
        return out;
    }
};

struct ModelConfig {
    EncoderConfig vision;
    EncoderConfig text;

    void validate() const {
        vision.validate();
        text.validate();
        if (vision.d_out != text.d_out)
            throw std::invalid_argument("model config: d_out must match across streams");
    }
};

struct TwoStreamModel {
    ModelConfig cfg;
    EncoderParams vision;
    EncoderParams text;
    Tensor vision_head;  // [d, V_v] masked-vision prediction
    Tensor text_head;    // [d, V_t] masked-text prediction
    // Learned d_out -> d maps for conditioning the masked heads on the other
    // stream's global; empty (identity) when d_out == d.
    Tensor vision_cond_fuse;
    Tensor text_cond_fuse;

    std::vector<std::pair<std::string, Tensor*>> named_params() {
        std::vector<std::pair<std::string, Tensor*>> out;
        for (auto& [name, t] : vision.named_params()) out.push_back({"vision." + name, t});
        for (auto& [name, t] : text.named_params()) out.push_back({"text." + name, t});
        out.push_back({"vision_head", &vision_head});
        out.push_back({"text_head", &text_head});
        if (vision_cond_fuse.numel() > 0) out.push_back({"vision_cond_fuse", &vision_cond_fuse});
        if (text_cond_fuse.numel() > 0) out.push_back({"text_cond_fuse", &text_cond_fuse});
        return out;
    }

    std::vector<Tensor*> params() {
        std::vector<Tensor*> out;
        for (auto& [name, t] : named_params()) out.push_back(t);
        return out;
    }
};

// EMA mirror of both encoders. Prediction heads and fuse maps are excluded:
// only encoder parameters follow the momentum update.
struct MomentumState {
    EncoderParams vision;
    EncoderParams text;

    std::vector<Tensor*> params() {
        std::vector<Tensor*> out = vision.params();
        for (Tensor* t : text.params()) out.push_back(t);
        return out;
    }
};

enum class Stream { vision, text };

struct EncodeOutput {
    Tensor global;  // [1, d_out], unit norm
    Tensor states;  // [len, d], classification slot excluded
};

namespace detail {

inline Tensor linear(Graph* g, const Tensor& x, const Tensor& w, const Tensor& b) {
    return add(g, matmul(g, x, w), b);
}

inline Tensor affine_norm(Graph* g, const Tensor& x, const Tensor& gain, const Tensor& bias) {
    return add(g, mul(g, layer_norm(g, x), gain), bias);
}

inline Tensor attention(Graph* g, const Tensor& x, const BlockParams& blk, int heads) {
    const int d = x.cols();
    const int dh = d / heads;
    Tensor q = linear(g, x, blk.wq, blk.bq);
    Tensor k = linear(g, x, blk.wk, blk.bk);
    Tensor v = linear(g, x, blk.wv, blk.bv);
    std::vector<Tensor> ctx;
    ctx.reserve(heads);
    for (int h = 0; h < heads; ++h) {
        Tensor qh = slice_cols(g, q, h * dh, (h + 1) * dh);
        Tensor kh = slice_cols(g, k, h * dh, (h + 1) * dh);
        Tensor vh = slice_cols(g, v, h * dh, (h + 1) * dh);
        Tensor scores = scale(g, matmul(g, qh, transpose(g, kh)), 1.0 / std::sqrt(double(dh)));
        ctx.push_back(matmul(g, softmax_rows(g, scores), vh));
    }
    Tensor merged = heads == 1 ? ctx[0] : concat_cols(g, ctx);
    return linear(g, merged, blk.wo, blk.bo);
}

}  // namespace detail

// Runs the encoder over a token sequence. Masked positions use the mask
// embedding in place of the token embedding; the classification slot is
// prepended and never masked. Returns the unit-norm projected global plus the
// per-position states after the final block norm.
inline EncodeOutput encode(Graph* g, const EncoderParams& p, const std::vector<int>& tokens,
                           const std::vector<int>& masked_positions = {}) {
    const int s = static_cast<int>(tokens.size());
    if (s < 1) throw std::invalid_argument("encode: empty token sequence");
    if (s > p.cfg.max_len)
        throw std::out_of_range("encode: sequence length " + std::to_string(s) +
                                " exceeds max_len " + std::to_string(p.cfg.max_len));
    for (int pos : masked_positions)
        if (pos < 0 || pos >= s)
            throw std::out_of_range("encode: masked position " + std::to_string(pos) +
                                    " outside sequence");

    Tensor emb = embedding_lookup(g, p.token_embedding, tokens);
    if (!masked_positions.empty()) {
        Tensor keep({s, p.cfg.d});
        Tensor drop({s, p.cfg.d});
        for (auto& v : keep.mutable_values()) v = 1.0;
        for (int pos : masked_positions)
            for (int j = 0; j < p.cfg.d; ++j) {
                keep.mutable_values()[static_cast<size_t>(pos) * p.cfg.d + j] = 0.0;
                drop.mutable_values()[static_cast<size_t>(pos) * p.cfg.d + j] = 1.0;
            }
        Tensor mask_rows = mul(g, drop, p.mask_embedding);  // broadcast then select
        emb = add(g, mul(g, emb, keep), mask_rows);
    }

    Tensor x = concat_rows(g, {p.cls_embedding, emb});
    x = add(g, x, slice_rows(g, p.position_embedding, 0, s + 1));

    for (const auto& blk : p.blocks) {
        Tensor h = add(g, x, detail::attention(g, detail::affine_norm(g, x, blk.ln1_g, blk.ln1_b),
                                               blk, p.cfg.heads));
        Tensor z = detail::affine_norm(g, h, blk.ln2_g, blk.ln2_b);
        Tensor ff = detail::linear(g, gelu(g, detail::linear(g, z, blk.ff1, blk.ff1_b)), blk.ff2,
                                   blk.ff2_b);
        x = add(g, h, ff);
    }
    x = detail::affine_norm(g, x, p.final_ln_g, p.final_ln_b);

    EncodeOutput out;
    out.global = l2_normalize_rows(g, matmul(g, slice_rows(g, x, 0, 1), p.projection));
    out.states = slice_rows(g, x, 1, s + 1);
    return out;
}

// Momentum-path encoding: identical arithmetic with the EMA parameters, no
// masking, and no gradient registration — outputs are constants to any tape.
inline Tensor momentum_encode(const MomentumState& momentum, Stream stream,
                              const std::vector<int>& tokens) {
    const EncoderParams& p = stream == Stream::vision ? momentum.vision : momentum.text;
    return encode(nullptr, p, tokens).global.detach();
}

// p_hat <- m * p_hat + (1 - m) * p for every mirrored encoder parameter.
inline void momentum_update(TwoStreamModel& model, MomentumState& momentum, double m) {
    if (m < 0.0 || m > 1.0)
        throw std::invalid_argument("momentum_update: m must lie in [0,1]");
    auto online = [&] {
        std::vector<Tensor*> out = model.vision.params();
        for (Tensor* t : model.text.params()) out.push_back(t);
        return out;
    }();
    auto mirror = momentum.params();
    if (online.size() != mirror.size())
        throw std::invalid_argument("momentum_update: parameter lists misaligned");
    for (size_t i = 0; i < online.size(); ++i) {
        if (online[i]->shape() != mirror[i]->shape())
            throw std::invalid_argument("momentum_update: parameter shape mismatch");
        auto& src = online[i]->values();
        auto& dst = mirror[i]->mutable_values();
        for (size_t j = 0; j < dst.size(); ++j) dst[j] = m * dst[j] + (1.0 - m) * src[j];
    }
}

namespace detail {

inline Tensor conditioned_states(Graph* g, const Tensor& states,
                                 const std::vector<int>& masked_positions,
                                 const Tensor& other_global, const Tensor& fuse) {
    if (masked_positions.empty())
        throw std::invalid_argument("masked prediction: empty masked position set");
    Tensor gathered = embedding_lookup(g, states, masked_positions);
    Tensor cond = fuse.numel() > 0 ? matmul(g, other_global, fuse) : other_global;
    return add(g, gathered, cond);  // row broadcast across masked positions
}

}  // namespace detail

// Logits for masked image tokens: head applied to (state_j + paired text
// global). Gradients reach both encoders — the text stream through the
// conditioning global, the vision stream through the states.
inline Tensor predict_masked_vision(Graph* g, TwoStreamModel& model, const Tensor& vision_states,
                                    const std::vector<int>& masked_positions,
                                    const Tensor& text_global) {
    return matmul(g,
                  detail::conditioned_states(g, vision_states, masked_positions, text_global,
                                             model.vision_cond_fuse),
                  model.vision_head);
}

inline Tensor predict_masked_text(Graph* g, TwoStreamModel& model, const Tensor& text_states,
                                  const std::vector<int>& masked_positions,
                                  const Tensor& image_global) {
    return matmul(g,
                  detail::conditioned_states(g, text_states, masked_positions, image_global,
                                             model.text_cond_fuse),
                  model.text_head);
}

namespace detail {

inline EncoderParams init_encoder(const EncoderConfig& cfg, std::mt19937_64& rng) {
    constexpr double kInitScale = 0.02;
    EncoderParams p;
    p.cfg = cfg;
    p.token_embedding = randn(rng, cfg.vocab, cfg.d, kInitScale);
    p.position_embedding = randn(rng, cfg.max_len + 1, cfg.d, kInitScale);
    p.mask_embedding = randn(rng, 1, cfg.d, kInitScale);
    p.cls_embedding = randn(rng, 1, cfg.d, kInitScale);
    auto ones_row = [&](int n) {
        Tensor t({1, n});
        for (auto& v : t.mutable_values()) v = 1.0;
        return t;
    };
    for (int b = 0; b < cfg.depth; ++b) {
        BlockParams blk;
        blk.ln1_g = ones_row(cfg.d);
        blk.ln1_b = Tensor({1, cfg.d});
        blk.wq = randn(rng, cfg.d, cfg.d, kInitScale);
        blk.bq = Tensor({1, cfg.d});
        blk.wk = randn(rng, cfg.d, cfg.d, kInitScale);
        blk.bk = Tensor({1, cfg.d});
        blk.wv = randn(rng, cfg.d, cfg.d, kInitScale);
        blk.bv = Tensor({1, cfg.d});
        blk.wo = randn(rng, cfg.d, cfg.d, kInitScale);
        blk.bo = Tensor({1, cfg.d});
        blk.ln2_g = ones_row(cfg.d);
        blk.ln2_b = Tensor({1, cfg.d});
        blk.ff1 = randn(rng, cfg.d, cfg.d * cfg.ff_mult, kInitScale);
        blk.ff1_b = Tensor({1, cfg.d * cfg.ff_mult});
        blk.ff2 = randn(rng, cfg.d * cfg.ff_mult, cfg.d, kInitScale);
        blk.ff2_b = Tensor({1, cfg.d});
        p.blocks.push_back(std::move(blk));
    }
    p.final_ln_g = ones_row(cfg.d);
    p.final_ln_b = Tensor({1, cfg.d});
    p.projection = randn(rng, cfg.d, cfg.d_out, kInitScale);
    return p;
}

inline EncoderParams clone_encoder(EncoderParams& src) {
    EncoderParams dst;
    dst.cfg = src.cfg;
    dst.token_embedding = src.token_embedding.detach();
    dst.position_embedding = src.position_embedding.detach();
    dst.mask_embedding = src.mask_embedding.detach();
    dst.cls_embedding = src.cls_embedding.detach();
    for (auto& blk : src.blocks) {
        BlockParams c;
        c.ln1_g = blk.ln1_g.detach();
        c.ln1_b = blk.ln1_b.detach();
        c.wq = blk.wq.detach();
        c.bq = blk.bq.detach();
        c.wk = blk.wk.detach();
        c.bk = blk.bk.detach();
        c.wv = blk.wv.detach();
        c.bv = blk.bv.detach();
        c.wo = blk.wo.detach();
        c.bo = blk.bo.detach();
        c.ln2_g = blk.ln2_g.detach();
        c.ln2_b = blk.ln2_b.detach();
        c.ff1 = blk.ff1.detach();
        c.ff1_b = blk.ff1_b.detach();
        c.ff2 = blk.ff2.detach();
        c.ff2_b = blk.ff2_b.detach();
        dst.blocks.push_back(std::move(c));
    }
    dst.final_ln_g = src.final_ln_g.detach();
    dst.final_ln_b = src.final_ln_b.detach();
    dst.projection = src.projection.detach();
    return dst;
}

}  // namespace detail

// Scaled-normal init for the online encoders; the momentum state starts as an
// exact copy. Deterministic given seed.
inline std::pair<TwoStreamModel, MomentumState> init_model(const ModelConfig& cfg,
                                                           uint64_t seed) {
    cfg.validate();
    TwoStreamModel model;
    model.cfg = cfg;
    auto rng = make_rng(derive_seed(seed, "model-init"));
    model.vision = detail::init_encoder(cfg.vision, rng);
    model.text = detail::init_encoder(cfg.text, rng);
    model.vision_head = randn(rng, cfg.vision.d, cfg.vision.vocab, 0.02);
    model.text_head = randn(rng, cfg.text.d, cfg.text.vocab, 0.02);
    if (cfg.vision.d_out != cfg.vision.d)
        model.vision_cond_fuse = randn(rng, cfg.vision.d_out, cfg.vision.d, 0.02);
    if (cfg.text.d_out != cfg.text.d)
        model.text_cond_fuse = randn(rng, cfg.text.d_out, cfg.text.d, 0.02);

    MomentumState momentum;
    momentum.vision = detail::clone_encoder(model.vision);
    momentum.text = detail::clone_encoder(model.text);
    return {std::move(model), std::move(momentum)};
}

inline void zero_all_grads(TwoStreamModel& model) {
    for (Tensor* t : model.params()) t->zero_grad();
}

}  // namespace twostream
