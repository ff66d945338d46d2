#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "mmsarc/ops.hpp"
#include "mmsarc/tensor.hpp"

namespace mmsarc {

struct EncoderConfig {
    int d = 64;
    int layers = 2;
    int heads = 4;
    int layer_tap = 1;  // 1-based layer whose output becomes the text representation
    int max_len = 360;
    int vocab_size = 0;
    double dropout = 0.1;

    void validate() const {
        if (d < 1 || layers < 1 || heads < 1 || max_len < 2 || vocab_size < 3)
            throw ConfigError("encoder: dimensions must be positive (vocab needs reserved ids)");
        if (d % heads != 0) throw ConfigError("encoder: d must be divisible by heads");
        if (layer_tap < 1 || layer_tap > layers)
            throw ConfigError("encoder: layer_tap " + std::to_string(layer_tap) +
                              " outside [1, " + std::to_string(layers) + "]");
    }
};

/// Token + position + segment embeddings (segment 0 = text, 1 = attributes).
struct EmbeddingTable {
    Tensor token, pos, seg;

    void init(const EncoderConfig& cfg, Rng& rng) {
        token = Tensor::randn({cfg.vocab_size, cfg.d}, rng, 0.02, true);
        pos = Tensor::randn({cfg.max_len, cfg.d}, rng, 0.02, true);
        seg = Tensor::zeros({2, cfg.d}, true);  // zero-init; learnable
    }

    Tensor embed_sequence(const std::vector<int>& ids, int segment_id) const {
        if (segment_id != 0 && segment_id != 1)
            throw ContractError("embed_sequence: segment_id must be 0 or 1");
        if (static_cast<int>(ids.size()) > pos.dim(0))
            throw ContractError("embed_sequence: sequence of " + std::to_string(ids.size()) +
                                " exceeds max_len " + std::to_string(pos.dim(0)));
        std::vector<int> positions(ids.size());
        for (std::size_t i = 0; i < ids.size(); ++i) positions[i] = static_cast<int>(i);
        Tensor e = embedding_rows(token, ids);
        Tensor p = embedding_rows(pos, positions);
        Tensor s = row(seg, segment_id);
        return add_rowwise(add(e, p), s);
    }
};

/// One post-norm transformer layer: masked multi-head self-attention and a
/// GELU feed-forward, each wrapped in residual + layer_norm. Dropout (when a
/// training rng is supplied) acts on attention weights and the FFN output.
struct EncoderLayer {
    Tensor wq, wk, wv, wo, bq, bk, bv, bo;
    Tensor ln1_g, ln1_b, ln2_g, ln2_b;
    Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;

    void init(const EncoderConfig& cfg, Rng& rng) {
        const int d = cfg.d, f = 4 * cfg.d;
        const double s_attn = 1.0 / std::sqrt(static_cast<double>(d));
        wq = Tensor::randn({d, d}, rng, s_attn, true);
        wk = Tensor::randn({d, d}, rng, s_attn, true);
        wv = Tensor::randn({d, d}, rng, s_attn, true);
        wo = Tensor::randn({d, d}, rng, s_attn, true);
        bq = Tensor::zeros({d}, true);
        bk = Tensor::zeros({d}, true);
        bv = Tensor::zeros({d}, true);
        bo = Tensor::zeros({d}, true);
        ln1_g = Tensor::full({d}, 1.0, true);
        ln1_b = Tensor::zeros({d}, true);
        ln2_g = Tensor::full({d}, 1.0, true);
        ln2_b = Tensor::zeros({d}, true);
        ffn_w1 = Tensor::randn({d, f}, rng, s_attn, true);
        ffn_b1 = Tensor::zeros({f}, true);
        ffn_w2 = Tensor::randn({f, d}, rng, 1.0 / std::sqrt(static_cast<double>(f)), true);
        ffn_b2 = Tensor::zeros({d}, true);
    }

    Tensor forward(const Tensor& x, const Mask& pad_mask, int heads, Rng* drop_rng,
                   double drop_rate) const {
        const int n = x.dim(0), d = x.dim(1);
        if (static_cast<int>(pad_mask.size()) != n)
            throw ShapeError("encoder layer: mask length does not match sequence length");
        const int dh = d / heads;
        const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

        Tensor q = linear(x, wq, bq), k = linear(x, wk, bk), v = linear(x, wv, bv);
        std::vector<Tensor> ctx;
        ctx.reserve(static_cast<std::size_t>(heads));
        for (int h = 0; h < heads; ++h) {
            Tensor qh = slice_cols(q, h * dh, dh);
            Tensor kh = slice_cols(k, h * dh, dh);
            Tensor vh = slice_cols(v, h * dh, dh);
            Tensor scores = affine(matmul(qh, transpose(kh)), scale, 0.0);
            Tensor att = softmax_masked_rows(scores, pad_mask);
            if (drop_rng) att = dropout(att, drop_rate, *drop_rng);
            ctx.push_back(matmul(att, vh));
        }
        Tensor attn_out = linear(concat_cols(ctx), wo, bo);
        Tensor x1 = layer_norm(add(x, attn_out), ln1_g, ln1_b);
        Tensor f = linear(gelu(linear(x1, ffn_w1, ffn_b1)), ffn_w2, ffn_b2);
        if (drop_rng) f = dropout(f, drop_rate, *drop_rng);
        return layer_norm(add(x1, f), ln2_g, ln2_b);
    }
};

/// Mini RoBERTa stand-in. Text features come from the tapped layer; attribute
/// features always come from the last layer.
class TextEncoder {
public:
    TextEncoder() = default;

    TextEncoder(EncoderConfig cfg, Rng& rng) : cfg_(cfg) {
        cfg_.validate();
        emb_.init(cfg_, rng);
        layers_.resize(static_cast<std::size_t>(cfg_.layers));
        for (auto& l : layers_) l.init(cfg_, rng);
    }

    const EncoderConfig& config() const { return cfg_; }

    /// Runs the embedding plus the first `depth` layers.
    Tensor forward_stack(const std::vector<int>& ids, int segment_id, const Mask& pad_mask,
                         int depth, Rng* drop_rng = nullptr, double drop_rate = 0.0) const {
        if (ids.empty()) throw ContractError("encoder: empty sequence");
        if (depth < 1 || depth > cfg_.layers) throw ConfigError("encoder: bad stack depth");
        Tensor x = emb_.embed_sequence(ids, segment_id);
        for (int l = 0; l < depth; ++l)
            x = layers_[static_cast<std::size_t>(l)].forward(x, pad_mask, cfg_.heads, drop_rng,
                                                             drop_rate);
        return x;
    }

    /// P from the tapped layer plus its row 0 as the [CLS] vector.
    std::pair<Tensor, Tensor> encode_text(const std::vector<int>& ids, const Mask& pad_mask,
                                          Rng* drop_rng = nullptr, double drop_rate = 0.0) const {
        Tensor p = forward_stack(ids, 0, pad_mask, cfg_.layer_tap, drop_rng, drop_rate);
        return {p, row(p, 0)};
    }

    /// Q from the full stack over the attribute sequence (segment 1).
    Tensor encode_attributes(const std::vector<int>& ids, const Mask& pad_mask,
                             Rng* drop_rng = nullptr, double drop_rate = 0.0) const {
        return forward_stack(ids, 1, pad_mask, cfg_.layers, drop_rng, drop_rate);
    }

    void collect_params(std::vector<std::pair<std::string, Tensor>>& out) const {
        out.emplace_back("embed.token", emb_.token);
        out.emplace_back("embed.pos", emb_.pos);
        out.emplace_back("embed.seg", emb_.seg);
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            const auto& L = layers_[l];
            const std::string p = "enc." + std::to_string(l) + ".";
            const std::pair<const char*, const Tensor*> items[] = {
                {"wq", &L.wq},         {"bq", &L.bq},         {"wk", &L.wk},
                {"bk", &L.bk},         {"wv", &L.wv},         {"bv", &L.bv},
                {"wo", &L.wo},         {"bo", &L.bo},         {"ln1.g", &L.ln1_g},
                {"ln1.b", &L.ln1_b},   {"ffn.w1", &L.ffn_w1}, {"ffn.b1", &L.ffn_b1},
                {"ffn.w2", &L.ffn_w2}, {"ffn.b2", &L.ffn_b2}, {"ln2.g", &L.ln2_g},
                {"ln2.b", &L.ln2_b}};
            for (const auto& [name, t] : items) out.emplace_back(p + name, *t);
        }
    }

    EmbeddingTable& embeddings() { return emb_; }
    const EmbeddingTable& embeddings() const { return emb_; }
    std::vector<EncoderLayer>& layers() { return layers_; }
    const std::vector<EncoderLayer>& layers() const { return layers_; }

private:
    EncoderConfig cfg_;
    EmbeddingTable emb_;
    std::vector<EncoderLayer> layers_;
};

}  // namespace mmsarc
