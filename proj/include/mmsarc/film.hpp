#pragma once

#include <array>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "mmsarc/ops.hpp"
#include "mmsarc/tensor.hpp"

namespace mmsarc {

/// Eq. 2 alias: per-channel affine conditioning of a feature map.
inline Tensor film_modulate(const Tensor& f, const Tensor& gamma, const Tensor& beta) {
    return scale_shift(f, gamma, beta);
}

/// Per-channel bias after a conv (gamma pinned to 1, not learnable).
inline Tensor channel_bias(const Tensor& x, const Tensor& b) {
    return scale_shift(x, Tensor::full({b.dim(0)}, 1.0), b);
}

struct GRUCell {
    int in_dim = 100;
    int hidden = 64;
    Tensor wz, wr, wn;  // hidden x (in_dim + hidden)
    Tensor bz, br, bn;

    void init(int in, int h, Rng& rng) {
        in_dim = in;
        hidden = h;
        const double s = 1.0 / std::sqrt(static_cast<double>(in + h));
        wz = Tensor::randn({h, in + h}, rng, s, true);
        wr = Tensor::randn({h, in + h}, rng, s, true);
        wn = Tensor::randn({h, in + h}, rng, s, true);
        bz = Tensor::zeros({h}, true);
        br = Tensor::zeros({h}, true);
        bn = Tensor::zeros({h}, true);
    }

    /// z = sig(Wz [x;h]), r = sig(Wr [x;h]), n = tanh(Wn [x; r*h]),
    /// h' = (1-z)*n + z*h.
    Tensor step(const Tensor& x, const Tensor& h_prev) const {
        if (x.ndim() != 1 || x.dim(0) != in_dim || h_prev.ndim() != 1 || h_prev.dim(0) != hidden)
            throw ShapeError("gru_step: expected x[" + std::to_string(in_dim) + "], h[" +
                             std::to_string(hidden) + "], got " + shape_str(x.shape()) + ", " +
                             shape_str(h_prev.shape()));
        Tensor xh = concat({x, h_prev});
        Tensor z = sigmoid(linear_vec(wz, xh, bz));
        Tensor r = sigmoid(linear_vec(wr, xh, br));
        Tensor n = tanh(linear_vec(wn, concat({x, mul(r, h_prev)}), bn));
        return add(sub(n, mul(z, n)), mul(z, h_prev));
    }
};

/// One (gamma, beta) pair per FiLMed block.
struct FiLMParams {
    std::vector<Tensor> gamma, beta;
    std::size_t blocks() const { return gamma.size(); }
};

/// GRU over a private text embedding, final hidden state mapped by a single
/// linear layer to all blocks' (gamma, beta) in block order, gamma first.
class FiLMGenerator {
public:
    FiLMGenerator() = default;

    FiLMGenerator(int vocab_size, int emb_dim, int hidden, std::vector<int> block_channels,
                  Rng& rng)
        : block_channels_(std::move(block_channels)) {
        emb_ = Tensor::randn({vocab_size, emb_dim}, rng, 0.1, true);
        gru_.init(emb_dim, hidden, rng);
        int total = 0;
        for (int c : block_channels_) total += c;
        // small weights + identity bias (gamma slots 1, beta slots 0) keep the
        // visual pipeline near-unconditioned at the start of training
        gen_w_ = Tensor::randn({2 * total, hidden}, rng, 0.01, true);
        std::vector<double> b(static_cast<std::size_t>(2 * total), 0.0);
        int off = 0;
        for (int c : block_channels_) {
            for (int i = 0; i < c; ++i) b[static_cast<std::size_t>(off + i)] = 1.0;  // gamma half
            off += 2 * c;
        }
        gen_b_ = Tensor({2 * total}, std::move(b), true);
    }

    FiLMParams generate(const std::vector<int>& text_ids) const {
        if (text_ids.empty()) throw ContractError("film_generate: empty token sequence");
        Tensor e = embedding_rows(emb_, text_ids);
        Tensor h = Tensor::zeros({gru_.hidden});
        for (int t = 0; t < static_cast<int>(text_ids.size()); ++t) h = gru_.step(row(e, t), h);
        Tensor out = linear_vec(gen_w_, h, gen_b_);
        FiLMParams p;
        long off = 0;
        for (int c : block_channels_) {
            p.gamma.push_back(slice(out, off, c));
            p.beta.push_back(slice(out, off + c, c));
            off += 2 * c;
        }
        return p;
    }

    const std::vector<int>& block_channels() const { return block_channels_; }
    const GRUCell& gru() const { return gru_; }

    void collect_params(std::vector<std::pair<std::string, Tensor>>& out) const {
        out.emplace_back("gru.emb", emb_);
        out.emplace_back("gru.wz", gru_.wz);
        out.emplace_back("gru.bz", gru_.bz);
        out.emplace_back("gru.wr", gru_.wr);
        out.emplace_back("gru.br", gru_.br);
        out.emplace_back("gru.wn", gru_.wn);
        out.emplace_back("gru.bn", gru_.bn);
        out.emplace_back("film.gen.w", gen_w_);
        out.emplace_back("film.gen.b", gen_b_);
    }

private:
    Tensor emb_;
    GRUCell gru_;
    Tensor gen_w_, gen_b_;
    std::vector<int> block_channels_;
};

/// Residual unit: x + relu(FiLM(instance_norm(conv3x3(relu(conv1x1(x) + b))), g, b)).
struct FiLMedBlock {
    Tensor c1_k, c1_b;  // 1x1 projection with bias
    Tensor c3_k;        // 3x3, no bias (normalisation follows)

    void init(int channels, Rng& rng) {
        const double s1 = std::sqrt(2.0 / static_cast<double>(channels));
        const double s3 = std::sqrt(2.0 / static_cast<double>(9 * channels));
        c1_k = Tensor::randn({channels, channels, 1, 1}, rng, s1, true);
        c1_b = Tensor::zeros({channels}, true);
        c3_k = Tensor::randn({channels, channels, 3, 3}, rng, s3, true);
    }

    Tensor forward(const Tensor& x, const Tensor& gamma, const Tensor& beta) const {
        Tensor a = relu(channel_bias(conv2d(x, c1_k, 1, 0), c1_b));
        Tensor n = instance_norm(conv2d(a, c3_k, 1, 1));
        return add(x, relu(film_modulate(n, gamma, beta)));
    }
};

/// Conv stem + 4 FiLMed residual blocks + global average pool + linear head.
class VisualPipeline {
public:
    VisualPipeline() = default;

    VisualPipeline(int channels, int q_film_dim, Rng& rng)
        : channels_(channels), q_dim_(q_film_dim) {
        if (channels < 1 || q_film_dim < 1) throw ConfigError("visual: dims must be positive");
        stem_k_ = Tensor::randn({channels, 3, 3, 3}, rng, std::sqrt(2.0 / 27.0), true);
        stem_b_ = Tensor::zeros({channels}, true);
        for (auto& b : blocks_) b.init(channels, rng);
        fc_w_ = Tensor::randn({q_film_dim, channels}, rng,
                              1.0 / std::sqrt(static_cast<double>(channels)), true);
        fc_b_ = Tensor::zeros({q_film_dim}, true);
    }

    int blocks() const { return static_cast<int>(blocks_.size()); }
    int channels() const { return channels_; }
    int q_dim() const { return q_dim_; }

    struct Activations {
        std::vector<Tensor> post_block;  // output of each FiLMed block
    };

    /// image [3 x H x W] -> Q_film [q_film_dim]. Even spatial extents get one
    /// trailing zero row/column so the stride-2 stem tiles exactly.
    Tensor forward(const Tensor& image, const FiLMParams& film,
                   Activations* acts = nullptr) const {
        if (image.ndim() != 3 || image.dim(0) != 3)
            throw ShapeError("visual: expected image [3 x H x W], got " + shape_str(image.shape()));
        if (film.gamma.size() != blocks_.size() || film.beta.size() != blocks_.size())
            throw ShapeError("visual: need gamma/beta for each of " +
                             std::to_string(blocks_.size()) + " blocks");
        const int h = image.dim(1), w = image.dim(2);
        if (h < 4 || w < 4) throw ConfigError("visual: image too small for the stride-2 stem");
        Tensor x = image;
        const int pb = (h % 2 == 0) ? 1 : 0, pr = (w % 2 == 0) ? 1 : 0;
        if (pb || pr) x = pad2d(x, 0, pb, 0, pr);
        x = relu(channel_bias(conv2d(x, stem_k_, 2, 0), stem_b_));
        for (std::size_t i = 0; i < blocks_.size(); ++i) {
            x = blocks_[i].forward(x, film.gamma[i], film.beta[i]);
            if (acts) acts->post_block.push_back(x);
        }
        return linear_vec(fc_w_, global_avg_pool(x), fc_b_);
    }

    void collect_params(std::vector<std::pair<std::string, Tensor>>& out) const {
        out.emplace_back("vis.stem.k", stem_k_);
        out.emplace_back("vis.stem.b", stem_b_);
        for (std::size_t i = 0; i < blocks_.size(); ++i) {
            const std::string p = "vis.block" + std::to_string(i) + ".";
            out.emplace_back(p + "c1.k", blocks_[i].c1_k);
            out.emplace_back(p + "c1.b", blocks_[i].c1_b);
            out.emplace_back(p + "c3.k", blocks_[i].c3_k);
        }
        out.emplace_back("vis.fc.w", fc_w_);
        out.emplace_back("vis.fc.b", fc_b_);
    }

private:
    int channels_ = 32;
    int q_dim_ = 1024;
    Tensor stem_k_, stem_b_;
    std::array<FiLMedBlock, 4> blocks_;
    Tensor fc_w_, fc_b_;
};

}  // namespace mmsarc
