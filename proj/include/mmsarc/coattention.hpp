#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "mmsarc/ops.hpp"
#include "mmsarc/tensor.hpp"

namespace mmsarc {

struct AttentionOutput {
    Tensor affinity;  // C [N x M], entries in (-1, 1)
    Tensor alpha;     // [M], exactly 0 at masked attribute positions
    Tensor q_att;     // [d]
};

/// Inter-modality incongruity: C = tanh(P W Q^T), alpha = column max over
/// unmasked text rows, q_att = alpha Q.
class CoAttention {
public:
    CoAttention() = default;

    CoAttention(int d, Rng& rng) {
        // bilinear forms sum d^2 products; keep tanh unsaturated at init
        w_ = Tensor::randn({d, d}, rng, 0.01, true);
    }

    const Tensor& weight() const { return w_; }
    Tensor& weight() { return w_; }

    Tensor affinity(const Tensor& p, const Tensor& q) const {
        if (p.ndim() != 2 || q.ndim() != 2 || p.dim(1) != w_.dim(0) || q.dim(1) != w_.dim(1))
            throw ShapeError("affinity: P " + shape_str(p.shape()) + ", Q " + shape_str(q.shape()) +
                             " incompatible with W " + shape_str(w_.shape()));
        return mmsarc::tanh(matmul(matmul(p, w_), transpose(q)));
    }

    static Tensor attention_pool(const Tensor& c, const Mask& text_mask, const Mask& attr_mask) {
        if (static_cast<int>(attr_mask.size()) != c.dim(1))
            throw ShapeError("attention_pool: attribute mask length mismatch");
        return mask_zero(maxpool_cols(c, text_mask), attr_mask);
    }

    static Tensor attend(const Tensor& alpha, const Tensor& q) { return vecmat(alpha, q); }

    AttentionOutput forward(const Tensor& p, const Tensor& q, const Mask& text_mask,
                            const Mask& attr_mask) const {
        AttentionOutput out;
        out.affinity = affinity(p, q);
        out.alpha = attention_pool(out.affinity, text_mask, attr_mask);
        out.q_att = attend(out.alpha, q);
        return out;
    }

    void collect_params(std::vector<std::pair<std::string, Tensor>>& out) const {
        out.emplace_back("coatt.w", w_);
    }

private:
    Tensor w_;
};

}  // namespace mmsarc
