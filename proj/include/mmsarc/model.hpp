#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mmsarc/coattention.hpp"
#include "mmsarc/data.hpp"
#include "mmsarc/encoder.hpp"
#include "mmsarc/film.hpp"
#include "mmsarc/ops.hpp"
#include "mmsarc/vocab.hpp"

namespace mmsarc {

/// Ablations: the first four mirror the reported rows; the unimodal pair
/// exists for the insufficiency check.
enum class Variant { full, no_film, no_coattention, no_cls, text_only, image_only };

inline const char* variant_name(Variant v) {
    switch (v) {
        case Variant::full: return "full";
        case Variant::no_film: return "no-film";
        case Variant::no_coattention: return "no-coatt";
        case Variant::no_cls: return "no-cls";
        case Variant::text_only: return "text-only";
        case Variant::image_only: return "image-only";
    }
    throw ContractError("variant_name: bad enum value");
}

inline Variant parse_variant(const std::string& s) {
    for (Variant v : {Variant::full, Variant::no_film, Variant::no_coattention, Variant::no_cls,
                      Variant::text_only, Variant::image_only})
        if (s == variant_name(v)) return v;
    throw ConfigError("unknown variant '" + s +
                      "' (expected full|no-film|no-coatt|no-cls|text-only|image-only)");
}

inline bool uses_visual(Variant v) { return v != Variant::no_film && v != Variant::text_only; }
inline bool uses_film_conditioning(Variant v) {
    return uses_visual(v) && v != Variant::image_only;
}
inline bool uses_coattention(Variant v) {
    return v == Variant::full || v == Variant::no_film || v == Variant::no_cls;
}
inline bool uses_cls(Variant v) {
    return v == Variant::full || v == Variant::no_film || v == Variant::no_coattention ||
           v == Variant::text_only;
}
inline bool uses_encoder(Variant v) { return uses_coattention(v) || uses_cls(v); }

struct ModelConfig {
    int d = 64;
    int layers = 2;
    int heads = 4;
    int layer_tap = 1;
    int max_len = 360;
    int gru_dim = 100;
    int gru_hidden = 64;
    int channels = 32;
    int q_film_dim = 1024;
    int img_h = kImgH;
    int img_w = kImgW;
    double dropout = 0.1;
    int vocab_size = 0;

    void validate() const {
        EncoderConfig ec = encoder_config();
        ec.validate();
        if (gru_dim < 1 || gru_hidden < 1 || channels < 1 || q_film_dim < 1)
            throw ConfigError("model: film/visual dims must be positive");
        if (img_h < 1 || img_w < 1) throw ConfigError("model: image dims must be positive");
        if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("model: dropout must be in [0, 1)");
    }

    EncoderConfig encoder_config() const {
        EncoderConfig ec;
        ec.d = d;
        ec.layers = layers;
        ec.heads = heads;
        ec.layer_tap = layer_tap;
        ec.max_len = max_len;
        ec.vocab_size = vocab_size;
        ec.dropout = dropout;
        return ec;
    }

    int fusion_dim(Variant v) const {
        return (uses_visual(v) ? q_film_dim : 0) + (uses_cls(v) ? d : 0) +
               (uses_coattention(v) ? d : 0);
    }
};

struct ModelOutput {
    Tensor logit;  // [1]
    double y_hat = 0.0;
    int label = 0;

    bool has_attention = false;
    AttentionOutput att;
    bool has_film = false;  // film parameters conditioned on the text
    FiLMParams film;
    VisualPipeline::Activations acts;  // post-block maps when the visual path ran
};

class SarcasmModel {
public:
    SarcasmModel(ModelConfig cfg, Vocabulary vocab, Variant variant, std::uint64_t seed)
        : cfg_(std::move(cfg)), variant_(variant), vocab_(std::move(vocab)) {
        cfg_.vocab_size = vocab_.size();
        cfg_.validate();
        Rng rng(mix_seed(seed, 0xC0DE));
        if (uses_encoder(variant_)) encoder_.emplace(cfg_.encoder_config(), rng);
        if (uses_film_conditioning(variant_))
            film_gen_.emplace(cfg_.vocab_size, cfg_.gru_dim, cfg_.gru_hidden,
                              std::vector<int>(4, cfg_.channels), rng);
        if (uses_visual(variant_)) visual_.emplace(cfg_.channels, cfg_.q_film_dim, rng);
        if (uses_coattention(variant_)) coatt_.emplace(cfg_.d, rng);
        const int fd = cfg_.fusion_dim(variant_);
        head_w_ = Tensor::randn({fd}, rng, 1.0 / std::sqrt(static_cast<double>(fd)), true);
        head_b_ = Tensor::zeros({1}, true);
    }

    const ModelConfig& config() const { return cfg_; }
    Variant variant() const { return variant_; }
    const Vocabulary& vocab() const { return vocab_; }

    std::vector<int> to_ids(const std::vector<std::string>& tokens) const {
        std::vector<int> ids;
        ids.reserve(tokens.size());
        for (const auto& t : tokens) ids.push_back(vocab_.id(t));
        return ids;
    }

    std::vector<int> with_specials(std::vector<int> ids) const {
        ids.insert(ids.begin(), Vocabulary::kCls);
        ids.push_back(Vocabulary::kSep);
        return ids;
    }

    /// Full forward pass for one sample. A non-null rng enables training mode
    /// (dropout); eval mode is bitwise deterministic.
    ModelOutput forward(const MultimodalSample& sample, Rng* drop_rng = nullptr) const {
        ModelOutput out;
        const double rate = cfg_.dropout;

        Tensor p, cls;
        Mask text_mask;
        if (uses_encoder(variant_)) {
            const std::vector<int> text_ids = with_specials(to_ids(sample.text_tokens));
            if (static_cast<int>(text_ids.size()) > cfg_.max_len)
                throw DataError("text of " + std::to_string(text_ids.size()) +
                                " tokens exceeds max_len " + std::to_string(cfg_.max_len));
            text_mask = all_valid(static_cast<int>(text_ids.size()));
            auto pc = encoder_->encode_text(text_ids, text_mask, drop_rng, rate);
            p = pc.first;
            cls = pc.second;
        }

        if (uses_coattention(variant_)) {
            const std::vector<int> attr_ids = with_specials(to_ids(sample.attribute_tokens));
            const Mask attr_mask = all_valid(static_cast<int>(attr_ids.size()));
            Tensor q = encoder_->encode_attributes(attr_ids, attr_mask, drop_rng, rate);
            out.att = coatt_->forward(p, q, text_mask, attr_mask);
            out.has_attention = true;
        }

        Tensor q_film;
        if (uses_visual(variant_)) {
            if (uses_film_conditioning(variant_)) {
                out.film = film_gen_->generate(to_ids(sample.text_tokens));
                out.has_film = true;
            } else {
                for (int i = 0; i < 4; ++i) {
                    out.film.gamma.push_back(Tensor::full({cfg_.channels}, 1.0));
                    out.film.beta.push_back(Tensor::zeros({cfg_.channels}));
                }
            }
            Tensor image({kImgC, cfg_.img_h, cfg_.img_w}, sample.image);
            q_film = visual_->forward(image, out.film, &out.acts);
        }

        std::vector<Tensor> parts;
        if (uses_visual(variant_)) parts.push_back(q_film);
        if (uses_cls(variant_)) parts.push_back(cls);
        if (uses_coattention(variant_)) parts.push_back(out.att.q_att);
        Tensor h = concat(parts);
        if (drop_rng) h = dropout(h, rate, *drop_rng);
        out.logit = add(dot(head_w_, h), head_b_);
        const double z = out.logit.value();
        out.y_hat = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
        out.label = out.y_hat > 0.5 ? 1 : 0;  // ties go to 0
        return out;
    }

    Tensor loss(const ModelOutput& out, int label) const {
        return bce_with_logits(out.logit, static_cast<double>(label));
    }

    /// All parameters with manifest names, in a fixed deterministic order.
    std::vector<std::pair<std::string, Tensor>> named_params() const {
        std::vector<std::pair<std::string, Tensor>> out;
        if (encoder_) encoder_->collect_params(out);
        if (film_gen_) film_gen_->collect_params(out);
        if (visual_) visual_->collect_params(out);
        if (coatt_) coatt_->collect_params(out);
        out.emplace_back("head.w", head_w_);
        out.emplace_back("head.b", head_b_);
        return out;
    }

    /// The three learning-rate groups. Every named parameter appears in
    /// exactly one group: GRU + FiLM generator + conv pipeline at film_lr,
    /// embeddings + encoder stack at encoder_lr, co-attention W + fusion head
    /// at coattention_lr.
    struct Groups {
        std::vector<Tensor> film, encoder, coattention;
    };

    Groups param_groups() const {
        Groups g;
        std::vector<std::pair<std::string, Tensor>> named;
        if (film_gen_) film_gen_->collect_params(named);
        if (visual_) visual_->collect_params(named);
        for (auto& [n, t] : named) g.film.push_back(t);
        named.clear();
        if (encoder_) encoder_->collect_params(named);
        for (auto& [n, t] : named) g.encoder.push_back(t);
        named.clear();
        if (coatt_) coatt_->collect_params(named);
        for (auto& [n, t] : named) g.coattention.push_back(t);
        g.coattention.push_back(head_w_);
        g.coattention.push_back(head_b_);
        return g;
    }

    const TextEncoder& encoder() const { return *encoder_; }
    const FiLMGenerator& film_generator() const { return *film_gen_; }
    const VisualPipeline& visual() const { return *visual_; }
    const CoAttention& coattention() const { return *coatt_; }
    bool has_encoder() const { return encoder_.has_value(); }

private:
    ModelConfig cfg_;
    Variant variant_;
    Vocabulary vocab_;
    std::optional<TextEncoder> encoder_;
    std::optional<FiLMGenerator> film_gen_;
    std::optional<VisualPipeline> visual_;
    std::optional<CoAttention> coatt_;
    Tensor head_w_, head_b_;
};

}  // namespace mmsarc
