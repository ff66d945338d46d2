#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mmsarc/film.hpp"
#include "mmsarc/model.hpp"
#include "mmsarc/ops.hpp"

namespace mmsarc {

struct GradCheckRow {
    std::string name;
    double max_err = 0.0;
    long checked = 0;
    bool pass = false;
};

namespace detail {

inline double gc_scaled_err(double a, double b) {
    return std::abs(a - b) / (1e-3 + std::max(std::abs(a), std::abs(b)));
}

/// Central finite differences against one reverse pass; returns max scaled
/// error over every element of every parameter.
inline GradCheckRow gc_run(const std::string& name, const std::function<Tensor()>& make_loss,
                           std::vector<Tensor> params, double tol, double h = 1e-5) {
    Graph::active().clear();
    for (auto& p : params) p.zero_grad();
    Tensor loss = make_loss();
    backward(loss);
    std::vector<std::vector<double>> analytic;
    for (auto& p : params)
        analytic.push_back(p.has_grad() ? p.impl()->grad : std::vector<double>(p.size(), 0.0));
    Graph::active().clear();

    GradCheckRow row;
    row.name = name;
    NoGradGuard ng;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        std::vector<double>& vals = params[pi].impl()->values;
        for (std::size_t i = 0; i < vals.size(); ++i) {
            const double orig = vals[i];
            vals[i] = orig + h;
            const double f1 = make_loss().value();
            vals[i] = orig - h;
            const double f2 = make_loss().value();
            vals[i] = orig;
            const double numeric = (f1 - f2) / (2.0 * h);
            row.max_err = std::max(row.max_err, gc_scaled_err(analytic[pi][i], numeric));
            ++row.checked;
        }
    }
    for (auto& p : params) p.zero_grad();
    row.pass = row.max_err < tol;
    return row;
}

inline Tensor gc_rand(const Shape& shape, Rng& rng, double stddev = 1.0) {
    return Tensor::randn(shape, rng, stddev, true);
}

}  // namespace detail

/// Finite-difference checks for every differentiable primitive plus the full
/// model at toy dimensions. Deterministic given the seed.
inline std::vector<GradCheckRow> run_gradcheck(double tol, std::uint64_t seed) {
    std::vector<GradCheckRow> rows;
    Rng rng(mix_seed(seed, 0x6C));

    {
        Tensor a = detail::gc_rand({3, 4}, rng), b = detail::gc_rand({3, 4}, rng);
        rows.push_back(detail::gc_run("add", [&] { return sum(add(a, b)); }, {a, b}, tol));
        rows.push_back(detail::gc_run("mul", [&] { return sum(mul(a, b)); }, {a, b}, tol));
    }
    {
        Tensor x = detail::gc_rand({3, 4}, rng);
        rows.push_back(detail::gc_run("tanh", [&] { return sum(tanh(x)); }, {x}, tol));
        rows.push_back(detail::gc_run("sigmoid", [&] { return sum(sigmoid(x)); }, {x}, tol));
        rows.push_back(detail::gc_run("relu", [&] { return sum(relu(x)); }, {x}, tol));
        rows.push_back(detail::gc_run("gelu", [&] { return sum(gelu(x)); }, {x}, tol));
    }
    {
        Tensor a = detail::gc_rand({4, 3}, rng), b = detail::gc_rand({3, 5}, rng);
        rows.push_back(detail::gc_run("matmul", [&] { return sum(matmul(a, b)); }, {a, b}, tol));
    }
    {
        Tensor x = detail::gc_rand({2, 7, 7}, rng), k = detail::gc_rand({3, 2, 3, 3}, rng, 0.3);
        rows.push_back(
            detail::gc_run("conv2d", [&] { return sum(conv2d(x, k, 2, 1)); }, {x, k}, tol));
    }
    {
        Tensor c = detail::gc_rand({4, 5}, rng);
        Mask m = all_valid(4);
        m[2] = 0;
        rows.push_back(
            detail::gc_run("maxpool_cols", [&] { return sum(maxpool_cols(c, m)); }, {c}, tol));
    }
    {
        Tensor x = detail::gc_rand({3, 6}, rng), g = detail::gc_rand({6}, rng),
               b = detail::gc_rand({6}, rng);
        rows.push_back(
            detail::gc_run("layer_norm", [&] { return sum(layer_norm(x, g, b)); }, {x, g, b}, tol));
    }
    {
        GRUCell cell;
        cell.init(6, 5, rng);
        Tensor x = detail::gc_rand({6}, rng), hp = detail::gc_rand({5}, rng);
        std::vector<Tensor> params = {x, hp, cell.wz, cell.bz, cell.wr, cell.br, cell.wn, cell.bn};
        rows.push_back(
            detail::gc_run("gru_step", [&] { return sum(cell.step(x, hp)); }, params, tol));
    }
    {
        Tensor x = detail::gc_rand({2, 3, 3}, rng), gm = detail::gc_rand({2}, rng),
               bt = detail::gc_rand({2}, rng);
        rows.push_back(detail::gc_run(
            "film_modulate", [&] { return sum(film_modulate(x, gm, bt)); }, {x, gm, bt}, tol));
    }
    {
        Tensor p = detail::gc_rand({4, 5}, rng), w = detail::gc_rand({5, 5}, rng, 0.3),
               q = detail::gc_rand({3, 5}, rng);
        rows.push_back(detail::gc_run(
            "affinity", [&] { return sum(tanh(matmul(matmul(p, w), transpose(q)))); }, {p, w, q},
            tol));
    }
    {
        Tensor hvec = detail::gc_rand({7}, rng), w = detail::gc_rand({7}, rng),
               b = detail::gc_rand({1}, rng);
        rows.push_back(detail::gc_run(
            "classify", [&] { return bce_with_logits(add(dot(w, hvec), b), 1.0); }, {hvec, w, b},
            tol));
    }
    {
        Tensor z = detail::gc_rand({1}, rng);
        GradCheckRow r0 = detail::gc_run("bce_loss", [&] { return bce_with_logits(z, 0.0); }, {z},
                                         tol);
        GradCheckRow r1 = detail::gc_run("bce_loss", [&] { return bce_with_logits(z, 1.0); }, {z},
                                         tol);
        GradCheckRow r = r0.max_err > r1.max_err ? r0 : r1;
        r.checked = r0.checked + r1.checked;
        r.pass = r0.pass && r1.pass;
        rows.push_back(r);
    }
    {
        // Full model at toy dims: d=8, 8x8 images, short position table.
        Vocabulary vocab = build_vocabulary();
        ModelConfig mc;
        mc.d = 8;
        mc.layers = 2;
        mc.heads = 2;
        mc.layer_tap = 1;
        mc.max_len = 16;
        mc.gru_dim = 8;
        mc.gru_hidden = 8;
        mc.channels = 4;
        mc.q_film_dim = 16;
        mc.img_h = 8;
        mc.img_w = 8;
        mc.dropout = 0.0;
        SarcasmModel model(mc, vocab, Variant::full, seed);

        MultimodalSample s;
        s.id = "gc";
        s.text_tokens = {"delightful", "quite", "so", "very"};
        s.attribute_tokens = {"stripes", "the", "of"};
        s.image.resize(3 * 8 * 8);
        for (double& v : s.image) v = 0.5 + 0.3 * std::tanh(std::normal_distribution<>()(rng));
        s.label = 1;

        std::vector<Tensor> params;
        for (auto& [n, t] : model.named_params()) params.push_back(t);
        rows.push_back(detail::gc_run(
            "model_forward", [&] { return model.loss(model.forward(s), s.label); }, params, tol));
    }
    return rows;
}

}  // namespace mmsarc
