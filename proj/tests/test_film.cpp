#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "mmsarc/film.hpp"
#include "oracles.hpp"

using namespace mmsarc;

namespace {

// Plain-loop GRU step: z = sig(Wz[x;h]+bz), r = sig(Wr[x;h]+br),
// n = tanh(Wn[x;r*h]+bn), h' = (1-z)*n + z*h.
std::vector<double> ref_gru_step(const GRUCell& cell, const std::vector<double>& x,
                                 const std::vector<double>& h) {
    const int in = static_cast<int>(x.size()), hd = static_cast<int>(h.size());
    auto gate = [&](const Tensor& w, const Tensor& b, const std::vector<double>& cat) {
        std::vector<double> out(static_cast<std::size_t>(hd));
        for (int i = 0; i < hd; ++i) {
            double s = b.values()[static_cast<std::size_t>(i)];
            for (int k = 0; k < in + hd; ++k)
                s += w.values()[static_cast<std::size_t>(i) * (in + hd) + k] *
                     cat[static_cast<std::size_t>(k)];
            out[static_cast<std::size_t>(i)] = s;
        }
        return out;
    };
    std::vector<double> xh(x);
    xh.insert(xh.end(), h.begin(), h.end());
    std::vector<double> z = gate(cell.wz, cell.bz, xh), r = gate(cell.wr, cell.br, xh);
    for (auto& v : z) v = 1.0 / (1.0 + std::exp(-v));
    for (auto& v : r) v = 1.0 / (1.0 + std::exp(-v));
    std::vector<double> xrh(x);
    for (int i = 0; i < hd; ++i)
        xrh.push_back(r[static_cast<std::size_t>(i)] * h[static_cast<std::size_t>(i)]);
    std::vector<double> n = gate(cell.wn, cell.bn, xrh);
    for (auto& v : n) v = std::tanh(v);
    std::vector<double> out(static_cast<std::size_t>(hd));
    for (int i = 0; i < hd; ++i)
        out[static_cast<std::size_t>(i)] =
            (1.0 - z[static_cast<std::size_t>(i)]) * n[static_cast<std::size_t>(i)] +
            z[static_cast<std::size_t>(i)] * h[static_cast<std::size_t>(i)];
    return out;
}

}  // namespace

TEST_CASE("gru_step matches the loop reference") {
    Rng rng(13);
    GRUCell cell;
    cell.init(7, 6, rng);
    for (int c = 0; c < 25; ++c) {
        Tensor x = oracle::rand_tensor({7}, rng, false);
        Tensor h = oracle::rand_tensor({6}, rng, false);
        Tensor out = cell.step(x, h);
        auto want = ref_gru_step(cell, x.values(), h.values());
        REQUIRE(out.shape() == Shape{6});
        for (int i = 0; i < 6; ++i)
            CHECK(std::abs(out.values()[static_cast<std::size_t>(i)] -
                           want[static_cast<std::size_t>(i)]) < 1e-10);
    }
}

TEST_CASE("gru gate behaviour") {
    Rng rng(17);
    GRUCell cell;
    cell.init(4, 3, rng);

    SECTION("saturated update gate carries the state through") {
        GRUCell carry = cell;
        carry.bz = Tensor::full({3}, 50.0, true);  // z -> 1
        Tensor x = oracle::rand_tensor({4}, rng, false);
        Tensor h = oracle::rand_tensor({3}, rng, false);
        Tensor out = carry.step(x, h);
        for (int i = 0; i < 3; ++i)
            CHECK(out.values()[static_cast<std::size_t>(i)] ==
                  Catch::Approx(h.values()[static_cast<std::size_t>(i)]).margin(1e-9));
    }
    SECTION("suppressed update gate emits the candidate") {
        GRUCell fresh = cell;
        fresh.bz = Tensor::full({3}, -50.0, true);  // z -> 0
        Tensor x = oracle::rand_tensor({4}, rng, false);
        Tensor h = Tensor::zeros({3});
        Tensor out = fresh.step(x, h);
        // with h = 0 the candidate is tanh(Wn [x;0] + bn)
        auto want = ref_gru_step(fresh, x.values(), h.values());
        for (int i = 0; i < 3; ++i)
            CHECK(out.values()[static_cast<std::size_t>(i)] ==
                  Catch::Approx(want[static_cast<std::size_t>(i)]).margin(1e-12));
        for (double v : out.values()) CHECK(std::abs(v) < 1.0);  // tanh range
    }
    SECTION("shape validation") {
        CHECK_THROWS_AS(cell.step(Tensor::zeros({5}), Tensor::zeros({3})), ShapeError);
        CHECK_THROWS_AS(cell.step(Tensor::zeros({4}), Tensor::zeros({2})), ShapeError);
    }
}

TEST_CASE("gru_step finite differences") {
    Rng rng(19);
    GRUCell cell;
    cell.init(5, 4, rng);
    Tensor x = oracle::rand_tensor({5}, rng);
    Tensor h = oracle::rand_tensor({4}, rng);
    std::vector<Tensor> params{x, h, cell.wz, cell.bz, cell.wr, cell.br, cell.wn, cell.bn};
    auto rep = oracle::check_grads([&] { return sum(cell.step(x, h)); }, params);
    CHECK(rep.max_err < 1e-4);
}

TEST_CASE("film modulation") {
    Rng rng(23);
    Tensor x = oracle::rand_tensor({3, 4, 5}, rng, false);

    SECTION("identity parameters are a bitwise no-op") {
        Tensor g = Tensor::full({3}, 1.0);
        Tensor b = Tensor::zeros({3});
        Tensor y = film_modulate(x, g, b);
        CHECK(y.values() == x.values());
    }
    SECTION("per-channel affine") {
        Tensor g = oracle::rand_tensor({3}, rng, false);
        Tensor b = oracle::rand_tensor({3}, rng, false);
        Tensor y = film_modulate(x, g, b);
        for (int c = 0; c < 3; ++c)
            for (int i = 0; i < 20; ++i) {
                const std::size_t k = static_cast<std::size_t>(c) * 20 + static_cast<std::size_t>(i);
                CHECK(y.values()[k] ==
                      Catch::Approx(g.values()[static_cast<std::size_t>(c)] * x.values()[k] +
                                    b.values()[static_cast<std::size_t>(c)])
                          .epsilon(0)
                          .margin(0));
            }
    }
    SECTION("channel mismatch is rejected") {
        CHECK_THROWS_AS(film_modulate(x, Tensor::zeros({4}), Tensor::zeros({4})), ShapeError);
    }
    SECTION("finite differences") {
        Tensor xp = oracle::rand_tensor({2, 3, 3}, rng);
        Tensor g = oracle::rand_tensor({2}, rng);
        Tensor b = oracle::rand_tensor({2}, rng);
        auto rep = oracle::check_grads([&] { return sum(film_modulate(xp, g, b)); }, {xp, g, b});
        CHECK(rep.max_err < 1e-4);
    }
}

TEST_CASE("film generator") {
    Rng rng(29);
    FiLMGenerator gen(40, 6, 5, {3, 3, 4, 4}, rng);
    const std::vector<int> ids{4, 9, 2};

    SECTION("per-block parameter shapes") {
        FiLMParams f = gen.generate(ids);
        REQUIRE(f.gamma.size() == 4);
        REQUIRE(f.beta.size() == 4);
        CHECK(f.gamma[0].shape() == Shape{3});
        CHECK(f.beta[1].shape() == Shape{3});
        CHECK(f.gamma[2].shape() == Shape{4});
        CHECK(f.beta[3].shape() == Shape{4});
    }
    SECTION("initialisation keeps gamma near 1 and beta near 0") {
        FiLMParams f = gen.generate(ids);
        for (const auto& g : f.gamma)
            for (double v : g.values()) CHECK(std::abs(v - 1.0) < 0.5);
        for (const auto& b : f.beta)
            for (double v : b.values()) CHECK(std::abs(v) < 0.5);
    }
    SECTION("deterministic and text-dependent") {
        FiLMParams f1 = gen.generate(ids);
        FiLMParams f2 = gen.generate(ids);
        CHECK(f1.gamma[0].values() == f2.gamma[0].values());
        FiLMParams f3 = gen.generate({4, 9, 3});
        bool differs = false;
        for (std::size_t i = 0; i < f1.gamma[0].values().size(); ++i)
            differs |= f1.gamma[0].values()[i] != f3.gamma[0].values()[i];
        CHECK(differs);
    }
    SECTION("gradients reach the GRU parameters") {
        Graph::active().clear();
        FiLMParams f = gen.generate(ids);
        std::vector<Tensor> all;
        for (auto& t : f.gamma) all.push_back(t);
        for (auto& t : f.beta) all.push_back(t);
        backward(sum(concat(all)));
        std::vector<std::pair<std::string, Tensor>> named;
        gen.collect_params(named);
        for (auto& [name, t] : named) {
            INFO(name);
            CHECK(t.has_grad());
        }
        Graph::active().clear();
    }
    SECTION("empty sequence rejected") {
        CHECK_THROWS_AS(gen.generate({}), ContractError);
    }
}

TEST_CASE("filmed residual block") {
    Rng rng(31);
    FiLMedBlock block;
    block.init(3, rng);
    Tensor x = oracle::rand_tensor({3, 6, 6}, rng, false);
    Tensor g = Tensor::full({3}, 1.0);
    Tensor b = Tensor::zeros({3});

    SECTION("shape-preserving with a nonnegative residual branch") {
        Tensor y = block.forward(x, g, b);
        REQUIRE(y.shape() == x.shape());
        for (std::size_t i = 0; i < y.values().size(); ++i)
            CHECK(y.values()[i] >= x.values()[i]);  // residual adds relu(...) >= 0
    }
    SECTION("strongly negative beta silences the branch entirely") {
        Tensor killer = Tensor::full({3}, -1e6);
        Tensor y = block.forward(x, g, killer);
        CHECK(y.values() == x.values());  // relu clamps the whole branch to zero
    }
    SECTION("finite differences through the block") {
        Tensor xp = oracle::rand_tensor({2, 4, 4}, rng);
        FiLMedBlock small;
        small.init(2, rng);
        Tensor gp = oracle::rand_tensor({2}, rng);
        Tensor bp = oracle::rand_tensor({2}, rng);
        std::vector<Tensor> params{xp, gp, bp, small.c1_k, small.c1_b, small.c3_k};
        auto rep = oracle::check_grads([&] { return sum(small.forward(xp, gp, bp)); }, params);
        CHECK(rep.max_err < 1e-4);
    }
}

TEST_CASE("visual pipeline") {
    Rng rng(37);
    VisualPipeline vis(4, 10, rng);

    auto identity_film = [&] {
        FiLMParams f;
        for (int i = 0; i < 4; ++i) {
            f.gamma.push_back(Tensor::full({4}, 1.0));
            f.beta.push_back(Tensor::zeros({4}));
        }
        return f;
    };

    SECTION("even input is same-padded through the stride-2 stem") {
        Tensor img = oracle::rand_tensor({3, 32, 32}, rng, false);
        VisualPipeline::Activations acts;
        Tensor q = vis.forward(img, identity_film(), &acts);
        REQUIRE(q.shape() == Shape{10});
        REQUIRE(acts.post_block.size() == 4);
        for (const auto& a : acts.post_block) CHECK(a.shape() == Shape{4, 16, 16});
    }
    SECTION("odd and small inputs work") {
        Tensor img7 = oracle::rand_tensor({3, 7, 7}, rng, false);
        CHECK(vis.forward(img7, identity_film()).shape() == Shape{10});
        Tensor img8 = oracle::rand_tensor({3, 8, 8}, rng, false);
        CHECK(vis.forward(img8, identity_film()).shape() == Shape{10});
    }
    SECTION("tiny images are rejected") {
        Tensor img = oracle::rand_tensor({3, 3, 3}, rng, false);
        CHECK_THROWS_AS(vis.forward(img, identity_film()), ConfigError);
    }
    SECTION("film parameter count must match the block count") {
        Tensor img = oracle::rand_tensor({3, 8, 8}, rng, false);
        FiLMParams f = identity_film();
        f.gamma.pop_back();
        CHECK_THROWS_AS(vis.forward(img, f), ShapeError);
    }
    SECTION("gradients flow to every pipeline parameter") {
        Graph::active().clear();
        Tensor img = oracle::rand_tensor({3, 8, 8}, rng, false);
        backward(sum(vis.forward(img, identity_film())));
        std::vector<std::pair<std::string, Tensor>> named;
        vis.collect_params(named);
        for (auto& [name, t] : named) {
            INFO(name);
            CHECK(t.has_grad());
        }
        Graph::active().clear();
    }
}
