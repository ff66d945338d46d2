#include <catch2/catch_amalgamated.hpp>

#include "mmsarc/ops.hpp"
#include "oracles.hpp"

using namespace mmsarc;
using oracle::check_grads;
using oracle::rand_tensor;

namespace {
constexpr double kFdTol = 1e-4;  // scaled error threshold for FD comparisons
}

TEST_CASE("elementwise arithmetic forward and FD backward") {
    Rng rng(101);
    Tensor a = rand_tensor({3, 4}, rng);
    Tensor b = rand_tensor({3, 4}, rng);

    Tensor s = add(a, b);
    Tensor d = sub(a, b);
    Tensor p = mul(a, b);
    for (long i = 0; i < a.size(); ++i) {
        CHECK(s.at(i) == a.at(i) + b.at(i));
        CHECK(d.at(i) == a.at(i) - b.at(i));
        CHECK(p.at(i) == a.at(i) * b.at(i));
    }
    CHECK_THROWS_AS(add(a, rand_tensor({4, 3}, rng)), ShapeError);

    auto rep = check_grads([&] { return sum(mul(add(a, b), sub(a, b))); }, {a, b});
    CHECK(rep.max_err < kFdTol);
    CHECK(rep.checked == 24);
}

TEST_CASE("affine applies scalar multiply-add") {
    Rng rng(102);
    Tensor x = rand_tensor({5}, rng);
    Tensor y = affine(x, 2.5, -1.0);
    for (long i = 0; i < x.size(); ++i) CHECK(y.at(i) == Catch::Approx(2.5 * x.at(i) - 1.0));
    auto rep = check_grads([&] { return sum(affine(x, 2.5, -1.0)); }, {x});
    CHECK(rep.max_err < kFdTol);
}

TEST_CASE("unary activations match closed forms and FD") {
    Rng rng(103);
    Tensor x = rand_tensor({17}, rng);

    Tensor th = tanh(x);
    Tensor sg = sigmoid(x);
    Tensor rl = relu(x);
    Tensor gl = gelu(x);
    for (long i = 0; i < x.size(); ++i) {
        const double v = x.at(i);
        CHECK(th.at(i) == Catch::Approx(std::tanh(v)));
        CHECK(sg.at(i) == Catch::Approx(1.0 / (1.0 + std::exp(-v))));
        CHECK(rl.at(i) == (v > 0 ? v : 0.0));
        CHECK(gl.at(i) == Catch::Approx(0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0)))));
    }
    // sigmoid saturation must not overflow
    Tensor big({2}, {800.0, -800.0});
    Tensor sgb = sigmoid(big);
    CHECK(sgb.at(0) == Catch::Approx(1.0));
    CHECK(sgb.at(1) == Catch::Approx(0.0).margin(1e-300));

    using UnaryFn = Tensor (*)(const Tensor&);
    for (UnaryFn f : std::vector<UnaryFn>{&mmsarc::tanh, &mmsarc::sigmoid, &mmsarc::gelu}) {
        auto rep = check_grads([&] { return sum(f(x)); }, {x});
        CHECK(rep.max_err < kFdTol);
    }
    // relu: FD is valid away from the kink; values from randn are never 0
    auto rep = check_grads([&] { return sum(relu(x)); }, {x});
    CHECK(rep.max_err < kFdTol);
}

TEST_CASE("matmul agrees with the loop oracle") {
    Rng rng(104);
    Tensor a = rand_tensor({4, 6}, rng);
    Tensor b = rand_tensor({6, 5}, rng);
    Tensor c = matmul(a, b);
    REQUIRE(c.shape() == Shape{4, 5});
    auto ref = oracle::ref_matmul(a.values(), b.values(), 4, 6, 5);
    for (long i = 0; i < c.size(); ++i) CHECK(c.at(i) == Catch::Approx(ref[static_cast<std::size_t>(i)]));

    CHECK_THROWS_AS(matmul(a, a), ShapeError);

    Tensor w = rand_tensor({5, 3}, rng);
    auto rep = check_grads([&] { return sum(matmul(matmul(a, b), w)); }, {a, b, w});
    CHECK(rep.max_err < kFdTol);
}

TEST_CASE("transpose, matvec, vecmat, dot") {
    Rng rng(105);
    Tensor a = rand_tensor({3, 5}, rng);
    Tensor t = transpose(a);
    REQUIRE(t.shape() == Shape{5, 3});
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 5; ++j) CHECK(t.at(j * 3 + i) == a.at(i * 5 + j));

    Tensor v = rand_tensor({5}, rng);
    Tensor mv = matvec(a, v);
    REQUIRE(mv.shape() == Shape{3});
    for (int i = 0; i < 3; ++i) {
        double s = 0;
        for (int j = 0; j < 5; ++j) s += a.at(i * 5 + j) * v.at(j);
        CHECK(mv.at(i) == Catch::Approx(s));
    }

    Tensor alpha = rand_tensor({3}, rng);
    Tensor vm = vecmat(alpha, a);
    REQUIRE(vm.shape() == Shape{5});
    for (int j = 0; j < 5; ++j) {
        double s = 0;
        for (int i = 0; i < 3; ++i) s += alpha.at(i) * a.at(i * 5 + j);
        CHECK(vm.at(j) == Catch::Approx(s));
    }

    Tensor u = rand_tensor({5}, rng);
    CHECK(dot(v, u).value() == Catch::Approx([&] {
              double s = 0;
              for (int i = 0; i < 5; ++i) s += v.at(i) * u.at(i);
              return s;
          }()));

    auto rep = check_grads(
        [&] { return dot(matvec(transpose(a), alpha), mul(v, u)); }, {a, alpha, v, u});
    CHECK(rep.max_err < kFdTol);
    auto rep2 = check_grads([&] { return sum(vecmat(alpha, a)); }, {alpha, a});
    CHECK(rep2.max_err < kFdTol);
}

TEST_CASE("add_rowwise broadcasts a bias over rows") {
    Rng rng(106);
    Tensor x = rand_tensor({4, 3}, rng);
    Tensor b = rand_tensor({3}, rng);
    Tensor y = add_rowwise(x, b);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 3; ++j) CHECK(y.at(i * 3 + j) == x.at(i * 3 + j) + b.at(j));
    auto rep = check_grads([&] { return sum(tanh(add_rowwise(x, b))); }, {x, b});
    CHECK(rep.max_err < kFdTol);
}

TEST_CASE("reshape is a flat view copy") {
    Rng rng(107);
    Tensor x = rand_tensor({2, 6}, rng);
    Tensor y = reshape(x, {3, 4});
    REQUIRE(y.shape() == Shape{3, 4});
    for (long i = 0; i < 12; ++i) CHECK(y.at(i) == x.at(i));
    CHECK_THROWS_AS(reshape(x, {5, 2}), ShapeError);
    auto rep = check_grads([&] { return sum(mul(reshape(x, {12}), reshape(x, {12}))); }, {x});
    CHECK(rep.max_err < kFdTol);
}

TEST_CASE("embedding_rows gathers and scatters, duplicates accumulate") {
    Rng rng(108);
    Tensor table = rand_tensor({7, 3}, rng);
    std::vector<int> ids{2, 5, 2};
    Tensor e = embedding_rows(table, ids);
    REQUIRE(e.shape() == Shape{3, 3});
    for (int j = 0; j < 3; ++j) {
        CHECK(e.at(0 * 3 + j) == table.at(2 * 3 + j));
        CHECK(e.at(1 * 3 + j) == table.at(5 * 3 + j));
        CHECK(e.at(2 * 3 + j) == table.at(2 * 3 + j));
    }
    CHECK_THROWS_AS(embedding_rows(table, {7}), DataError);
    CHECK_THROWS_AS(embedding_rows(table, {-1}), DataError);
    CHECK_THROWS_AS(embedding_rows(table, {}), ContractError);

    // row 2 is used twice: its gradient must be the sum of both uses
    Graph::active().clear();
    table.zero_grad();
    Tensor loss = sum(embedding_rows(table, ids));
    backward(loss);
    for (int j = 0; j < 3; ++j) {
        CHECK(table.grad()[2 * 3 + static_cast<std::size_t>(j)] == Catch::Approx(2.0));
        CHECK(table.grad()[5 * 3 + static_cast<std::size_t>(j)] == Catch::Approx(1.0));
        CHECK(table.grad()[0 * 3 + static_cast<std::size_t>(j)] == 0.0);
    }
    Graph::active().clear();

    auto rep = check_grads([&] { return sum(tanh(embedding_rows(table, ids))); }, {table});
    CHECK(rep.max_err < kFdTol);
}

TEST_CASE("concat and slice round-trip") {
    Rng rng(109);
    Tensor a = rand_tensor({3}, rng);
    Tensor b = rand_tensor({2}, rng);
    Tensor c = concat({a, b});
    REQUIRE(c.shape() == Shape{5});
    CHECK(c.at(0) == a.at(0));
    CHECK(c.at(3) == b.at(0));
    Tensor back = slice(c, 3, 2);
    for (int i = 0; i < 2; ++i) CHECK(back.at(i) == b.at(i));
    CHECK_THROWS_AS(slice(c, 4, 2), ShapeError);
    CHECK_THROWS_AS(concat({}), ContractError);

    auto rep = check_grads([&] { return sum(mul(concat({a, b}), concat({a, b}))); }, {a, b});
    CHECK(rep.max_err < kFdTol);
    auto rep2 = check_grads([&] { return sum(slice(concat({a, b}), 1, 3)); }, {a, b});
    CHECK(rep2.max_err < kFdTol);
}

TEST_CASE("row and column slicing") {
    Rng rng(110);
    Tensor x = rand_tensor({4, 6}, rng);
    Tensor r2 = row(x, 2);
    REQUIRE(r2.shape() == Shape{6});
    for (int j = 0; j < 6; ++j) CHECK(r2.at(j) == x.at(2 * 6 + j));
    CHECK_THROWS_AS(row(x, 4), ShapeError);

    Tensor sc = slice_cols(x, 1, 3);
    REQUIRE(sc.shape() == Shape{4, 3});
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 3; ++j) CHECK(sc.at(i * 3 + j) == x.at(i * 6 + 1 + j));
    CHECK_THROWS_AS(slice_cols(x, 4, 3), ShapeError);

    Tensor y = rand_tensor({4, 2}, rng);
    Tensor cc = concat_cols({sc, y});
    REQUIRE(cc.shape() == Shape{4, 5});
    for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < 3; ++j) CHECK(cc.at(i * 5 + j) == sc.at(i * 3 + j));
        for (int j = 0; j < 2; ++j) CHECK(cc.at(i * 5 + 3 + j) == y.at(i * 2 + j));
    }
    CHECK_THROWS_AS(concat_cols({sc, rand_tensor({3, 2}, rng)}), ShapeError);

    auto rep = check_grads(
        [&] { return sum(tanh(concat_cols({slice_cols(x, 1, 3), y}))); }, {x, y});
    CHECK(rep.max_err < kFdTol);
    auto rep2 = check_grads([&] { return sum(mul(row(x, 2), row(x, 2))); }, {x});
    CHECK(rep2.max_err < kFdTol);
}

TEST_CASE("masked softmax rows: zeros at masked keys, unit mass elsewhere") {
    Rng rng(111);
    Tensor x = rand_tensor({3, 5}, rng);
    Mask m{1, 0, 1, 1, 0};
    Tensor y = softmax_masked_rows(x, m);
    auto ref = oracle::ref_softmax_masked(x.values(), 3, 5, m);
    for (long i = 0; i < y.size(); ++i) CHECK(y.at(i) == Catch::Approx(ref[static_cast<std::size_t>(i)]));
    for (int i = 0; i < 3; ++i) {
        CHECK(y.at(i * 5 + 1) == 0.0);  // exactly zero, not merely small
        CHECK(y.at(i * 5 + 4) == 0.0);
        double s = 0;
        for (int j = 0; j < 5; ++j) s += y.at(i * 5 + j);
        CHECK(s == Catch::Approx(1.0));
    }
    CHECK_THROWS_AS(softmax_masked_rows(x, Mask{0, 0, 0, 0, 0}), MaskError);
    CHECK_THROWS_AS(softmax_masked_rows(x, Mask{1, 1}), ShapeError);

    // large logits must not overflow thanks to max subtraction
    Tensor hot({1, 3}, {1000.0, 999.0, -1000.0});
    Tensor yh = softmax_masked_rows(hot, all_valid(3));
    CHECK(yh.at(0) == Catch::Approx(1.0 / (1.0 + std::exp(-1.0))));
    CHECK(std::isfinite(yh.at(2)));

    Tensor w = rand_tensor({5}, rng);
    auto rep = check_grads(
        [&] { return sum(matvec(softmax_masked_rows(x, m), w)); }, {x, w});
    CHECK(rep.max_err < kFdTol);
}

TEST_CASE("maxpool over columns honours the row mask and tie rule") {
    Tensor c({4, 2}, {1.0, 5.0,   //
                      9.0, 2.0,   //
                      9.0, 7.0,   //
                      3.0, 7.0});
    Mask m{1, 1, 1, 1};
    Tensor y = maxpool_cols(c, m);
    CHECK(y.at(0) == 9.0);
    CHECK(y.at(1) == 7.0);

    // gradient goes to the first argmax only (rows 1 and 2 here)
    Graph::active().clear();
    c.set_requires_grad(true);
    Tensor loss = sum(maxpool_cols(c, m));
    backward(loss);
    CHECK(c.grad()[1 * 2 + 0] == 1.0);
    CHECK(c.grad()[2 * 2 + 0] == 0.0);
    CHECK(c.grad()[2 * 2 + 1] == 1.0);
    CHECK(c.grad()[3 * 2 + 1] == 0.0);
    Graph::active().clear();

    // masking row 1 moves the column-0 max to row 2
    Tensor y2 = maxpool_cols(c, Mask{1, 0, 1, 1});
    CHECK(y2.at(0) == 9.0);
    Tensor y3 = maxpool_cols(c, Mask{1, 0, 0, 1});
    CHECK(y3.at(0) == 3.0);

    CHECK_THROWS_AS(maxpool_cols(c, Mask{0, 0, 0, 0}), MaskError);
    CHECK_THROWS_AS(maxpool_cols(c, Mask{1, 1}), ShapeError);

    // a negative-valued column must still pick its true max, not 0
    Tensor neg({2, 1}, {-5.0, -2.0});
    CHECK(maxpool_cols(neg, Mask{1, 1}).at(0) == -2.0);

    Rng rng(112);
    Tensor r = rand_tensor({6, 4}, rng);  // continuous draws: no ties, FD valid
    auto rep = check_grads([&] { return sum(maxpool_cols(r, Mask{1, 1, 0, 1, 1, 0})); }, {r});
    CHECK(rep.max_err < kFdTol);
}

TEST_CASE("mask_zero zeroes values and gradients at padding") {
    Rng rng(113);
    Tensor x = rand_tensor({4}, rng);
    Mask m{1, 0, 1, 0};
    Tensor y = mask_zero(x, m);
    CHECK(y.at(0) == x.at(0));
    CHECK(y.at(1) == 0.0);
    CHECK(y.at(3) == 0.0);
    auto rep = check_grads([&] { return sum(mul(mask_zero(x, m), x)); }, {x});
    CHECK(rep.max_err < kFdTol);
}

TEST_CASE("layer_norm standardises rows then applies gain and bias") {
    Rng rng(114);
    Tensor x = rand_tensor({3, 8}, rng);
    Tensor g = rand_tensor({8}, rng);
    Tensor b = rand_tensor({8}, rng);
    Tensor y = layer_norm(x, g, b);
    for (int r = 0; r < 3; ++r) {
        std::vector<double> xr(x.values().begin() + r * 8, x.values().begin() + (r + 1) * 8);
        auto ref = oracle::ref_layer_norm_row(xr, g.values(), b.values(), 1e-5);
        for (int j = 0; j < 8; ++j) CHECK(y.at(r * 8 + j) == Catch::Approx(ref[static_cast<std::size_t>(j)]));
    }
    // 1-d input behaves as a single row
    Tensor x1 = rand_tensor({8}, rng);
    Tensor y1 = layer_norm(x1, g, b);
    auto ref1 = oracle::ref_layer_norm_row(x1.values(), g.values(), b.values(), 1e-5);
    for (int j = 0; j < 8; ++j) CHECK(y1.at(j) == Catch::Approx(ref1[static_cast<std::size_t>(j)]));

    CHECK_THROWS_AS(layer_norm(x, rand_tensor({4}, rng), b), ShapeError);

    auto rep = check_grads([&] { return sum(tanh(layer_norm(x, g, b))); }, {x, g, b});
    CHECK(rep.max_err < kFdTol);
}

TEST_CASE("instance_norm standardises each channel plane") {
    Rng rng(115);
    Tensor x = rand_tensor({2, 4, 4}, rng);
    Tensor y = instance_norm(x);
    for (int c = 0; c < 2; ++c) {
        double mu = 0, var = 0;
        for (int i = 0; i < 16; ++i) mu += y.at(c * 16 + i);
        mu /= 16;
        for (int i = 0; i < 16; ++i) var += (y.at(c * 16 + i) - mu) * (y.at(c * 16 + i) - mu);
        var /= 16;
        CHECK(mu == Catch::Approx(0.0).margin(1e-12));
        CHECK(var == Catch::Approx(1.0).epsilon(1e-3));  // eps shrinks it slightly
    }
    // batched form normalises per sample and channel
    Tensor xb = rand_tensor({2, 3, 2, 2}, rng);
    Tensor yb = instance_norm(xb);
    REQUIRE(yb.shape() == xb.shape());

    auto rep = check_grads([&] { return sum(mul(instance_norm(x), x)); }, {x});
    CHECK(rep.max_err < kFdTol);
}

TEST_CASE("scale_shift modulates per channel") {
    Rng rng(116);
    Tensor x = rand_tensor({3, 2, 2}, rng);
    Tensor gamma = rand_tensor({3}, rng);
    Tensor beta = rand_tensor({3}, rng);
    Tensor y = scale_shift(x, gamma, beta);
    for (int c = 0; c < 3; ++c)
        for (int i = 0; i < 4; ++i)
            CHECK(y.at(c * 4 + i) == Catch::Approx(gamma.at(c) * x.at(c * 4 + i) + beta.at(c)));
    CHECK_THROWS_AS(scale_shift(x, rand_tensor({2}, rng), beta), ShapeError);

    auto rep = check_grads([&] { return sum(tanh(scale_shift(x, gamma, beta))); }, {x, gamma, beta});
    CHECK(rep.max_err < kFdTol);

    // batched: gamma/beta broadcast over the batch axis
    Tensor xb = rand_tensor({2, 3, 2, 2}, rng);
    Tensor yb = scale_shift(xb, gamma, beta);
    for (int b = 0; b < 2; ++b)
        for (int c = 0; c < 3; ++c)
            for (int i = 0; i < 4; ++i)
                CHECK(yb.at((b * 3 + c) * 4 + i) ==
                      Catch::Approx(gamma.at(c) * xb.at((b * 3 + c) * 4 + i) + beta.at(c)));
}

TEST_CASE("global_avg_pool averages each channel plane") {
    Rng rng(117);
    Tensor x = rand_tensor({3, 2, 4}, rng);
    Tensor y = global_avg_pool(x);
    REQUIRE(y.shape() == Shape{3});
    for (int c = 0; c < 3; ++c) {
        double s = 0;
        for (int i = 0; i < 8; ++i) s += x.at(c * 8 + i);
        CHECK(y.at(c) == Catch::Approx(s / 8));
    }
    Tensor xb = rand_tensor({2, 3, 2, 2}, rng);
    CHECK(global_avg_pool(xb).shape() == Shape{2, 3});

    auto rep = check_grads([&] { return sum(mul(global_avg_pool(x), global_avg_pool(x))); }, {x});
    CHECK(rep.max_err < kFdTol);
}

TEST_CASE("conv2d matches the direct-loop oracle") {
    Rng rng(118);
    SECTION("stride 1, no padding") {
        Tensor x = rand_tensor({2, 5, 6}, rng);
        Tensor k = rand_tensor({3, 2, 3, 3}, rng);
        Tensor y = conv2d(x, k, 1, 0);
        REQUIRE(y.shape() == Shape{3, 3, 4});
        auto ref = oracle::ref_conv2d(x.values(), 1, 2, 5, 6, k.values(), 3, 3, 3, 1, 0);
        for (long i = 0; i < y.size(); ++i) CHECK(y.at(i) == Catch::Approx(ref[static_cast<std::size_t>(i)]));
    }
    SECTION("stride 2 with padding, batched") {
        Tensor x = rand_tensor({2, 3, 7, 7}, rng);
        Tensor k = rand_tensor({4, 3, 3, 3}, rng);
        Tensor y = conv2d(x, k, 2, 1);
        REQUIRE(y.shape() == Shape{2, 4, 4, 4});
        auto ref = oracle::ref_conv2d(x.values(), 2, 3, 7, 7, k.values(), 4, 3, 3, 2, 1);
        for (long i = 0; i < y.size(); ++i) CHECK(y.at(i) == Catch::Approx(ref[static_cast<std::size_t>(i)]));
    }
    SECTION("1x1 identity kernel reproduces the input") {
        Tensor x = rand_tensor({2, 3, 3}, rng);
        Tensor k = Tensor::zeros({2, 2, 1, 1});
        k.at(0) = 1.0;  // k[0][0][0][0]
        k.at(3) = 1.0;  // k[1][1][0][0]
        Tensor y = conv2d(x, k);
        for (long i = 0; i < x.size(); ++i) CHECK(y.at(i) == x.at(i));
    }
    SECTION("shape and config validation") {
        Tensor x = rand_tensor({2, 6, 6}, rng);
        Tensor k = rand_tensor({3, 2, 3, 3}, rng);
        CHECK_THROWS_AS(conv2d(x, k, 2, 0), ConfigError);  // (6-3) not divisible by 2
        CHECK_THROWS_AS(conv2d(x, rand_tensor({3, 4, 3, 3}, rng)), ShapeError);
        CHECK_THROWS_AS(conv2d(x, rand_tensor({3, 2, 8, 8}, rng)), ConfigError);
        CHECK_THROWS_AS(conv2d(x, k, 0, 0), ConfigError);
        CHECK_NOTHROW(conv2d(x, k, 3, 0));  // (6-3)/3 tiles exactly
    }
    SECTION("FD gradients through stride and padding") {
        Tensor x = rand_tensor({1, 2, 7, 7}, rng);
        Tensor k = rand_tensor({2, 2, 3, 3}, rng);
        auto rep = check_grads([&] { return sum(tanh(conv2d(x, k, 2, 1))); }, {x, k});
        CHECK(rep.max_err < kFdTol);
    }
    SECTION("pad2d embeds the input and routes gradients back") {
        Tensor x = rand_tensor({2, 3, 3}, rng);
        Tensor p = pad2d(x, 0, 1, 0, 1);
        REQUIRE(p.shape() == Shape{2, 4, 4});
        for (int c = 0; c < 2; ++c) {
            for (int i = 0; i < 3; ++i)
                for (int j = 0; j < 3; ++j) CHECK(p.at((c * 4 + i) * 4 + j) == x.at((c * 3 + i) * 3 + j));
            for (int j = 0; j < 4; ++j) CHECK(p.at((c * 4 + 3) * 4 + j) == 0.0);
        }
        CHECK_THROWS_AS(pad2d(x, -1, 0, 0, 0), ConfigError);
        auto rep = check_grads([&] { return sum(tanh(pad2d(x, 1, 2, 0, 1))); }, {x});
        CHECK(rep.max_err < kFdTol);

        // even input + bottom/right pad makes a 3x3 stride-2 conv tile exactly
        Tensor img = rand_tensor({1, 8, 8}, rng);
        Tensor k = rand_tensor({2, 1, 3, 3}, rng);
        CHECK_THROWS_AS(conv2d(img, k, 2, 1), ConfigError);
        Tensor y = conv2d(pad2d(img, 0, 1, 0, 1), k, 2, 0);
        CHECK(y.shape() == Shape{2, 4, 4});
    }
}

TEST_CASE("dropout scales kept activations and keeps grads consistent") {
    Rng rng(119);
    Tensor x = rand_tensor({2000}, rng);

    Rng drop_rng(5);
    Tensor y = dropout(x, 0.25, drop_rng);
    long kept = 0;
    for (long i = 0; i < y.size(); ++i) {
        if (y.at(i) == 0.0) continue;
        ++kept;
        CHECK(y.at(i) == Catch::Approx(x.at(i) / 0.75));
    }
    CHECK(kept > 1350);
    CHECK(kept < 1650);  // ~1500 expected

    // rate 0 is the identity
    Rng r2(6);
    Tensor y0 = dropout(x, 0.0, r2);
    for (long i = 0; i < x.size(); ++i) CHECK(y0.at(i) == x.at(i));
    CHECK_THROWS_AS(dropout(x, 1.0, r2), ConfigError);
    CHECK_THROWS_AS(dropout(x, -0.1, r2), ConfigError);

    // backward uses the same mask as forward: grad == out/x elementwise
    Graph::active().clear();
    Tensor xs = rand_tensor({50}, rng);
    Rng r3(7);
    Tensor ys = dropout(xs, 0.5, r3);
    backward(sum(ys));
    for (long i = 0; i < xs.size(); ++i) {
        const double expect = ys.at(i) == 0.0 ? 0.0 : 2.0;
        CHECK(xs.grad()[static_cast<std::size_t>(i)] == Catch::Approx(expect));
    }
    Graph::active().clear();
}

TEST_CASE("bce_with_logits is stable and correct") {
    // moderate logits: agree with the textbook form -y log p - (1-y) log(1-p)
    for (double z : {-3.0, -0.5, 0.0, 0.7, 4.0}) {
        const double p = 1.0 / (1.0 + std::exp(-z));
        Tensor zt = Tensor::scalar(z);
        CHECK(bce_with_logits(zt, 1.0).value() == Catch::Approx(-std::log(p)));
        CHECK(bce_with_logits(zt, 0.0).value() == Catch::Approx(-std::log(1.0 - p)));
    }
    // extreme logits: finite, asymptotically linear
    Tensor big = Tensor::scalar(800.0);
    CHECK(bce_with_logits(big, 0.0).value() == Catch::Approx(800.0));
    CHECK(bce_with_logits(big, 1.0).value() == Catch::Approx(0.0).margin(1e-300));
    Tensor neg = Tensor::scalar(-800.0);
    CHECK(bce_with_logits(neg, 1.0).value() == Catch::Approx(800.0));
    CHECK(std::isfinite(bce_with_logits(neg, 0.0).value()));

    CHECK_THROWS_AS(bce_with_logits(Tensor::scalar(0.0), 0.5), ContractError);
    CHECK_THROWS_AS(bce_with_logits(Tensor({2}, {0.0, 0.0}), 1.0), ContractError);

    Rng rng(120);
    Tensor z = rand_tensor({1}, rng);
    for (double label : {0.0, 1.0}) {
        auto rep = check_grads([&] { return bce_with_logits(z, label); }, {z});
        CHECK(rep.max_err < kFdTol);
    }
}

TEST_CASE("composite helpers: linear layers and scalar mean") {
    Rng rng(121);
    Tensor x = rand_tensor({3, 4}, rng);
    Tensor w = rand_tensor({4, 2}, rng);
    Tensor b = rand_tensor({2}, rng);
    Tensor y = linear(x, w, b);
    REQUIRE(y.shape() == Shape{3, 2});
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 2; ++j) {
            double s = b.at(j);
            for (int p = 0; p < 4; ++p) s += x.at(i * 4 + p) * w.at(p * 2 + j);
            CHECK(y.at(i * 2 + j) == Catch::Approx(s));
        }

    Tensor wv = rand_tensor({2, 4}, rng);
    Tensor v = rand_tensor({4}, rng);
    Tensor bv = rand_tensor({2}, rng);
    Tensor yv = linear_vec(wv, v, bv);
    for (int i = 0; i < 2; ++i) {
        double s = bv.at(i);
        for (int j = 0; j < 4; ++j) s += wv.at(i * 4 + j) * v.at(j);
        CHECK(yv.at(i) == Catch::Approx(s));
    }

    std::vector<Tensor> xs{Tensor::scalar(1.0), Tensor::scalar(2.0), Tensor::scalar(6.0)};
    CHECK(mean_scalars(xs).value() == Catch::Approx(3.0));
    CHECK_THROWS_AS(mean_scalars({}), ContractError);

    auto rep = check_grads([&] { return sum(tanh(linear(x, w, b))); }, {x, w, b});
    CHECK(rep.max_err < kFdTol);
}
