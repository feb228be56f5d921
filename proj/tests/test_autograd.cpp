#include <doctest.h>

#include <cmath>
#include <limits>

#include "seam/autograd.hpp"
#include "seam/ops.hpp"
#include "support/gradcheck.hpp"

using namespace seam;
using testsupport::gradcheck;
using testsupport::GradcheckOptions;

namespace {

/// Reduce y to a scalar through a fixed random weighting so every output
/// element influences the loss differently; catches transposed layouts that
/// a plain sum would miss.
Tensor weighted_sum(const Tensor& y, std::uint64_t seed) {
    Rng r(seed);
    Tensor w = Tensor::uniform(y.shape(), -1.0, 1.0, r, y.dtype());
    return ops::sum(ops::mul(y, w));
}

/// Uniform values in [-1,-0.1] or [0.1,1]; keeps relu and maxpool inputs
/// away from kinks and ties where finite differences are invalid.
Tensor signed_uniform(Shape shape, Rng& rng, bool requires_grad) {
    Tensor t = Tensor::uniform(std::move(shape), 0.1, 1.0, rng, DType::f64, requires_grad);
    for (std::int64_t i = 0; i < t.size(); ++i) {
        if (rng.uniform() < 0.5) {
            t.set(i, -t.at(i));
        }
    }
    return t;
}

} // namespace

TEST_SUITE("autograd") {

TEST_CASE("matmul forward matches a hand example") {
    Tensor a = Tensor::from_f64({2, 2}, {1, 2, 3, 4});
    Tensor b = Tensor::from_f64({2, 2}, {5, 6, 7, 8});
    Tensor c = ops::matmul(a, b);
    CHECK(c.at(0) == 19.0);
    CHECK(c.at(1) == 22.0);
    CHECK(c.at(2) == 43.0);
    CHECK(c.at(3) == 50.0);
}

TEST_CASE("matmul gradients match finite differences") {
    for (std::uint64_t seed : {1, 2, 3}) {
        Rng rng(seed);
        Tensor a = Tensor::uniform({3, 4}, -1, 1, rng, DType::f64, true);
        Tensor b = Tensor::uniform({4, 5}, -1, 1, rng, DType::f64, true);
        auto res = gradcheck([&] { return weighted_sum(ops::matmul(a, b), seed); }, {a, b});
        CHECK_MESSAGE(res.ok(), res.worst);
    }
}

TEST_CASE("matmul validates shapes and dtypes") {
    CHECK_THROWS_AS(ops::matmul(Tensor::zeros({2, 3}), Tensor::zeros({4, 2})), ShapeError);
    CHECK_THROWS_AS(ops::matmul(Tensor::zeros({2}), Tensor::zeros({2, 2})), ShapeError);
    CHECK_THROWS_AS(ops::matmul(Tensor::zeros({2, 2}), Tensor::zeros({2, 2}, DType::f64)),
                    DTypeError);
}

TEST_CASE("linear gradients match finite differences") {
    for (std::uint64_t seed : {4, 5, 6}) {
        Rng rng(seed);
        Tensor x = Tensor::uniform({5, 7}, -1, 1, rng, DType::f64, true);
        Tensor w = Tensor::uniform({3, 7}, -1, 1, rng, DType::f64, true);
        Tensor b = Tensor::uniform({3}, -1, 1, rng, DType::f64, true);
        auto res = gradcheck([&] { return weighted_sum(ops::linear(x, w, b), seed); }, {x, w, b});
        CHECK_MESSAGE(res.ok(), res.worst);

        auto res2 = gradcheck([&] { return weighted_sum(ops::linear(x, w, Tensor{}), seed); },
                              {x, w});
        CHECK_MESSAGE(res2.ok(), res2.worst);
    }
}

TEST_CASE("linear agrees with matmul against the transposed weight") {
    Rng rng(9);
    Tensor x = Tensor::uniform({4, 6}, -1, 1, rng, DType::f64);
    Tensor w = Tensor::uniform({2, 6}, -1, 1, rng, DType::f64);
    Tensor wt = Tensor::zeros({6, 2}, DType::f64);
    for (std::int64_t o = 0; o < 2; ++o) {
        for (std::int64_t i = 0; i < 6; ++i) {
            wt.set(i * 2 + o, w.at(o * 6 + i));
        }
    }
    Tensor y1 = ops::linear(x, w, Tensor{});
    Tensor y2 = ops::matmul(x, wt);
    for (std::int64_t i = 0; i < y1.size(); ++i) {
        CHECK(y1.at(i) == doctest::Approx(y2.at(i)).epsilon(1e-12));
    }
}

TEST_CASE("conv2d forward matches hand-computed windows") {
    // 3x3 input 1..9, 2x2 kernel picking top-left and bottom-right
    Tensor x = Tensor::from_f64({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    Tensor w = Tensor::from_f64({1, 1, 2, 2}, {1, 0, 0, 1});
    Tensor bias = Tensor::from_f64({1}, {0.5});

    Tensor y = ops::conv2d(x, w, bias, 1, 0);
    CHECK(y.shape() == Shape{1, 1, 2, 2});
    CHECK(y.at(0) == 6.5);
    CHECK(y.at(1) == 8.5);
    CHECK(y.at(2) == 12.5);
    CHECK(y.at(3) == 14.5);

    Tensor yp = ops::conv2d(x, w, Tensor{}, 1, 1);
    CHECK(yp.shape() == Shape{1, 1, 4, 4});
    CHECK(yp.at(0) == 1.0);  // only kernel's (1,1) tap lands in-bounds
    CHECK(yp.at(5) == 6.0);  // interior window: x[0,0] + x[1,1]

    Tensor ys = ops::conv2d(x, w, Tensor{}, 2, 0);
    CHECK(ys.shape() == Shape{1, 1, 1, 1});
    CHECK(ys.at(0) == 6.0);
}

TEST_CASE("conv2d gradients match finite differences") {
    struct Case {
        Shape x, w;
        int stride, pad;
    };
    const Case cases[] = {
        {{2, 3, 7, 6}, {4, 3, 3, 3}, 1, 1},
        {{1, 2, 6, 6}, {3, 2, 3, 3}, 2, 0},
        {{2, 1, 5, 7}, {2, 1, 2, 3}, 1, 0}, // rectangular kernel
    };
    std::uint64_t seed = 10;
    for (const auto& c : cases) {
        Rng rng(seed);
        Tensor x = Tensor::uniform(c.x, -1, 1, rng, DType::f64, true);
        Tensor w = Tensor::uniform(c.w, -1, 1, rng, DType::f64, true);
        Tensor b = Tensor::uniform({c.w[0]}, -1, 1, rng, DType::f64, true);
        auto res = gradcheck(
            [&] { return weighted_sum(ops::conv2d(x, w, b, c.stride, c.pad), seed); }, {x, w, b});
        CHECK_MESSAGE(res.ok(), res.worst);
        ++seed;
    }
}

TEST_CASE("conv2d validates geometry") {
    Tensor x = Tensor::zeros({1, 2, 4, 4}, DType::f64);
    CHECK_THROWS_AS(ops::conv2d(x, Tensor::zeros({1, 3, 3, 3}, DType::f64), Tensor{}, 1, 0),
                    ShapeError); // channel mismatch
    CHECK_THROWS_AS(ops::conv2d(x, Tensor::zeros({1, 2, 5, 5}, DType::f64), Tensor{}, 1, 0),
                    ShapeError); // kernel exceeds input
    CHECK_THROWS_AS(ops::conv2d(x, Tensor::zeros({1, 2, 3, 3}, DType::f64), Tensor{}, 0, 0),
                    ValidationError);
    CHECK_THROWS_AS(ops::conv2d(x, Tensor::zeros({1, 2, 3, 3}, DType::f64), Tensor{}, 1, -1),
                    ValidationError);
    CHECK_THROWS_AS(
        ops::conv2d(x, Tensor::zeros({1, 2, 3, 3}, DType::f64), Tensor::zeros({2}, DType::f64), 1, 0),
        ShapeError); // bias length != filter count
}

TEST_CASE("relu gradients match finite differences away from the kink") {
    for (std::uint64_t seed : {20, 21, 22}) {
        Rng rng(seed);
        Tensor x = signed_uniform({4, 9}, rng, true);
        auto res = gradcheck([&] { return weighted_sum(ops::relu(x), seed); }, {x});
        CHECK_MESSAGE(res.ok(), res.worst);
    }
}

TEST_CASE("maxpool2d forward picks window maxima") {
    Tensor x = Tensor::from_f64({1, 1, 4, 4},
                                {1, 2, 9, 4,
                                 5, 6, 7, 8,
                                 3, 2, 1, 0,
                                 4, 4, 4, 4});
    Tensor y = ops::maxpool2d(x, 2, 2);
    CHECK(y.shape() == Shape{1, 1, 2, 2});
    CHECK(y.at(0) == 6.0);
    CHECK(y.at(1) == 9.0);
    CHECK(y.at(2) == 4.0);
    CHECK(y.at(3) == 4.0);
}

TEST_CASE("maxpool2d routes gradient to the first maximum on ties") {
    Tensor x = Tensor::full({1, 1, 2, 2}, 3.0, DType::f64, true);
    Tensor loss = ops::sum(ops::maxpool2d(x, 2, 2));
    autograd::backward(loss);
    CHECK(x.grad_at(0) == 1.0);
    CHECK(x.grad_at(1) == 0.0);
    CHECK(x.grad_at(2) == 0.0);
    CHECK(x.grad_at(3) == 0.0);
}

TEST_CASE("maxpool2d gradients match finite differences") {
    for (std::uint64_t seed : {30, 31, 32}) {
        Rng rng(seed);
        Tensor x = Tensor::uniform({2, 3, 6, 6}, -1, 1, rng, DType::f64, true);
        auto res = gradcheck([&] { return weighted_sum(ops::maxpool2d(x, 2, 2), seed); }, {x});
        CHECK_MESSAGE(res.ok(), res.worst);
    }
    CHECK_THROWS_AS(ops::maxpool2d(Tensor::zeros({1, 1, 2, 2}), 3, 1), ShapeError);
    CHECK_THROWS_AS(ops::maxpool2d(Tensor::zeros({2, 2}), 1, 1), ShapeError);
    CHECK_THROWS_AS(ops::maxpool2d(Tensor::zeros({1, 1, 2, 2}), 2, 0), ValidationError);
}

TEST_CASE("dropout eval mode returns the identical handle") {
    Rng rng(1);
    Tensor x = Tensor::uniform({3, 3}, -1, 1, rng, DType::f64, true);
    Tensor y = ops::dropout(x, 0.5, false, rng);
    CHECK(y.same_storage(x));
    CHECK_THROWS_AS(ops::dropout(x, 1.0, true, rng), ValidationError);
    CHECK_THROWS_AS(ops::dropout(x, -0.1, true, rng), ValidationError);
}

TEST_CASE("dropout training scales survivors and zeroes the rest") {
    Rng rng(77);
    Tensor x = Tensor::full({1000}, 1.0, DType::f64);
    Rng drop(5);
    Tensor y = ops::dropout(x, 0.25, true, drop);
    int kept = 0;
    for (std::int64_t i = 0; i < y.size(); ++i) {
        const double v = y.at(i);
        CHECK((v == 0.0 || v == doctest::Approx(1.0 / 0.75)));
        kept += v != 0.0;
    }
    CHECK(kept > 650);
    CHECK(kept < 850);

    Rng d1(5), d2(5);
    Tensor y1 = ops::dropout(x, 0.25, true, d1);
    Tensor y2 = ops::dropout(x, 0.25, true, d2);
    for (std::int64_t i = 0; i < y1.size(); ++i) {
        CHECK(y1.at(i) == y2.at(i));
    }
}

TEST_CASE("dropout gradients match finite differences under a fixed mask") {
    for (std::uint64_t seed : {40, 41}) {
        Rng rng(seed);
        Tensor x = Tensor::uniform({4, 8}, -1, 1, rng, DType::f64, true);
        auto res = gradcheck(
            [&] {
                Rng drop(seed + 100); // same mask on every evaluation
                return weighted_sum(ops::dropout(x, 0.3, true, drop), seed);
            },
            {x});
        CHECK_MESSAGE(res.ok(), res.worst);
    }
}

TEST_CASE("flatten reshapes without reordering") {
    Tensor x = Tensor::from_f64({2, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
    Tensor y = ops::flatten(x);
    CHECK(y.shape() == Shape{2, 4});
    for (std::int64_t i = 0; i < 8; ++i) {
        CHECK(y.at(i) == x.at(i));
    }
    CHECK_THROWS_AS(ops::flatten(Tensor::zeros({4})), ShapeError);

    Rng rng(50);
    Tensor xi = Tensor::uniform({2, 3, 4}, -1, 1, rng, DType::f64, true);
    auto res = gradcheck([&] { return weighted_sum(ops::flatten(xi), 50); }, {xi});
    CHECK_MESSAGE(res.ok(), res.worst);
}

TEST_CASE("add supports equal shapes and row-broadcast bias") {
    Tensor a = Tensor::from_f64({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor b = Tensor::from_f64({3}, {10, 20, 30});
    Tensor y = ops::add(a, b);
    CHECK(y.at(0) == 11.0);
    CHECK(y.at(4) == 25.0);
    CHECK_THROWS_AS(ops::add(a, Tensor::zeros({2}, DType::f64)), ShapeError);
    CHECK_THROWS_AS(ops::add(a, Tensor::zeros({2, 3})), DTypeError);

    for (std::uint64_t seed : {60, 61}) {
        Rng rng(seed);
        Tensor p = Tensor::uniform({3, 4}, -1, 1, rng, DType::f64, true);
        Tensor q = Tensor::uniform({3, 4}, -1, 1, rng, DType::f64, true);
        Tensor r = Tensor::uniform({4}, -1, 1, rng, DType::f64, true);
        auto res = gradcheck([&] { return weighted_sum(ops::add(p, q), seed); }, {p, q});
        CHECK_MESSAGE(res.ok(), res.worst);
        auto res2 = gradcheck([&] { return weighted_sum(ops::add(p, r), seed); }, {p, r});
        CHECK_MESSAGE(res2.ok(), res2.worst);
    }
}

TEST_CASE("mul, scale and sum gradients match finite differences") {
    for (std::uint64_t seed : {70, 71}) {
        Rng rng(seed);
        Tensor a = Tensor::uniform({4, 5}, -1, 1, rng, DType::f64, true);
        Tensor b = Tensor::uniform({4, 5}, -1, 1, rng, DType::f64, true);
        auto res = gradcheck([&] { return weighted_sum(ops::mul(a, b), seed); }, {a, b});
        CHECK_MESSAGE(res.ok(), res.worst);
        auto res2 = gradcheck([&] { return weighted_sum(ops::scale(a, -2.5), seed); }, {a});
        CHECK_MESSAGE(res2.ok(), res2.worst);
        auto res3 = gradcheck([&] { return ops::sum(a); }, {a});
        CHECK_MESSAGE(res3.ok(), res3.worst);
    }
    CHECK_THROWS_AS(ops::mul(Tensor::zeros({2, 2}), Tensor::zeros({4})), ShapeError);
}

TEST_CASE("gather_cols picks columns and scatters gradient back") {
    Tensor x = Tensor::from_f64({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor y = ops::gather_cols(x, {2, 0});
    CHECK(y.shape() == Shape{2, 2});
    CHECK(y.at(0) == 3.0);
    CHECK(y.at(1) == 1.0);
    CHECK(y.at(2) == 6.0);
    CHECK(y.at(3) == 4.0);
    CHECK_THROWS_AS(ops::gather_cols(x, {3}), ValidationError);
    CHECK_THROWS_AS(ops::gather_cols(x, {}), ValidationError);
    CHECK_THROWS_AS(ops::gather_cols(Tensor::zeros({4}), {0}), ShapeError);

    Rng rng(80);
    Tensor xi = Tensor::uniform({3, 5}, -1, 1, rng, DType::f64, true);
    auto res = gradcheck([&] { return weighted_sum(ops::gather_cols(xi, {4, 1, 1}), 80); }, {xi});
    CHECK_MESSAGE(res.ok(), res.worst);
}

TEST_CASE("softmax_cross_entropy matches the direct formula") {
    Tensor z = Tensor::from_f64({2, 2}, {1, 1, 2, 0});
    Tensor t = Tensor::from_f64({2, 2}, {1, 0, 0, 1});
    const double expected =
        (std::log(2.0) + (2.0 + std::log(1.0 + std::exp(-2.0)))) / 2.0;
    Tensor loss = ops::softmax_cross_entropy(z, t);
    CHECK(loss.shape() == Shape{1});
    CHECK(loss.at(0) == doctest::Approx(expected).epsilon(1e-12));
    CHECK(loss.at(0) >= 0.0);
}

TEST_CASE("softmax_cross_entropy survives large logits") {
    Tensor z = Tensor::from_f64({1, 3}, {1000.0, 999.0, -1000.0});
    Tensor t = Tensor::from_f64({1, 3}, {0, 1, 0});
    Tensor loss = ops::softmax_cross_entropy(z, t);
    CHECK(loss.all_finite());
    CHECK(loss.at(0) == doctest::Approx(std::log(1.0 + std::exp(-1.0)) + 1.0).epsilon(1e-9));
}

TEST_CASE("softmax_cross_entropy validates labels") {
    Tensor z = Tensor::zeros({2, 3}, DType::f64);
    CHECK_THROWS_AS(
        ops::softmax_cross_entropy(z, Tensor::from_f64({2, 3}, {1, 1, 0, 0, 1, 0})),
        ValidationError);
    CHECK_THROWS_AS(
        ops::softmax_cross_entropy(z, Tensor::from_f64({2, 3}, {0.5, 0.5, 0, 0, 1, 0})),
        ValidationError);
    CHECK_THROWS_AS(
        ops::softmax_cross_entropy(z, Tensor::from_f64({2, 3}, {0, 0, 0, 0, 1, 0})),
        ValidationError);
    CHECK_THROWS_AS(ops::softmax_cross_entropy(z, Tensor::zeros({3, 3}, DType::f64)), ShapeError);
    CHECK_THROWS_AS(
        ops::softmax_cross_entropy(Tensor::zeros({2, 1}, DType::f64),
                                   Tensor::from_f64({2, 1}, {1, 1})),
        ValidationError);
}

TEST_CASE("softmax_cross_entropy gradients match finite differences") {
    for (std::uint64_t seed : {90, 91, 92}) {
        Rng rng(seed);
        Tensor z = Tensor::uniform({6, 5}, -2, 2, rng, DType::f64, true);
        std::vector<int> labels;
        for (int i = 0; i < 6; ++i) {
            labels.push_back(static_cast<int>(rng.index(5)));
        }
        Tensor t = ops::one_hot(labels, 5, DType::f64);
        auto res = gradcheck([&] { return ops::softmax_cross_entropy(z, t); }, {z});
        CHECK_MESSAGE(res.ok(), res.worst);
    }
}

TEST_CASE("softmax_rows, argmax_rows and one_hot behave") {
    Tensor z = Tensor::from_f64({2, 3}, {1, 3, 2, -1, -5, 0});
    auto p = ops::softmax_rows(z);
    CHECK(p[0] + p[1] + p[2] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(p[1] > p[2]);
    auto am = ops::argmax_rows(z);
    CHECK(am[0] == 1);
    CHECK(am[1] == 2);

    Tensor oh = ops::one_hot({2, 0}, 3, DType::f64);
    CHECK(oh.at(2) == 1.0);
    CHECK(oh.at(3) == 1.0);
    CHECK(oh.at(0) == 0.0);
    CHECK_THROWS_AS(ops::one_hot({3}, 3), ValidationError);
    CHECK_THROWS_AS(ops::one_hot({-1}, 3), ValidationError);
    CHECK_THROWS_AS(ops::one_hot({}, 3), ValidationError);
}

TEST_CASE("gradients accumulate when a tensor is used twice") {
    Tensor x = Tensor::from_f64({2}, {3.0, -1.0}, true);
    Tensor loss = ops::sum(ops::add(ops::mul(x, x), x)); // x^2 + x
    autograd::backward(loss);
    CHECK(x.grad_at(0) == doctest::Approx(2 * 3.0 + 1));
    CHECK(x.grad_at(1) == doctest::Approx(2 * -1.0 + 1));
}

TEST_CASE("diamond-shaped graphs backpropagate once per node") {
    Tensor x = Tensor::from_f64({1}, {2.0}, true);
    Tensor y = ops::scale(x, 3.0);
    Tensor loss = ops::sum(ops::mul(y, y)); // (3x)^2, dx = 18x
    autograd::backward(loss);
    CHECK(x.grad_at(0) == doctest::Approx(36.0));
}

TEST_CASE("backward validates its argument") {
    Tensor x = Tensor::from_f64({2, 2}, {1, 2, 3, 4}, true);
    CHECK_THROWS_AS(autograd::backward(ops::relu(x)), ValidationError);
    CHECK_THROWS_AS(autograd::backward(Tensor{}), ValidationError);

    Tensor frozen = Tensor::from_f64({2}, {1, 2});
    Tensor loss = ops::sum(frozen);
    CHECK_FALSE(loss.requires_grad());
    CHECK_NOTHROW(autograd::backward(loss)); // no-op
    CHECK_FALSE(frozen.has_grad());
}

TEST_CASE("non-finite forward values raise NumericError") {
    Tensor big = Tensor::full({2}, 1e308, DType::f64);
    CHECK_THROWS_AS(ops::scale(big, 1e10), NumericError);
    Tensor nan = Tensor::full({1, 2}, std::numeric_limits<double>::quiet_NaN(), DType::f64);
    CHECK_THROWS_AS(ops::relu(nan), NumericError);
}

TEST_CASE("non-finite gradients raise NumericError") {
    Tensor x = Tensor::from_f64({2}, {1.0, 2.0}, true);
    detail::Storage data;
    data.f64 = {1.0, 2.0};
    Tensor y = autograd::make_output(
        {2}, DType::f64, std::move(data), "poison", {x}, [x](const Tensor&) {
            accumulate_grad(const_cast<Tensor&>(x),
                            Tensor::full({2}, std::numeric_limits<double>::infinity(), DType::f64));
        });
    Tensor loss = ops::sum(y);
    CHECK_THROWS_AS(autograd::backward(loss), NumericError);
}

TEST_CASE("sgd_step updates parameters and clears gradients") {
    Tensor w = Tensor::from_f64({2}, {1.0, -2.0}, true);
    Tensor loss = ops::sum(ops::mul(w, w));
    autograd::backward(loss);
    std::vector<Tensor> params{w};
    autograd::sgd_step(params, 0.25);
    CHECK(w.at(0) == doctest::Approx(1.0 - 0.25 * 2.0));
    CHECK(w.at(1) == doctest::Approx(-2.0 + 0.25 * 4.0));
    CHECK_FALSE(w.has_grad());

    CHECK_THROWS_AS(autograd::sgd_step(params, 0.1), ValidationError);
}

TEST_CASE("a small composite network gradchecks end to end") {
    for (std::uint64_t seed : {100, 101}) {
        Rng rng(seed);
        Tensor x = Tensor::uniform({3, 6}, -1, 1, rng, DType::f64);
        Tensor w1 = Tensor::uniform({4, 6}, -0.5, 0.5, rng, DType::f64, true);
        Tensor b1 = Tensor::uniform({4}, -0.1, 0.1, rng, DType::f64, true);
        Tensor w2 = Tensor::uniform({3, 4}, -0.5, 0.5, rng, DType::f64, true);
        Tensor b2 = Tensor::uniform({3}, -0.1, 0.1, rng, DType::f64, true);
        Tensor t = ops::one_hot({0, 2, 1}, 3, DType::f64);
        auto res = gradcheck(
            [&] {
                Tensor h = ops::relu(ops::linear(x, w1, b1));
                return ops::softmax_cross_entropy(ops::linear(h, w2, b2), t);
            },
            {w1, b1, w2, b2});
        CHECK_MESSAGE(res.ok(), res.worst);
    }
}

} // TEST_SUITE
