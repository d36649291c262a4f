#include <doctest.h>

#include <cmath>

#include "nrtr/conv.hpp"
#include "nrtr/gradcheck.hpp"
#include "nrtr/rng.hpp"
#include "nrtr/tensor.hpp"

using namespace nrtr;

namespace {

Tensor<double> random_tensor(Rng& rng, const Shape& shape, double lo = -1.0, double hi = 1.0) {
    std::vector<double> data(static_cast<std::size_t>(shape_numel(shape)));
    for (auto& v : data) v = rng.uniform(lo, hi);
    return Tensor<double>::from_data(shape, data, true);
}

/// Kink guard: excludes coordinates where a piecewise op's central
/// difference would straddle the non-smooth point.
using Guard = std::function<bool(const std::vector<Tensor<double>>&, int, std::int64_t)>;

/// Runs grad_check on `f` for 10 random draws of the given input shapes.
void check_op(const char* name,
              const std::function<Tensor<double>(std::vector<Tensor<double>>&)>& f,
              const std::vector<Shape>& shapes, double lo = -1.0, double hi = 1.0,
              const Guard& guard = {}, double tolerance = 1e-4) {
    Rng rng(std::hash<std::string>{}(name));
    for (int rep = 0; rep < 10; ++rep) {
        std::vector<Tensor<double>> inputs;
        for (const auto& s : shapes) inputs.push_back(random_tensor(rng, s, lo, hi));
        std::function<bool(int, std::int64_t)> include;
        if (guard)
            include = [&](int i, std::int64_t j) { return guard(inputs, i, j); };
        const auto res = grad_check(f, inputs, 1e-3, include);
        INFO(std::string(name), " rep ", rep, ": rel err ", res.max_rel_error, " at input ",
             res.worst_input, " coord ", res.worst_coord, " analytic ", res.analytic,
             " numeric ", res.numeric);
        CHECK(res.max_rel_error < tolerance);
    }
}

// |x| must clear the perturbation for abs/relu-style kinks at 0.
const Guard away_from_zero = [](const std::vector<Tensor<double>>& in, int i, std::int64_t j) {
    return std::abs(in[i].value_at(j)) > 2e-3;
};

// both operands of min/max must be separated by more than the perturbation
const Guard operands_separated = [](const std::vector<Tensor<double>>& in, int,
                                    std::int64_t j) {
    return std::abs(in[0].value_at(j) - in[1].value_at(j)) > 2.5e-3;
};

}  // namespace

TEST_SUITE("tensor") {

TEST_CASE("forward fixtures: x^2 at 3 has gradient 6; d(sum(A*B))/dA = B") {
    Tensor<double> x = Tensor<double>::scalar_tensor(3.0, true);
    Tensor<double> y = mul(x, x);
    backward(y);
    CHECK(y.scalar() == 9.0);
    CHECK(x.grad()[0] == 6.0);

    Tensor<double> a = Tensor<double>::from_data({2, 2}, {1, 2, 3, 4}, true);
    Tensor<double> b = Tensor<double>::from_data({2, 2}, {5, 6, 7, 8}, false);
    Tensor<double> s = sum(mul(a, b));
    backward(s);
    CHECK(s.scalar() == 5 + 12 + 21 + 32);
    for (int i = 0; i < 4; ++i) CHECK(a.grad()[i] == b.values()[i]);
}

TEST_CASE("repeated backward accumulates until zero_grad") {
    Tensor<double> x = Tensor<double>::scalar_tensor(2.0, true);
    Tensor<double> y = mul(x, x);
    backward(y);
    backward(y);
    CHECK(x.grad()[0] == 8.0);
    x.zero_grad();
    Tensor<double> z = mul(x, x);
    backward(z);
    CHECK(x.grad()[0] == 4.0);
}

TEST_CASE("shape errors name both shapes") {
    Tensor<double> a = Tensor<double>::zeros({2, 3});
    Tensor<double> b = Tensor<double>::zeros({2, 2});
    CHECK_THROWS_WITH_AS(add(a, b), doctest::Contains("[2,2]"), ShapeError);
    CHECK_THROWS_WITH_AS(matmul(a, a), doctest::Contains("[2,3]"), ShapeError);
}

TEST_CASE("softmax: rows sum to 1; empty axis rejected") {
    Rng rng(5);
    Tensor<double> x = random_tensor(rng, {4, 7});
    Tensor<double> y = softmax(x, 1);
    for (int i = 0; i < 4; ++i) {
        double s = 0;
        for (int j = 0; j < 7; ++j) s += y.value_at(i * 7 + j);
        CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
    }
    CHECK_THROWS_AS(softmax(x, 2), ShapeError);
}

TEST_CASE("reshape/transpose preserve the multiset of values") {
    Rng rng(6);
    Tensor<double> x = random_tensor(rng, {3, 4, 5});
    CHECK(reshape(x, {5, 12}).values().sum() == doctest::Approx(x.values().sum()));
    Tensor<double> t = transpose(x, {2, 0, 1});
    CHECK(t.shape() == Shape{5, 3, 4});
    CHECK(t.values().sum() == doctest::Approx(x.values().sum()).epsilon(1e-12));
    CHECK(t.value_at(0) == x.value_at(0));
    // round trip is the identity
    Tensor<double> back = transpose(t, {1, 2, 0});
    for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(back.value_at(i) == x.value_at(i));
}

TEST_CASE("conv3d: 1x1x1 identity kernel, all-ones tap counting") {
    Tensor<double> x = Tensor<double>::from_data({1, 1, 2, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
    Tensor<double> w = Tensor<double>::from_data({1, 1, 1, 1, 1}, {1.0});
    Tensor<double> y = conv3d(x, w, 1, 0);
    for (int i = 0; i < 8; ++i) CHECK(y.value_at(i) == x.value_at(i));

    // All-ones 3^3 kernel over an all-ones 5^3 input with padding 1 counts
    // the in-bounds taps: 27 in the interior, 8 at the corners.
    Tensor<double> ones = Tensor<double>::filled({1, 1, 5, 5, 5}, 1.0);
    Tensor<double> k3 = Tensor<double>::filled({1, 1, 3, 3, 3}, 1.0);
    Tensor<double> z = conv3d(ones, k3, 1, 1);
    CHECK(z.shape() == Shape{1, 1, 5, 5, 5});
    CHECK(z.value_at(2 * 25 + 2 * 5 + 2) == 27.0);
    CHECK(z.value_at(0) == 8.0);
    Tensor<double> zd = conv3d_direct(ones, k3, 1, 1);
    for (int i = 0; i < 125; ++i) CHECK(zd.value_at(i) == z.value_at(i));
}

TEST_CASE("conv3d: blocked path matches the direct path within 1e-6") {
    Rng rng(8);
    for (int rep = 0; rep < 5; ++rep) {
        Tensor<double> x = random_tensor(rng, {2, 3, 6, 5, 4});
        Tensor<double> w = random_tensor(rng, {4, 3, 3, 3, 3});
        const int stride = 1 + rep % 2;
        Tensor<double> fast = conv3d(x, w, stride, 1);
        Tensor<double> slow = conv3d_direct(x, w, stride, 1);
        REQUIRE(fast.shape() == slow.shape());
        for (std::int64_t i = 0; i < fast.numel(); ++i)
            CHECK(fast.value_at(i) == doctest::Approx(slow.value_at(i)).epsilon(1e-6));

        // and their backward passes agree
        Tensor<double> xs = random_tensor(rng, {1, 2, 4, 4, 4});
        Tensor<double> ws = random_tensor(rng, {3, 2, 3, 3, 3});
        Tensor<double> lf = sum(mul(conv3d(xs, ws, stride, 1), conv3d(xs, ws, stride, 1)));
        backward(lf);
        auto gx = xs.grad();
        auto gw = ws.grad();
        xs.zero_grad();
        ws.zero_grad();
        Tensor<double> ls =
            sum(mul(conv3d_direct(xs, ws, stride, 1), conv3d_direct(xs, ws, stride, 1)));
        backward(ls);
        for (std::int64_t i = 0; i < xs.numel(); ++i)
            CHECK(xs.grad()[i] == doctest::Approx(gx[i]).epsilon(1e-6));
        for (std::int64_t i = 0; i < ws.numel(); ++i)
            CHECK(ws.grad()[i] == doctest::Approx(gw[i]).epsilon(1e-6));
    }
}

TEST_CASE("grad_check: linear functions are exact to machine precision") {
    std::vector<Tensor<double>> inputs{Tensor<double>::from_data({3}, {1.0, 2.0, 3.0}, true)};
    const auto res = grad_check(
        [](std::vector<Tensor<double>>& in) { return sum(scalar_mul(in[0], 4.0)); }, inputs);
    CHECK(res.max_rel_error < 1e-10);
}

TEST_CASE("grad_check: every primitive at tolerance 1e-4") {
    using V = std::vector<Tensor<double>>;
    check_op("add", [](V& in) { return sum(add(in[0], in[1])); }, {{3, 4}, {3, 4}});
    check_op("add.broadcast", [](V& in) { return sum(mul(add(in[0], in[1]), in[0])); },
             {{3, 4}, {4}});
    check_op("sub", [](V& in) { return sum(mul(sub(in[0], in[1]), in[0])); }, {{2, 5}, {2, 5}});
    check_op("mul.broadcast", [](V& in) { return sum(mul(in[0], in[1])); }, {{2, 3, 4}, {4}});
    check_op("div", [](V& in) { return sum(div(in[0], in[1])); }, {{3, 3}, {3, 3}}, 0.5, 2.0);
    check_op("neg", [](V& in) { return sum(mul(neg(in[0]), in[0])); }, {{7}});
    check_op("abs", [](V& in) { return sum(abs(in[0])); }, {{10}}, -1.0, 1.0, away_from_zero);
    check_op("log", [](V& in) { return sum(log(in[0])); }, {{6}}, 0.5, 3.0);
    check_op("exp", [](V& in) { return sum(exp(in[0])); }, {{6}});
    check_op("sqrt", [](V& in) { return sum(sqrt(in[0])); }, {{6}}, 0.5, 3.0);
    check_op("relu", [](V& in) { return sum(mul(relu(in[0]), in[0])); }, {{12}}, -1.0, 1.0,
             away_from_zero);
    check_op("sigmoid", [](V& in) { return sum(sigmoid(in[0])); }, {{9}}, -3.0, 3.0);
    check_op("gelu", [](V& in) { return sum(gelu(in[0])); }, {{9}}, -3.0, 3.0);
    check_op("clamp", [](V& in) { return sum(clamp(in[0], -0.5, 0.5)); }, {{11}}, -1.0, 1.0,
             [](const V& in, int i, std::int64_t j) {
                 return std::abs(std::abs(in[i].value_at(j)) - 0.5) > 2e-3;
             });
    check_op("minmax",
             [](V& in) { return sum(sub(maximum(in[0], in[1]), minimum(in[0], in[1]))); },
             {{8}, {8}}, -1.0, 1.0, operands_separated);
    check_op("scalar_ops", [](V& in) { return sum(scalar_add(scalar_mul(in[0], 2.5), 0.75)); },
             {{5}});
    check_op("matmul", [](V& in) { return sum(mul(matmul(in[0], in[1]), matmul(in[0], in[1]))); },
             {{3, 4}, {4, 5}});
    check_op("mean", [](V& in) { return mean(mul(in[0], in[0])); }, {{3, 7}});
    check_op("reshape.transpose",
             [](V& in) {
                 return sum(mul(transpose(reshape(in[0], {4, 3}), {1, 0}),
                                transpose(reshape(in[0], {4, 3}), {1, 0})));
             },
             {{3, 4}});
    check_op("concat.slice",
             [](V& in) {
                 Tensor<double> c = concat<double>({in[0], in[1]}, 1);
                 return sum(mul(slice(c, {0, 1}, {2, 4}), slice(c, {0, 2}, {2, 4})));
             },
             {{2, 3}, {2, 3}});
    check_op("embedding_lookup",
             [](V& in) {
                 return sum(mul(embedding_lookup(in[0], {2, 0, 2, 1}),
                                embedding_lookup(in[0], {1, 1, 0, 2})));
             },
             {{3, 4}});
    check_op("softmax", [](V& in) { return sum(mul(softmax(in[0], 1), in[1])); },
             {{3, 5}, {3, 5}});
    check_op("softmax.axis0", [](V& in) { return sum(mul(softmax(in[0], 0), in[1])); },
             {{4, 3}, {4, 3}});
    check_op("layernorm", [](V& in) { return sum(mul(layernorm(in[0], 1), in[1])); },
             {{2, 8}, {2, 8}});
    check_op("layernorm.conv", [](V& in) { return sum(mul(layernorm(in[0], 1), in[1])); },
             {{2, 3, 2, 2, 2}, {2, 3, 2, 2, 2}});
    check_op("attention",
             [](V& in) {
                 return sum(mul(scaled_dot_product_attention(in[0], in[1], in[2]), in[3]));
             },
             {{2, 3, 4}, {2, 5, 4}, {2, 5, 4}, {2, 3, 4}});
    check_op("conv3d",
             [](V& in) { return sum(mul(conv3d(in[0], in[1], 2, 1), in[2])); },
             {{1, 2, 5, 5, 5}, {3, 2, 3, 3, 3}, {1, 3, 3, 3, 3}});
    check_op("conv3d_direct",
             [](V& in) { return sum(mul(conv3d_direct(in[0], in[1], 1, 0), in[2])); },
             {{1, 2, 4, 4, 4}, {2, 2, 3, 3, 3}, {1, 2, 2, 2, 2}});
    check_op("add_channel_bias",
             [](V& in) { return sum(mul(add_channel_bias(in[0], in[1]), in[0])); },
             {{2, 3, 2, 2, 2}, {3}});
    check_op("avgpool3d", [](V& in) { return sum(mul(avgpool3d(in[0], 2, 2), in[1])); },
             {{1, 2, 4, 4, 4}, {1, 2, 2, 2, 2}});
    check_op("upsample_nearest3d",
             [](V& in) { return sum(mul(upsample_nearest3d(in[0], 2), in[1])); },
             {{1, 2, 2, 2, 2}, {1, 2, 4, 4, 4}});
}

TEST_CASE("grad_check: relu kink coordinates are excluded by the |x| guard") {
    std::vector<Tensor<double>> inputs{
        Tensor<double>::from_data({3}, {-1.0, 1e-5, 1.0}, true)};
    const auto guarded = grad_check(
        [](std::vector<Tensor<double>>& in) { return sum(relu(in[0])); }, inputs, 1e-3,
        [&](int, std::int64_t j) { return std::abs(inputs[0].value_at(j)) > 1e-3; });
    CHECK(guarded.checked == 2);
    CHECK(guarded.max_rel_error < 1e-10);
}

TEST_CASE("forward determinism: bit-identical per thread count, 1e-6 across counts") {
    Rng rng(77);
    Tensor<double> x = random_tensor(rng, {1, 3, 8, 8, 8});
    Tensor<double> w = random_tensor(rng, {8, 3, 3, 3, 3});
    setenv("NRTR_THREADS", "1", 1);
    Tensor<double> y1 = conv3d(x, w, 1, 1);
    Tensor<double> y1b = conv3d(x, w, 1, 1);
    for (std::int64_t i = 0; i < y1.numel(); ++i) CHECK(y1.value_at(i) == y1b.value_at(i));

    setenv("NRTR_THREADS", "3", 1);
    Tensor<double> y3 = conv3d(x, w, 1, 1);
    Tensor<double> y3b = conv3d(x, w, 1, 1);
    for (std::int64_t i = 0; i < y1.numel(); ++i) {
        CHECK(y3.value_at(i) == y3b.value_at(i));
        CHECK(y3.value_at(i) ==
              doctest::Approx(y1.value_at(i)).epsilon(1e-6).scale(std::abs(y1.value_at(i)) + 1));
    }
    unsetenv("NRTR_THREADS");
}

}  // TEST_SUITE
