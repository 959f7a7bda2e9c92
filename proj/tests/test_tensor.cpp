#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "tatr/gradcheck.hpp"
#include "tatr/tensor.hpp"

using namespace tatr;
using D = TensorT<double>;
using DPtr = TensorPtr<double>;

namespace {

DPtr random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    std::vector<double> vals(static_cast<std::size_t>(numel_of(shape)));
    for (auto& v : vals) v = rng.uniform(lo, hi);
    return D::create(std::move(shape), std::move(vals));
}

}  // namespace

TEST_CASE("conv1d matches hand examples") {
    // identity kernel
    auto x = D::create({1, 1, 3}, {1, 2, 3});
    auto k = D::create({1, 1, 1}, {1});
    auto b = D::create({1}, {0});
    auto y = conv1d(x, k, b, 0);
    CHECK(y->shape == Shape{1, 1, 3});
    CHECK(y->data[0] == doctest::Approx(1));
    CHECK(y->data[1] == doctest::Approx(2));
    CHECK(y->data[2] == doctest::Approx(3));

    // [1,2,3] * [1,1] -> [3,5]
    auto k2 = D::create({1, 1, 2}, {1, 1});
    auto y2 = conv1d(x, k2, b, 0);
    CHECK(y2->shape == Shape{1, 1, 2});
    CHECK(y2->data[0] == doctest::Approx(3));
    CHECK(y2->data[1] == doctest::Approx(5));

    // padded single element
    auto x3 = D::create({1, 1, 1}, {5});
    auto k3 = D::create({1, 1, 3}, {1, 1, 1});
    auto y3 = conv1d(x3, k3, b, 1);
    CHECK(y3->shape == Shape{1, 1, 1});
    CHECK(y3->data[0] == doctest::Approx(5));
}

TEST_CASE("conv1d matches the nested-loop oracle on random shapes") {
    auto rng = Rng(42);
    for (int trial = 0; trial < 20; ++trial) {
        const auto b = rng.uniform_int(1, 3), c = rng.uniform_int(1, 3);
        const auto L = rng.uniform_int(1, 7);
        const auto co = rng.uniform_int(1, 3);
        const auto pad = rng.uniform_int(0, 2);
        const auto k = rng.uniform_int(1, L + 2 * pad);
        auto x = random_tensor({b, c, L}, rng);
        auto w = random_tensor({co, c, k}, rng);
        auto bias = random_tensor({co}, rng);
        auto y = conv1d(x, w, bias, pad);
        auto ref = oracle::conv1d(x->data, b, c, L, w->data, co, k, bias->data, pad);
        REQUIRE(y->data.size() == ref.size());
        for (std::size_t i = 0; i < ref.size(); ++i) {
            CHECK(y->data[i] == doctest::Approx(ref[i]).epsilon(1e-12));
        }
    }
}

TEST_CASE("conv1d rejects channel mismatch naming both shapes") {
    auto x = D::create({1, 2, 3}, {1, 2, 3, 4, 5, 6});
    auto k = D::create({1, 3, 1}, {1, 1, 1});
    auto b = D::create({1}, {0});
    try {
        conv1d(x, k, b, 0);
        FAIL("expected DimensionError");
    } catch (const DimensionError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[1,2,3]") != std::string::npos);
        CHECK(msg.find("[1,3,1]") != std::string::npos);
    }
}

TEST_CASE("conv2d matches the nested-loop oracle") {
    auto rng = Rng(7);
    for (int trial = 0; trial < 15; ++trial) {
        const auto b = rng.uniform_int(1, 2), c = rng.uniform_int(1, 3);
        const auto h = rng.uniform_int(2, 6), w = rng.uniform_int(2, 6);
        const auto co = rng.uniform_int(1, 3);
        const auto kk = rng.uniform_int(1, 3);
        const auto stride = rng.uniform_int(1, 2);
        const auto pad = rng.uniform_int(0, 1);
        if (h + 2 * pad < kk || w + 2 * pad < kk) continue;
        auto x = random_tensor({b, c, h, w}, rng);
        auto ker = random_tensor({co, c, kk, kk}, rng);
        auto bias = random_tensor({co}, rng);
        auto y = conv2d(x, ker, bias, stride, pad);
        auto ref = oracle::conv2d(x->data, b, c, h, w, ker->data, co, kk, kk, bias->data,
                                  stride, pad);
        REQUIRE(y->data.size() == ref.size());
        for (std::size_t i = 0; i < ref.size(); ++i) {
            CHECK(y->data[i] == doctest::Approx(ref[i]).epsilon(1e-12));
        }
    }
}

TEST_CASE("batchnorm train mode normalizes and eval mode is affine") {
    // constant input -> zeros (eps absorbs the zero variance)
    auto gamma = D::create({1}, {1}, true);
    auto beta = D::create({1}, {0}, true);
    BatchNormState<double> st(1);
    auto x = D::create({2, 1, 2}, {3, 3, 3, 3});
    auto y = batchnorm(x, gamma, beta, st, Mode::train);
    for (auto v : y->data) CHECK(v == doctest::Approx(0.0));

    // {1,3} -> {-1,+1} as eps -> 0
    BatchNormState<double> st2(1);
    auto x2 = D::create({2, 1, 1}, {1, 3});
    auto y2 = batchnorm(x2, gamma, beta, st2, Mode::train, 1e-12);
    CHECK(y2->data[0] == doctest::Approx(-1.0).epsilon(1e-5));
    CHECK(y2->data[1] == doctest::Approx(1.0).epsilon(1e-5));

    // eval: running mean 0, var 1, gamma 2, beta 1 on value 3 -> 7
    auto g2 = D::create({1}, {2});
    auto b1 = D::create({1}, {1});
    BatchNormState<double> st3(1);
    auto x3 = D::create({1, 1, 1}, {3});
    auto y3 = batchnorm(x3, g2, b1, st3, Mode::eval);
    CHECK(y3->data[0] == doctest::Approx(7.0).epsilon(1e-4));
}

TEST_CASE("batchnorm updates running moments by EMA with momentum 0.1") {
    auto gamma = D::create({1}, {1});
    auto beta = D::create({1}, {0});
    BatchNormState<double> st(1);
    auto x = D::create({2, 1, 1}, {1, 3});  // batch mean 2, biased var 1
    batchnorm(x, gamma, beta, st, Mode::train);
    CHECK(st.running_mean->data[0] == doctest::Approx(0.9 * 0.0 + 0.1 * 2.0));
    CHECK(st.running_var->data[0] == doctest::Approx(0.9 * 1.0 + 0.1 * 1.0));
}

TEST_CASE("batchnorm rejects degenerate batches in train mode") {
    auto gamma = D::create({1}, {1});
    auto beta = D::create({1}, {0});
    BatchNormState<double> st(1);
    auto x = D::create({1, 1, 1}, {3});
    CHECK_THROWS_AS(batchnorm(x, gamma, beta, st, Mode::train), DataError);
    CHECK_NOTHROW(batchnorm(x, gamma, beta, st, Mode::eval));
}

TEST_CASE("global_avg_pool examples") {
    auto x = D::create({2, 2}, {1, 2, 3, 4});
    auto y = global_avg_pool(x);
    CHECK(y->numel() == 1);
    CHECK(y->data[0] == doctest::Approx(2.5));

    auto c7 = D::full({3, 2, 2}, 7.0);
    auto y2 = global_avg_pool(c7);
    for (auto v : y2->data) CHECK(v == doctest::Approx(7.0));

    auto one = D::create({2, 1, 1}, {4, 9});
    auto y3 = global_avg_pool(one);
    CHECK(y3->data[0] == doctest::Approx(4));
    CHECK(y3->data[1] == doctest::Approx(9));

    auto bad = D::create({3}, {1, 2, 3});
    CHECK_THROWS_AS(global_avg_pool(bad), DimensionError);
}

TEST_CASE("multi_head_attention degenerate and hand-computed cases") {
    // single key-value pair: output equals v regardless of q
    auto q = D::create({1, 1, 2}, {9.0, -3.0});
    auto k = D::create({1, 1, 2}, {0.3, 0.4});
    auto v = D::create({1, 1, 2}, {5.0, 6.0});
    auto y = multi_head_attention(q, k, v, 1);
    CHECK(y->data[0] == doctest::Approx(5.0));
    CHECK(y->data[1] == doctest::Approx(6.0));

    // identical keys: output is the mean of values
    auto k2 = D::create({1, 3, 2}, {1, 2, 1, 2, 1, 2});
    auto v2 = D::create({1, 3, 2}, {0, 0, 3, 3, 6, 9});
    auto y2 = multi_head_attention(q, k2, v2, 2);
    CHECK(y2->data[0] == doctest::Approx(3.0));
    CHECK(y2->data[1] == doctest::Approx(4.0));

    // 2 keys with scores (0, ln 3): weights (0.25, 0.75)
    auto q3 = D::create({1, 1, 1}, {1.0});
    auto k3 = D::create({1, 2, 1}, {0.0, std::log(3.0)});
    auto v3 = D::create({1, 2, 1}, {1.0, 5.0});
    auto y3 = multi_head_attention(q3, k3, v3, 1);
    CHECK(y3->data[0] == doctest::Approx(0.25 * 1.0 + 0.75 * 5.0));

    CHECK_THROWS_AS(multi_head_attention(q, k, v, 3), ConfigError);
}

TEST_CASE("attention rows sum to one and output keeps q's shape") {
    auto rng = Rng(11);
    auto q = random_tensor({2, 3, 4}, rng);
    auto k = random_tensor({2, 5, 4}, rng);
    auto v = random_tensor({2, 5, 4}, rng);
    auto y = multi_head_attention(q, k, v, 2);
    CHECK(y->shape == q->shape);
    // with constant values, any convex combination over keys returns the value
    auto ones = D::full({2, 5, 4}, 1.0);
    auto y2 = multi_head_attention(q, k, ones, 2);
    for (auto val : y2->data) CHECK(val == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("backward populates gradients per contract") {
    auto x = D::create({3}, {1, 2, 3}, true);
    auto loss = sum(x);
    backward(loss);
    for (auto g : x->grad) CHECK(g == doctest::Approx(1.0));

    // sigmoid'(0) = 0.25
    auto z = D::scalar(0.0, true);
    backward(sum(sigmoid(z)));
    CHECK(z->grad[0] == doctest::Approx(0.25));

    // d(x*x)/dx at 3 = 6
    auto w = D::scalar(3.0, true);
    backward(sum(mul(w, w)));
    CHECK(w->grad[0] == doctest::Approx(6.0));

    // repeated backward accumulates additively
    auto a = D::create({2}, {1, 1}, true);
    auto l2 = sum(a);
    backward(l2);
    backward(l2);
    for (auto g : a->grad) CHECK(g == doctest::Approx(2.0));

    auto nonscalar = D::create({2}, {1, 2}, true);
    CHECK_THROWS_AS(backward(nonscalar), ContractError);
}

TEST_CASE("grad_check is exact for linear and tight for sigmoid") {
    auto x = D::create({4}, {0.3, -0.2, 1.0, 2.0});
    auto lin = [](const DPtr& t) { return sum(scale(t, 3.0)); };
    CHECK(grad_check<double>(lin, x, 1e-5) <= 1e-10);

    auto sig = [](const DPtr& t) { return sum(sigmoid(t)); };
    auto zero = D::scalar(0.0);
    CHECK(grad_check<double>(sig, zero, 1e-5) <= 1e-6);
}

TEST_CASE("every primitive passes grad_check at 10 random points") {
    auto rng = Rng(123);
    using Fn = std::function<DPtr(const DPtr&)>;
    // each entry: shape of the checked input, function of that input
    std::vector<std::pair<Shape, Fn>> cases;

    cases.push_back({{2, 3}, [](const DPtr& t) { return sum(relu(add_scalar(t, 0.0))); }});
    cases.push_back({{2, 3}, [](const DPtr& t) { return sum(sigmoid(t)); }});
    cases.push_back({{2, 3}, [](const DPtr& t) { return mean(mul(t, t)); }});
    cases.push_back({{6}, [](const DPtr& t) { return sum(scale(t, -1.7)); }});
    {
        auto rng2 = Rng(5);
        auto other = random_tensor({2, 3}, rng2);
        cases.push_back({{2, 3}, [other](const DPtr& t) { return sum(mul(add(t, other), sub(t, other))); }});
        auto m2 = random_tensor({3, 4}, rng2);
        cases.push_back({{2, 3}, [m2](const DPtr& t) { return sum(matmul(t, m2)); }});
        auto b3 = random_tensor({2, 3, 2}, rng2);
        cases.push_back({{2, 4, 3}, [b3](const DPtr& t) { return sum(bmm(t, b3)); }});
        auto k1 = random_tensor({2, 2, 3}, rng2);
        auto bias1 = random_tensor({2}, rng2);
        cases.push_back({{1, 2, 5}, [k1, bias1](const DPtr& t) { return sum(conv1d(t, k1, bias1, 1)); }});
        auto k2 = random_tensor({2, 1, 3, 3}, rng2);
        auto bias2 = random_tensor({2}, rng2);
        cases.push_back(
            {{1, 1, 5, 6}, [k2, bias2](const DPtr& t) { return sum(conv2d(t, k2, bias2, 2, 1)); }});
        auto vvec = random_tensor({4}, rng2);
        cases.push_back({{3, 4}, [vvec](const DPtr& t) { return sum(add_rowvec(t, vvec)); }});
        auto kk = random_tensor({1, 2, 3}, rng2);
        auto vv = random_tensor({1, 2, 3}, rng2);
        cases.push_back({{1, 2, 3}, [kk, vv](const DPtr& t) {
                             return sum(multi_head_attention(t, kk, vv, 1));
                         }});
    }
    cases.push_back({{2, 4}, [](const DPtr& t) { return sum(mul(softmax(t, 1), t)); }});
    cases.push_back({{2, 2, 3}, [](const DPtr& t) { return sum(mul(t, reshape(t, t->shape))); }});
    cases.push_back({{2, 3, 4}, [](const DPtr& t) {
                         return sum(mul(permute(t, {2, 0, 1}), permute(t, {2, 0, 1})));
                     }});
    cases.push_back({{3, 2, 2}, [](const DPtr& t) { return sum(mul(select(t, 0, 1), select(t, 0, 2))); }});
    cases.push_back({{2, 3}, [](const DPtr& t) { return sum(mul(concat<double>({t, t}, 0),
                                                                concat<double>({t, t}, 0))); }});
    cases.push_back({{2, 3, 4}, [](const DPtr& t) { return sum(mul(sum_axis(t, 1), sum_axis(t, 1))); }});
    cases.push_back({{2, 3, 4}, [](const DPtr& t) { return sum(mul(global_avg_pool(t), global_avg_pool(t))); }});
    cases.push_back({{5}, [](const DPtr& t) { return mean(mul(t, t)); }});
    {
        // batchnorm train mode: fresh state per evaluation keeps the value pure
        auto gamma = random_tensor({3}, rng, 0.5, 1.5);
        auto beta = random_tensor({3}, rng, -0.5, 0.5);
        cases.push_back({{4, 3, 2}, [gamma, beta](const DPtr& t) {
                             BatchNormState<double> st(3);
                             return sum(mul(batchnorm(t, gamma, beta, st, Mode::train), t));
                         }});
        cases.push_back({{4, 3, 2}, [gamma, beta](const DPtr& t) {
                             BatchNormState<double> st(3);
                             return sum(mul(batchnorm(t, gamma, beta, st, Mode::eval), t));
                         }});
    }

    for (std::size_t ci = 0; ci < cases.size(); ++ci) {
        CAPTURE(ci);
        double worst = 0.0;
        for (int rep = 0; rep < 10; ++rep) {
            // keep points away from relu kinks
            auto point = random_tensor(cases[ci].first, rng, 0.1, 1.0);
            if (rep % 2) {
                for (auto& v : point->data) v = -v - 0.05;
            }
            worst = std::max(worst, grad_check<double>(cases[ci].second, point, 1e-6));
        }
        CHECK(worst <= 1e-5);
    }
}

TEST_CASE("sigmoid stays in (0,1) and relu is nonnegative") {
    auto rng = Rng(99);
    auto x = random_tensor({100}, rng, -90.0, 90.0);
    auto s = sigmoid(x);
    for (auto v : s->data) {
        CHECK(v > 0.0);
        CHECK(v < 1.0);
    }
    auto r = relu(x);
    for (auto v : r->data) CHECK(v >= 0.0);
}

TEST_CASE("backward of a sum of losses equals the sum of separate backwards") {
    auto rng = Rng(3);
    auto make = [&](bool joint) {
        auto x = D::create({4}, {0.5, -0.25, 1.5, 2.0}, true);
        auto l1 = sum(mul(x, x));
        auto l2 = mean(sigmoid(x));
        if (joint) {
            backward(add(l1, l2));
        } else {
            backward(l1);
            backward(l2);
        }
        return x->grad;
    };
    auto joint = make(true);
    auto split = make(false);
    for (std::size_t i = 0; i < joint.size(); ++i) {
        CHECK(std::abs(joint[i] - split[i]) <= 1e-12);
    }
}

TEST_CASE("shape algebra is total: mismatches raise dimension errors") {
    auto a = D::create({2, 3}, {1, 2, 3, 4, 5, 6});
    auto b = D::create({3, 2}, {1, 2, 3, 4, 5, 6});
    CHECK_THROWS_AS(add(a, b), DimensionError);
    CHECK_THROWS_AS(mul(a, b), DimensionError);
    CHECK_THROWS_AS(matmul(a, a), DimensionError);
    CHECK_THROWS_AS(reshape(a, {4, 2}), DimensionError);
    CHECK_THROWS_AS(select(a, 5, 0), DimensionError);
    CHECK_THROWS_AS(select(a, 0, 2), DimensionError);
    CHECK_THROWS_AS(concat<double>({a, b}, 0), DimensionError);
    CHECK_THROWS_AS(sum_axis(a, 2), DimensionError);
    CHECK_THROWS_AS(D::create({2, 2}, {1, 2, 3}), DimensionError);
}

TEST_CASE("no-grad guard suppresses tape recording") {
    auto x = D::create({2}, {1, 2}, true);
    {
        NoGradGuard ng;
        auto y = sum(mul(x, x));
        CHECK_FALSE(y->requires_grad);
    }
    auto y = sum(mul(x, x));
    CHECK(y->requires_grad);
}
