#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "skelmamba/tensor.hpp"
#include "testutil.hpp"

using namespace skelmamba;
using testutil::masked_sum;
using testutil::random_tensor;

TEST_CASE("matmul identity and hand contraction") {
    Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
    Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
    Tensor r = matmul(a, eye);
    CHECK(r.data()[0] == 1.0);
    CHECK(r.data()[1] == 2.0);
    CHECK(r.data()[2] == 3.0);
    CHECK(r.data()[3] == 4.0);

    Tensor row = Tensor::from({1, 2}, {1, 2});
    Tensor col = Tensor::from({2, 1}, {3, 4});
    CHECK(matmul(row, col).item() == doctest::Approx(11.0).epsilon(1e-15));
}

TEST_CASE("matmul shape errors carry both shapes") {
    Tensor a = Tensor::from({2, 3}, std::vector<double>(6, 1.0));
    Tensor b = Tensor::from({2, 2}, std::vector<double>(4, 1.0));
    try {
        matmul(a, b);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[2,3]") != std::string::npos);
        CHECK(msg.find("[2,2]") != std::string::npos);
    }
}

TEST_CASE("matmul gradient: d sum(A.B) / dA = ones . B^T") {
    Tensor a = random_tensor({3, 4}, 11, 1.0, true);
    Tensor b = random_tensor({4, 5}, 12);
    const double err = finite_diff_check(
        [&](const Tensor& x) { return sum(matmul(x, b)); }, a);
    CHECK(err <= 1e-8);
    // analytic cross-check
    a.zero_grad();
    {
        TapeScope scope;
        backward(sum(matmul(a, b)));
    }
    for (int64_t i = 0; i < 3; ++i)
        for (int64_t j = 0; j < 4; ++j) {
            double expect = 0.0;
            for (int64_t k = 0; k < 5; ++k) expect += b.data()[j * 5 + k];
            CHECK(a.grad()[i * 4 + j] == doctest::Approx(expect).epsilon(1e-12));
        }
}

TEST_CASE("matmul batched broadcast") {
    // shared weight on the right
    Tensor x = random_tensor({2, 3, 4, 5}, 21, 1.0, true);
    Tensor w = random_tensor({5, 6}, 22, 1.0, true);
    Tensor y = matmul(x, w);
    CHECK(y.shape() == Shape{2, 3, 4, 6});
    CHECK(finite_diff_check([&](const Tensor&) { return masked_sum(matmul(x, w), 3); },
                            w) <= 1e-7);
    // shared mixing matrix on the left
    Tensor a = random_tensor({4, 4}, 23, 1.0, true);
    Tensor v = random_tensor({3, 4, 2}, 24, 1.0, true);
    Tensor z = matmul(a, v);
    CHECK(z.shape() == Shape{3, 4, 2});
    CHECK(finite_diff_check([&](const Tensor&) { return masked_sum(matmul(a, v), 4); },
                            a) <= 1e-7);
    CHECK(finite_diff_check([&](const Tensor&) { return masked_sum(matmul(a, v), 4); },
                            v) <= 1e-7);
}

TEST_CASE("conv1d scalar kernel, hand convolution, identity groups") {
    Tensor x = Tensor::from({1, 3}, {1, 2, 3});
    Tensor w = Tensor::from({1, 1, 1}, {2});
    Tensor y = conv1d_grouped(x, w, Tensor(), 1, 1, 0);
    CHECK(y.shape() == Shape{1, 3});
    CHECK(y.data()[0] == 2.0);
    CHECK(y.data()[1] == 4.0);
    CHECK(y.data()[2] == 6.0);

    Tensor x2 = Tensor::from({1, 4}, {1, 2, 3, 4});
    Tensor w2 = Tensor::from({1, 1, 3}, {1, 1, 1});
    Tensor y2 = conv1d_grouped(x2, w2, Tensor(), 1, 2, 1);
    CHECK(y2.shape() == Shape{1, 2});
    CHECK(y2.data()[0] == 3.0);
    CHECK(y2.data()[1] == 9.0);

    // depthwise identity kernels pass the input through
    const int64_t c = 5;
    Tensor x3 = random_tensor({c, 7}, 31);
    Tensor w3 = Tensor::zeros({c, 1, 3});
    for (int64_t i = 0; i < c; ++i) w3.mutable_data()[i * 3 + 1] = 1.0;
    Tensor y3 = conv1d_grouped(x3, w3, Tensor(), c, 1, 1);
    CHECK(testutil::bitwise_equal(y3.data(), x3.data()));
}

TEST_CASE("conv1d rejects non-divisible grouping") {
    Tensor x = Tensor::from({3, 4}, std::vector<double>(12, 0.0));
    Tensor w = Tensor::from({3, 1, 3}, std::vector<double>(9, 0.0));
    CHECK_THROWS_AS(conv1d_grouped(x, w, Tensor(), 2, 1, 1), ConfigError);
}

TEST_CASE("elementwise values") {
    Tensor zero = Tensor::scalar(0.0);
    CHECK(gelu(zero).item() == 0.0);
    CHECK(sigmoid(zero).item() == 0.5);
    // softplus against its direct form on a grid
    for (double x = -10.0; x <= 10.0; x += 0.5) {
        const double direct = std::log(1.0 + std::exp(x));
        CHECK(std::fabs(softplus(Tensor::scalar(x)).item() - direct) <= 1e-12);
    }
}

TEST_CASE("layernorm values") {
    Tensor g = Tensor::full({4}, 1.0);
    Tensor b = Tensor::zeros({4});
    Tensor c = Tensor::full({2, 4}, 3.25);
    Tensor y = layernorm(c, g, b, 1e-5);
    for (double v : y.data()) CHECK(std::fabs(v) <= 1e-12);

    Tensor g2 = Tensor::full({2}, 1.0);
    Tensor b2 = Tensor::zeros({2});
    Tensor x2 = Tensor::from({1, 2}, {1, 3});
    Tensor y2 = layernorm(x2, g2, b2, 1e-12);
    CHECK(y2.data()[0] == doctest::Approx(-1.0).epsilon(1e-6));
    CHECK(y2.data()[1] == doctest::Approx(1.0).epsilon(1e-6));

    // statistical oracle
    Tensor x3 = random_tensor({64, 16}, 41, 2.0);
    Tensor g3 = Tensor::full({16}, 1.0);
    Tensor b3 = Tensor::zeros({16});
    Tensor y3 = layernorm(x3, g3, b3, 1e-10);
    for (int64_t r = 0; r < 64; ++r) {
        double mu = 0.0, var = 0.0;
        for (int64_t j = 0; j < 16; ++j) mu += y3.data()[r * 16 + j];
        mu /= 16.0;
        for (int64_t j = 0; j < 16; ++j) {
            const double d = y3.data()[r * 16 + j] - mu;
            var += d * d;
        }
        var /= 16.0;
        CHECK(std::fabs(mu) <= 1e-6);
        CHECK(std::fabs(var - 1.0) <= 1e-4);
    }
}

TEST_CASE("backward basics") {
    Tensor x = Tensor::from({3}, {1, 2, 3}, true);
    backward(sum(x));
    for (double g : x.grad()) CHECK(g == 1.0);
    Tape::get().clear();

    Tensor x2 = Tensor::from({2}, {1, 2}, true);
    backward(sum(mul(x2, x2)));
    CHECK(x2.grad()[0] == doctest::Approx(2.0));
    CHECK(x2.grad()[1] == doctest::Approx(4.0));
    Tape::get().clear();
}

TEST_CASE("backward rejects non-scalar loss") {
    Tensor x = Tensor::from({2}, {1, 2}, true);
    Tensor y = mul(x, x);
    CHECK_THROWS_AS(backward(y), UsageError);
    Tape::get().clear();
}

TEST_CASE("backward twice accumulates exactly 2x") {
    Tensor x = random_tensor({5}, 51, 1.0, true);
    Tensor loss = sum(mul(x, x));
    backward(loss);
    std::vector<double> once(x.grad().begin(), x.grad().end());
    backward(loss);
    for (size_t i = 0; i < once.size(); ++i)
        CHECK(x.grad()[i] == doctest::Approx(2.0 * once[i]).epsilon(1e-15));
    Tape::get().clear();
}

TEST_CASE("finite_diff_check oracle self-tests") {
    Tensor x = random_tensor({6}, 61, 1.0, true);
    CHECK(finite_diff_check([](const Tensor& t) { return sum(t); }, x) <= 1e-10);

    // exp has the analytic gradient e^x; the harness must agree with it
    Tensor x2 = random_tensor({6}, 62, 0.5, true);
    CHECK(finite_diff_check([](const Tensor& t) { return sum(exp(t)); }, x2) <=
          1e-7);
    x2.zero_grad();
    {
        TapeScope scope;
        backward(sum(exp(x2)));
    }
    for (int64_t i = 0; i < 6; ++i)
        CHECK(x2.grad()[i] ==
              doctest::Approx(std::exp(x2.data()[i])).epsilon(1e-12));

    // layernorm + gelu chain
    Tensor x3 = random_tensor({4, 8}, 63, 1.0, true);
    Tensor g = Tensor::full({8}, 1.0);
    Tensor b = Tensor::zeros({8});
    CHECK(finite_diff_check(
              [&](const Tensor& t) { return sum(gelu(layernorm(t, g, b, 1e-5))); },
              x3) <= 1e-6);
}

TEST_CASE("finite_diff_check rejects non-scalar f") {
    Tensor x = random_tensor({3}, 64, 1.0, true);
    CHECK_THROWS_AS(
        finite_diff_check([](const Tensor& t) { return mul(t, t); }, x),
        UsageError);
}

TEST_CASE("every primitive passes finite differences on 10 seeds") {
    struct Case {
        const char* name;
        std::function<Tensor(const Tensor&)> f;
        Shape shape;
        double scale;
    };
    Tensor other = random_tensor({4, 6}, 71);
    Tensor small = random_tensor({6}, 72);
    Tensor weight = random_tensor({6, 3}, 73);
    Tensor cw = random_tensor({4, 2, 3}, 74, 0.5);
    Tensor cb = random_tensor({4}, 75, 0.5);
    Tensor lg = random_tensor({6}, 76, 0.3);
    Tensor lb = random_tensor({6}, 77, 0.3);
    std::vector<Case> cases = {
        {"add", [&](const Tensor& t) { return masked_sum(add(t, other), 1); },
         {4, 6}, 1.0},
        {"add_bcast", [&](const Tensor& t) { return masked_sum(add(other, t), 2); },
         {6}, 1.0},
        {"sub", [&](const Tensor& t) { return masked_sum(sub(t, other), 3); },
         {4, 6}, 1.0},
        {"mul", [&](const Tensor& t) { return masked_sum(mul(t, other), 4); },
         {4, 6}, 1.0},
        {"mul_bcast", [&](const Tensor& t) { return masked_sum(mul(other, t), 5); },
         {6}, 1.0},
        {"affine", [&](const Tensor& t) { return masked_sum(affine(t, 1.7, 0.3), 6); },
         {4, 6}, 1.0},
        {"gelu", [&](const Tensor& t) { return masked_sum(gelu(t), 7); }, {4, 6}, 1.0},
        {"silu", [&](const Tensor& t) { return masked_sum(silu(t), 8); }, {4, 6}, 1.0},
        {"sigmoid", [&](const Tensor& t) { return masked_sum(sigmoid(t), 9); },
         {4, 6}, 1.0},
        {"softplus", [&](const Tensor& t) { return masked_sum(softplus(t), 10); },
         {4, 6}, 1.0},
        {"exp", [&](const Tensor& t) { return masked_sum(exp(t), 11); }, {4, 6}, 0.5},
        {"matmul", [&](const Tensor& t) { return masked_sum(matmul(t, weight), 12); },
         {4, 6}, 1.0},
        {"conv1d",
         [&](const Tensor& t) {
             return masked_sum(conv1d_grouped(t, cw, cb, 2, 2, 1), 13);
         },
         {4, 9}, 1.0},
        {"layernorm",
         [&](const Tensor& t) { return masked_sum(layernorm(t, lg, lb, 1e-5), 14); },
         {4, 6}, 1.0},
        {"log_softmax",
         [&](const Tensor& t) { return masked_sum(log_softmax(t), 15); }, {4, 6}, 1.0},
        {"sum", [&](const Tensor& t) { return sum(t); }, {4, 6}, 1.0},
        {"mean_axes",
         [&](const Tensor& t) { return masked_sum(mean_axes(t, {0}), 16); }, {4, 6},
         1.0},
        {"reshape",
         [&](const Tensor& t) { return masked_sum(reshape(t, {6, 4}), 17); }, {4, 6},
         1.0},
        {"permute",
         [&](const Tensor& t) { return masked_sum(permute(t, {1, 0}), 18); }, {4, 6},
         1.0},
        {"narrow",
         [&](const Tensor& t) { return masked_sum(narrow(t, 1, 1, 3), 19); }, {4, 6},
         1.0},
        {"concat",
         [&](const Tensor& t) { return masked_sum(concat({t, other}, 0), 20); },
         {4, 6}, 1.0},
        {"gather",
         [&](const Tensor& t) {
             return masked_sum(gather_axis(t, 0, {2, 0, 2}), 21);
         },
         {4, 6}, 1.0},
        {"scatter_add",
         [&](const Tensor& t) {
             return masked_sum(scatter_add_axis(t, 0, {1, 3, 1, 0}, 5), 22);
         },
         {4, 6}, 1.0},
    };
    for (const Case& c : cases) {
        double worst = 0.0;
        for (uint64_t seed = 0; seed < 10; ++seed) {
            Tensor x = random_tensor(c.shape, 1000 + seed, c.scale, true);
            worst = std::max(worst, finite_diff_check(c.f, x));
        }
        INFO("primitive ", c.name);
        CHECK(worst <= 1e-6);
    }
}

TEST_CASE("batchnorm train-mode statistics and finite differences") {
    Tensor x = random_tensor({32, 4}, 81, 2.0, true);
    Tensor g = Tensor::full({4}, 1.0);
    Tensor b = Tensor::zeros({4});
    BatchNormState st;
    st.init(4);
    Tensor y = batchnorm(x, g, b, st, true);
    for (int64_t j = 0; j < 4; ++j) {
        double mu = 0.0, var = 0.0;
        for (int64_t r = 0; r < 32; ++r) mu += y.data()[r * 4 + j];
        mu /= 32.0;
        for (int64_t r = 0; r < 32; ++r) {
            const double d = y.data()[r * 4 + j] - mu;
            var += d * d;
        }
        var /= 32.0;
        CHECK(std::fabs(mu) <= 1e-6);
        CHECK(std::fabs(var - 1.0) <= 1e-4);
    }
    BatchNormState st2;
    st2.init(4);
    const double err = finite_diff_check(
        [&](const Tensor& t) {
            BatchNormState fresh;
            fresh.init(4);
            return masked_sum(batchnorm(t, g, b, fresh, true), 23);
        },
        x);
    CHECK(err <= 1e-6);
}

TEST_CASE("forward results are bitwise deterministic") {
    Tensor x = random_tensor({8, 16}, 91);
    Tensor w = random_tensor({16, 16}, 92);
    auto run = [&]() { return matmul(gelu(matmul(x, w)), w); };
    Tensor a = run();
    Tensor b = run();
    CHECK(testutil::bitwise_equal(a.data(), b.data()));
    // and independent of the worker cap
    threads::set_cap(1);
    Tensor c = run();
    threads::set_cap(2);
    Tensor d = run();
    threads::set_cap(0);  // back to the environment default
    CHECK(testutil::bitwise_equal(c.data(), d.data()));
    CHECK(testutil::bitwise_equal(a.data(), c.data()));
}

TEST_CASE("broadcast failure raises a dimension error") {
    Tensor a = Tensor::from({2, 3}, std::vector<double>(6, 0.0));
    Tensor b = Tensor::from({4}, std::vector<double>(4, 0.0));
    CHECK_THROWS_AS(add(a, b), ShapeError);
}
