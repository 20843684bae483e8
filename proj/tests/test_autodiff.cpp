#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "csikit/errors.hpp"
#include "csikit/tensor.hpp"
#include "testutil.hpp"

using namespace csikit;
using testutil::gradcheck;
using testutil::random_tensor;

TEST_CASE("matmul basics") {
    Tensor eye({2, 2}, {1, 0, 0, 1});
    Tensor a({2, 2}, {1, 2, 3, 4});
    Tensor prod = matmul(eye, a);
    CHECK(prod.data()[0] == 1.0);
    CHECK(prod.data()[1] == 2.0);
    CHECK(prod.data()[2] == 3.0);
    CHECK(prod.data()[3] == 4.0);

    Tensor row({1, 2}, {1, 2});
    Tensor col({2, 1}, {3, 4});
    CHECK(matmul(row, col).value() == 11.0);

    CHECK_THROWS_AS(matmul(row, row), DimensionError);
}

TEST_CASE("matmul gradient vs finite differences") {
    Rng rng(42);
    Tensor a = random_tensor({3, 4}, rng);
    Tensor b = random_tensor({4, 2}, rng);
    const double err =
        gradcheck({&a, &b}, [&]() { return sum(matmul(a, b)); });
    CHECK(err < 1e-6);
}

TEST_CASE("layer_norm values") {
    Tensor gamma({4}, {1, 1, 1, 1});
    Tensor beta({4}, {0, 0, 0, 0});

    Tensor constant({1, 4}, {3, 3, 3, 3});
    Tensor out = layer_norm(constant, gamma, beta, 1e-5);
    for (double v : out.data()) {
        CHECK(v == 0.0);
    }

    Tensor g2({2}, {1, 1});
    Tensor b2({2}, {0, 0});
    Tensor two({1, 2}, {1, 3});
    Tensor norm = layer_norm(two, g2, b2, 1e-12);
    CHECK(norm.data()[0] == doctest::Approx(-1.0).epsilon(1e-9));
    CHECK(norm.data()[1] == doctest::Approx(1.0).epsilon(1e-9));

    CHECK_THROWS_AS(layer_norm(two, g2, b2, 0.0), ConfigError);
}

TEST_CASE("layer_norm row statistics") {
    Rng rng(7);
    Tensor gamma = Tensor::full({8}, 1.0);
    Tensor beta = Tensor::zeros({8});
    Tensor x = random_tensor({2, 8}, rng, -8.0, 8.0);
    Tensor out = layer_norm(x, gamma, beta, 1e-5);
    for (int r = 0; r < 2; ++r) {
        double mean = 0.0;
        for (int j = 0; j < 8; ++j) {
            mean += out.at(r, j);
        }
        mean /= 8.0;
        CHECK(std::abs(mean) < 1e-9);
        double var = 0.0;
        for (int j = 0; j < 8; ++j) {
            var += (out.at(r, j) - mean) * (out.at(r, j) - mean);
        }
        var /= 8.0;
        CHECK(std::abs(var - 1.0) < 1e-6);
    }
}

TEST_CASE("softmax values and row sums") {
    Tensor flat({1, 3}, {0, 0, 0});
    Tensor out = softmax(flat);
    for (double v : out.data()) {
        CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    }

    Tensor big({1, 2}, {1000, 0});
    Tensor stable = softmax(big);
    CHECK(std::abs(stable.data()[0] - 1.0) < 1e-12);
    CHECK(std::abs(stable.data()[1]) < 1e-12);

    Rng rng(3);
    Tensor x = random_tensor({5, 9}, rng, -30.0, 30.0);
    Tensor sm = softmax(x);
    for (int r = 0; r < 5; ++r) {
        double s = 0.0;
        for (int j = 0; j < 9; ++j) {
            s += sm.at(r, j);
            CHECK(sm.at(r, j) > 0.0);
            CHECK(sm.at(r, j) < 1.0);
        }
        CHECK(std::abs(s - 1.0) < 1e-12);
    }
}

TEST_CASE("softmax gradient vs finite differences") {
    Rng rng(11);
    Tensor x = random_tensor({1, 4}, rng);
    Tensor w = random_tensor({1, 4}, rng);
    const double err =
        gradcheck({&x}, [&]() { return sum(mul(softmax(x), w)); });
    CHECK(err < 1e-6);
}

TEST_CASE("swish values") {
    Tensor x({3}, {0.0, 20.0, -1.0});
    Tensor y = swish(x);
    CHECK(y.data()[0] == 0.0);
    CHECK(std::abs(y.data()[1] - 20.0) < 1e-6);
    // -1 * sigmoid(-1), sigmoid(-1) = 1 / (1 + e)
    const double expect = -1.0 / (1.0 + std::exp(1.0));
    CHECK(y.data()[2] == doctest::Approx(expect).epsilon(1e-15));
    CHECK(y.data()[2] == doctest::Approx(-0.2689414213699951).epsilon(1e-12));
}

TEST_CASE("glu values") {
    Tensor x({1, 4}, {1.5, -2.0, 0.0, 0.0});
    Tensor y = glu(x);
    CHECK(y.data()[0] == doctest::Approx(0.75).epsilon(1e-15));
    CHECK(y.data()[1] == doctest::Approx(-1.0).epsilon(1e-15));

    Tensor gated({1, 2}, {5.0, -800.0});
    CHECK(glu(gated).data()[0] == 0.0);

    Tensor pair({1, 2}, {2.0, 1.0});
    const double expect = 2.0 / (1.0 + std::exp(-1.0));
    CHECK(glu(pair).data()[0] == doctest::Approx(expect).epsilon(1e-15));
    CHECK(glu(pair).data()[0] == doctest::Approx(1.4621171572600098).epsilon(1e-12));

    Tensor odd({1, 3}, {1, 2, 3});
    CHECK_THROWS_AS(glu(odd), DimensionError);
}

TEST_CASE("depthwise_conv1d values") {
    // unit impulse kernel reproduces the input
    Tensor x({2, 6}, {1, 2, 3, 4, 5, 6, -1, -2, -3, -4, -5, -6});
    Tensor impulse({2, 3}, {0, 1, 0, 0, 1, 0});
    Tensor y = depthwise_conv1d(x, impulse);
    for (size_t i = 0; i < x.size(); ++i) {
        CHECK(y.data()[i] == x.data()[i]);
    }

    Tensor ones({1, 5}, {1, 1, 1, 1, 1});
    Tensor k3({1, 3}, {1, 1, 1});
    Tensor conv = depthwise_conv1d(ones, k3);
    const std::vector<double> expect = {2, 3, 3, 3, 2};
    for (int i = 0; i < 5; ++i) {
        CHECK(conv.data()[static_cast<size_t>(i)] == expect[static_cast<size_t>(i)]);
    }

    Tensor even({1, 2}, {1, 1});
    CHECK_THROWS_AS(depthwise_conv1d(ones, even), ConfigError);
}

TEST_CASE("depthwise_conv1d kernel gradient vs finite differences") {
    Rng rng(5);
    Tensor x = random_tensor({2, 8}, rng);
    Tensor k = random_tensor({2, 3}, rng);
    Tensor w = random_tensor({2, 8}, rng);
    const double err = gradcheck(
        {&k}, [&]() { return sum(mul(depthwise_conv1d(x, k), w)); });
    CHECK(err < 1e-6);
}

TEST_CASE("backward basics") {
    Tensor x({2, 2}, {1, 2, 3, 4});
    x.set_requires_grad(true);
    {
        Tape tape;
        backward(sum(x));
    }
    for (double g : x.grad()) {
        CHECK(g == 1.0);
    }

    Tensor y({2}, {1, 2});
    y.set_requires_grad(true);
    {
        Tape tape;
        backward(sum(mul(y, y)));
    }
    CHECK(y.grad()[0] == 2.0);
    CHECK(y.grad()[1] == 4.0);

    // accumulation across repeated backward passes
    {
        Tape tape;
        backward(sum(mul(y, y)));
    }
    CHECK(y.grad()[0] == 4.0);
    CHECK(y.grad()[1] == 8.0);

    Tensor vec({3}, {1, 2, 3});
    vec.set_requires_grad(true);
    {
        Tape tape;
        Tensor out = mul(vec, vec);
        CHECK_THROWS_AS(backward(out), UsageError);
    }
}

TEST_CASE("gradient-check battery over every op") {
    Rng rng(1234);
    double worst = 0.0;
    auto track = [&](double e) { worst = std::max(worst, e); };

    Tensor a = random_tensor({3, 5}, rng);
    Tensor b = random_tensor({3, 5}, rng);
    track(gradcheck({&a, &b}, [&]() { return sum(mul(add(a, b), sub(a, b))); }));

    Tensor c = random_tensor({4, 3}, rng);
    Tensor d = random_tensor({3, 2}, rng);
    track(gradcheck({&c, &d}, [&]() { return sum(square(matmul(c, d))); }));

    Tensor e = random_tensor({2, 6}, rng);
    track(gradcheck({&e}, [&]() { return sum(glu(swish(e))); }));

    Tensor f = random_tensor({3, 4}, rng);
    Tensor w = random_tensor({3, 4}, rng);
    track(gradcheck({&f}, [&]() { return sum(mul(sigmoid(f), w)); }));

    Tensor g = random_tensor({2, 5}, rng);
    Tensor wg = random_tensor({2, 5}, rng);
    track(gradcheck({&g}, [&]() { return sum(mul(softmax(g), wg)); }));

    Tensor h = random_tensor({2, 8}, rng);
    Tensor hg = random_tensor({8}, rng, 0.5, 1.5);
    Tensor hb = random_tensor({8}, rng, -0.5, 0.5);
    Tensor hw = random_tensor({2, 8}, rng);
    track(gradcheck({&h, &hg, &hb}, [&]() {
        return sum(mul(layer_norm(h, hg, hb, 1e-5), hw));
    }));

    Tensor x = random_tensor({3, 7}, rng);
    Tensor k = random_tensor({3, 5}, rng);
    Tensor xw = random_tensor({3, 7}, rng);
    track(gradcheck({&x, &k}, [&]() {
        return sum(mul(depthwise_conv1d(x, k), xw));
    }));

    Tensor m = random_tensor({4, 6}, rng);
    Tensor vb = random_tensor({6}, rng);
    track(gradcheck({&m, &vb}, [&]() { return sum(square(add_rowvec(m, vb))); }));

    Tensor t = random_tensor({3, 4}, rng);
    track(gradcheck({&t}, [&]() { return sum(square(transpose(t))); }));

    Tensor r = random_tensor({2, 6}, rng);
    track(gradcheck({&r}, [&]() { return sum(square(reshape(r, {3, 4}))); }));

    Tensor s = random_tensor({3, 6}, rng);
    track(gradcheck({&s}, [&]() {
        Tensor left = slice_cols(s, 0, 2);
        Tensor right = slice_cols(s, 2, 6);
        return sum(square(concat_cols({right, left})));
    }));

    Tensor sc = random_tensor({4}, rng);
    track(gradcheck({&sc}, [&]() { return scale(sum(scale(sc, -1.7)), 0.3); }));

    CHECK(worst < 1e-5);
}

TEST_CASE("ops do not mutate their inputs") {
    Rng rng(99);
    Tensor a = random_tensor({3, 4}, rng);
    Tensor b = random_tensor({3, 4}, rng);
    Tensor k = random_tensor({3, 3}, rng);
    Tensor mm = random_tensor({4, 3}, rng);
    const std::vector<double> a0(a.data().begin(), a.data().end());
    const std::vector<double> b0(b.data().begin(), b.data().end());
    const std::vector<double> k0(k.data().begin(), k.data().end());
    const std::vector<double> m0(mm.data().begin(), mm.data().end());

    add(a, b);
    sub(a, b);
    mul(a, b);
    square(a);
    matmul(a, mm);
    transpose(a);
    softmax(a);
    swish(a);
    sigmoid(a);
    glu(a);
    depthwise_conv1d(a, k);
    sum(a);
    detach(a);
    straight_through(a, b);

    CHECK(std::equal(a0.begin(), a0.end(), a.data().begin()));
    CHECK(std::equal(b0.begin(), b0.end(), b.data().begin()));
    CHECK(std::equal(k0.begin(), k0.end(), k.data().begin()));
    CHECK(std::equal(m0.begin(), m0.end(), mm.data().begin()));
}

TEST_CASE("determinism: same seed gives bit-identical outputs and gradients") {
    auto run = [](uint64_t seed) {
        Rng rng(seed);
        Tensor x = random_tensor({4, 6}, rng);
        Tensor w = random_tensor({6, 3}, rng);
        x.set_requires_grad(true);
        w.set_requires_grad(true);
        Tape tape;
        Tensor out = softmax(matmul(swish(x), w));
        Tensor loss = sum(square(out));
        backward(loss);
        std::vector<double> all(out.data().begin(), out.data().end());
        all.insert(all.end(), x.grad().begin(), x.grad().end());
        all.insert(all.end(), w.grad().begin(), w.grad().end());
        all.push_back(loss.value());
        return all;
    };
    const auto r1 = run(2024);
    const auto r2 = run(2024);
    CHECK(r1 == r2);
}

TEST_CASE("straight_through forwards q_r and back-propagates to q_s") {
    Tensor q_s({2, 2}, {1, 2, 3, 4});
    Tensor q_r({2, 2}, {5, 6, 7, 8});
    q_s.set_requires_grad(true);
    q_r.set_requires_grad(true);
    Tape tape;
    Tensor out = straight_through(q_s, q_r);
    for (size_t i = 0; i < out.size(); ++i) {
        CHECK(out.data()[i] == q_r.data()[i]);
    }
    backward(sum(out));
    for (double g : q_s.grad()) {
        CHECK(g == 1.0);
    }
    for (double g : q_r.grad()) {
        CHECK(g == 0.0);
    }
}

TEST_CASE("unit_gradient_map applies the value map with identity backward") {
    Tensor x({3}, {0.2, 0.5, 0.9});
    x.set_requires_grad(true);
    Tape tape;
    Tensor y = unit_gradient_map(x, [](double v) { return std::floor(v * 4.0); });
    CHECK(y.data()[0] == 0.0);
    CHECK(y.data()[1] == 2.0);
    CHECK(y.data()[2] == 3.0);
    backward(sum(y));
    for (double g : x.grad()) {
        CHECK(g == 1.0);
    }
}

TEST_CASE("dropout") {
    Rng rng(17);
    Tensor x = random_tensor({10, 10}, rng);

    // identity when not training
    Tensor eval_out = dropout(x, 0.5, nullptr, false);
    CHECK(eval_out.same_storage(x));

    Rng stream(5);
    Tensor t1 = dropout(x, 0.4, &stream, true);
    Rng stream2(5);
    Tensor t2 = dropout(x, 0.4, &stream2, true);
    CHECK(std::equal(t1.data().begin(), t1.data().end(), t2.data().begin()));

    size_t zeros = 0;
    for (size_t i = 0; i < t1.size(); ++i) {
        if (t1.data()[i] == 0.0) {
            ++zeros;
        } else {
            CHECK(t1.data()[i] == doctest::Approx(x.data()[i] / 0.6).epsilon(1e-12));
        }
    }
    CHECK(zeros > 10);
    CHECK(zeros < 90);

    CHECK_THROWS_AS(dropout(x, 1.0, &stream, true), ConfigError);
    CHECK_THROWS_AS(dropout(x, 0.5, nullptr, true), UsageError);
}

TEST_CASE("canonical_sum is permutation invariant bit-for-bit") {
    Rng rng(31);
    std::vector<double> base(64);
    for (double& v : base) {
        v = rng.uniform(-1.0, 1.0) * std::pow(10.0, rng.uniform(-8.0, 8.0));
    }
    std::vector<double> buf = base;
    const double ref = canonical_sum(buf);
    for (int trial = 0; trial < 25; ++trial) {
        std::vector<double> shuffled = base;
        rng.shuffle(shuffled);
        const double got = canonical_sum(shuffled);
        CHECK(got == ref);
    }
}

TEST_CASE("grad buffer lifecycle") {
    Tensor x({2}, {1, 2});
    CHECK_THROWS_AS(x.grad(), UsageError);
    x.set_requires_grad(true);
    CHECK(x.grad().size() == 2);
    x.set_requires_grad(false);
    CHECK_THROWS_AS(x.grad(), UsageError);
}
