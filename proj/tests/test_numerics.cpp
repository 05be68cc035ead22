#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include "polarfuse/gradcheck.hpp"
#include "polarfuse/nn.hpp"
#include "polarfuse/rng.hpp"
#include "polarfuse/tensor.hpp"

using namespace polarfuse;

namespace {

Tensor random_tensor(std::vector<std::size_t> dims, std::uint64_t seed, double lo = -1.0,
                     double hi = 1.0) {
    Tensor t(std::move(dims));
    Rng rng(seed);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

}  // namespace

TEST_CASE("tensor basics") {
    Tensor t({2, 3}, 1.5);
    CHECK(t.size() == 6);
    CHECK(t.at2(1, 2) == 1.5);
    CHECK_THROWS_AS(Tensor({2, 0}), std::invalid_argument);
    CHECK_THROWS_AS(Tensor::from_data({2}, {1.0, 2.0, 3.0}), std::invalid_argument);
    CHECK_THROWS_AS(Tensor::from_data({1}, {std::nan("")}), std::invalid_argument);
}

TEST_CASE("linear identity and zero weight") {
    LinearLayer id(3, 3);
    for (std::size_t i = 0; i < 3; ++i) id.weight[i * 3 + i] = 1.0;
    Tensor x = random_tensor({2, 3}, 7);
    Tensor y = linear(id, x);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(y[i] == x[i]);

    LinearLayer zero(3, 2);
    zero.bias[0] = 0.5;
    zero.bias[1] = -2.0;
    Tensor yb = linear(zero, x);
    CHECK(yb.at2(0, 0) == 0.5);
    CHECK(yb.at2(1, 1) == -2.0);
}

TEST_CASE("linear matches scalar reference on a random 2x3 case") {
    LinearLayer layer(3, 2);
    layer.weight = random_tensor({2, 3}, 11);
    layer.bias = random_tensor({2}, 12);
    Tensor x = random_tensor({4, 3}, 13);
    Tensor y = linear(layer, x);
    for (std::size_t r = 0; r < 4; ++r)
        for (std::size_t o = 0; o < 2; ++o) {
            double acc = layer.bias[o];
            for (std::size_t k = 0; k < 3; ++k) acc += layer.weight[o * 3 + k] * x.at2(r, k);
            CHECK(y.at2(r, o) == doctest::Approx(acc).epsilon(1e-14));
        }
    CHECK_THROWS_AS(linear(layer, random_tensor({2, 4}, 1)), std::invalid_argument);
}

TEST_CASE("linear is additive and homogeneous in x") {
    LinearLayer layer(5, 4);
    layer.weight = random_tensor({4, 5}, 21);
    Tensor a = random_tensor({3, 5}, 22);
    Tensor b = random_tensor({3, 5}, 23);
    Tensor sum({3, 5});
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] = a[i] + 2.5 * b[i];
    Tensor lhs = linear(layer, sum);
    Tensor ya = linear(layer, a), yb = linear(layer, b);
    for (std::size_t i = 0; i < lhs.size(); ++i)
        CHECK(lhs[i] == doctest::Approx(ya[i] + 2.5 * yb[i]).epsilon(1e-12));
}

TEST_CASE("softmax uniform, stabilized, high-precision reference") {
    Tensor z({4}, 0.0);
    Tensor s = softmax(z, 0);
    for (std::size_t i = 0; i < 4; ++i) CHECK(s[i] == doctest::Approx(0.25).epsilon(1e-15));

    Tensor big = Tensor::from_data({2}, {1000.0, 1000.0});
    Tensor sb = softmax(big, 0);
    CHECK(sb[0] == doctest::Approx(0.5));
    CHECK(sb[1] == doctest::Approx(0.5));

    Tensor x = random_tensor({6}, 31, -5.0, 5.0);
    Tensor sx = softmax(x, 0);
    long double mx = x[0];
    for (std::size_t i = 1; i < 6; ++i) mx = std::max<long double>(mx, x[i]);
    long double denom = 0.0L;
    for (std::size_t i = 0; i < 6; ++i) denom += expl(static_cast<long double>(x[i]) - mx);
    for (std::size_t i = 0; i < 6; ++i) {
        const long double want = expl(static_cast<long double>(x[i]) - mx) / denom;
        CHECK(std::abs(sx[i] - static_cast<double>(want)) < 1e-15);
    }
}

TEST_CASE("softmax sums to one along the reduced axis") {
    Tensor x = random_tensor({3, 4, 5}, 41, -30.0, 30.0);
    for (std::size_t axis = 0; axis < 3; ++axis) {
        Tensor s = softmax(x, axis);
        const std::size_t n = x.dim(axis);
        std::size_t inner = 1;
        for (std::size_t a = axis + 1; a < 3; ++a) inner *= x.dim(a);
        const std::size_t outer = x.size() / (n * inner);
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t i = 0; i < inner; ++i) {
                double sum = 0.0;
                for (std::size_t k = 0; k < n; ++k) sum += s[o * n * inner + k * inner + i];
                CHECK(std::abs(sum - 1.0) < 1e-12);
            }
    }
    CHECK_THROWS_AS(softmax(x, 3), std::invalid_argument);
}

TEST_CASE("global_avg_pool examples and oracle") {
    Tensor c({3, 2, 2}, 4.25);
    Tensor p = global_avg_pool(c);
    for (std::size_t i = 0; i < 3; ++i) CHECK(p[i] == doctest::Approx(4.25));

    Tensor one = random_tensor({5, 1, 1}, 51);
    Tensor pone = global_avg_pool(one);
    for (std::size_t i = 0; i < 5; ++i) CHECK(pone[i] == one[i]);

    Tensor x = random_tensor({2, 3, 3}, 52);
    Tensor px = global_avg_pool(x);
    for (std::size_t ch = 0; ch < 2; ++ch) {
        double acc = 0.0;
        for (std::size_t i = 0; i < 9; ++i) acc += x[ch * 9 + i];
        CHECK(px[ch] == doctest::Approx(acc / 9.0).epsilon(1e-15));
    }
    CHECK_THROWS_AS(global_avg_pool(random_tensor({2, 2}, 1)), std::invalid_argument);
}

TEST_CASE("dropout identity, reproducibility and scaling") {
    Tensor x = random_tensor({4, 4}, 61, 0.5, 1.5);
    Tensor y0 = dropout(x, 0.0, true, 9);
    Tensor yi = dropout(x, 0.7, false, 9);
    for (std::size_t i = 0; i < x.size(); ++i) {
        CHECK(y0[i] == x[i]);
        CHECK(yi[i] == x[i]);
    }

    Tensor a = dropout(x, 0.5, true, 1234);
    Tensor b = dropout(x, 0.5, true, 1234);
    bool any_zero = false;
    for (std::size_t i = 0; i < x.size(); ++i) {
        CHECK(a[i] == b[i]);
        if (a[i] == 0.0)
            any_zero = true;
        else
            CHECK(a[i] == doctest::Approx(2.0 * x[i]));
    }
    CHECK(any_zero);
    CHECK_THROWS_AS(dropout(x, 1.0, true, 1), std::invalid_argument);
    CHECK_THROWS_AS(dropout(x, -0.1, true, 1), std::invalid_argument);
}

TEST_CASE("fd_gradcheck on a quadratic and on a deliberate fault") {
    ParamStore params;
    params.add("theta", random_tensor({6}, 71));
    auto f = [](const ParamStore& p) {
        const Tensor& t = p.get("theta");
        double acc = 0.0;
        for (std::size_t i = 0; i < t.size(); ++i) acc += 0.5 * t[i] * t[i];
        return acc;
    };
    ParamStore grads;
    grads.add("theta", params.get("theta"));
    CHECK(fd_gradcheck(f, params, grads, 1e-5) < 1e-8);

    ParamStore wrong;
    Tensor doubled = params.get("theta");
    for (std::size_t i = 0; i < doubled.size(); ++i) doubled[i] *= 2.0;
    wrong.add("theta", doubled);
    CHECK(fd_gradcheck(f, params, wrong, 1e-5) == doctest::Approx(0.5).epsilon(1e-4));

    auto bad = [](const ParamStore&) { return std::numeric_limits<double>::quiet_NaN(); };
    CHECK_THROWS_AS(fd_gradcheck(bad, params, grads, 1e-5), std::runtime_error);
}

TEST_CASE("conv3x3 matches a scalar reference, stride 1 and 2") {
    for (std::size_t stride : {std::size_t(1), std::size_t(2)}) {
        ConvLayer layer(2, 3, stride);
        layer.weight = random_tensor({3, 2, 3, 3}, 80 + stride);
        layer.bias = random_tensor({3}, 90 + stride);
        Tensor x = random_tensor({2, 6, 4}, 100 + stride);
        Tensor y = conv3x3(layer, x);
        const std::size_t ho = (6 - 1) / stride + 1, wo = (4 - 1) / stride + 1;
        REQUIRE(y.dims() == std::vector<std::size_t>({3, ho, wo}));
        for (std::size_t o = 0; o < 3; ++o)
            for (std::size_t i = 0; i < ho; ++i)
                for (std::size_t j = 0; j < wo; ++j) {
                    double acc = layer.bias[o];
                    for (std::size_t c = 0; c < 2; ++c)
                        for (int p = -1; p <= 1; ++p)
                            for (int q = -1; q <= 1; ++q) {
                                const std::ptrdiff_t ii =
                                    static_cast<std::ptrdiff_t>(i * stride) + p;
                                const std::ptrdiff_t jj =
                                    static_cast<std::ptrdiff_t>(j * stride) + q;
                                if (ii < 0 || ii >= 6 || jj < 0 || jj >= 4) continue;
                                acc += layer.weight[((o * 2 + c) * 3 + (p + 1)) * 3 + (q + 1)] *
                                       x.at3(c, static_cast<std::size_t>(ii),
                                             static_cast<std::size_t>(jj));
                            }
                    CHECK(y.at3(o, i, j) == doctest::Approx(acc).epsilon(1e-13));
                }
    }
}

TEST_CASE("conv3x3 backward agrees with finite differences") {
    for (std::size_t stride : {std::size_t(1), std::size_t(2)}) {
        ConvLayer layer(2, 2, stride);
        layer.weight = random_tensor({2, 2, 3, 3}, 111 + stride);
        layer.bias = random_tensor({2}, 121 + stride);
        Tensor x = random_tensor({2, 4, 4}, 131 + stride);
        Tensor y0 = conv3x3(layer, x);
        Tensor dy = random_tensor(y0.dims(), 141 + stride);

        auto objective = [&](const ConvLayer& l, const Tensor& xx) {
            Tensor y = conv3x3(l, xx);
            double acc = 0.0;
            for (std::size_t i = 0; i < y.size(); ++i) acc += y[i] * dy[i];
            return acc;
        };

        Tensor dx({2, 4, 4});
        Tensor dw({2, 2, 3, 3});
        Tensor db({2});
        conv3x3_backward(layer, x, dy, &dx, &dw, &db);

        const double h = 1e-6;
        for (std::size_t i = 0; i < x.size(); i += 5) {
            Tensor xp = x, xm = x;
            xp[i] += h;
            xm[i] -= h;
            const double fd = (objective(layer, xp) - objective(layer, xm)) / (2 * h);
            CHECK(dx[i] == doctest::Approx(fd).epsilon(1e-5));
        }
        for (std::size_t i = 0; i < layer.weight.size(); i += 7) {
            ConvLayer lp = layer, lm = layer;
            lp.weight[i] += h;
            lm.weight[i] -= h;
            const double fd = (objective(lp, x) - objective(lm, x)) / (2 * h);
            CHECK(dw[i] == doctest::Approx(fd).epsilon(1e-5));
        }
    }
}

TEST_CASE("upsample, avgpool and their backward rules") {
    Tensor x = random_tensor({2, 3, 2}, 151);
    Tensor up = upsample_nearest2(x);
    REQUIRE(up.dims() == std::vector<std::size_t>({2, 6, 4}));
    for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t i = 0; i < 6; ++i)
            for (std::size_t j = 0; j < 4; ++j) CHECK(up.at3(c, i, j) == x.at3(c, i / 2, j / 2));

    Tensor dy = random_tensor({2, 6, 4}, 152);
    Tensor dx = upsample_nearest2_backward(dy);
    for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t j = 0; j < 2; ++j)
                CHECK(dx.at3(c, i, j) ==
                      doctest::Approx(dy.at3(c, 2 * i, 2 * j) + dy.at3(c, 2 * i, 2 * j + 1) +
                                      dy.at3(c, 2 * i + 1, 2 * j) +
                                      dy.at3(c, 2 * i + 1, 2 * j + 1)));

    Tensor pooled = avgpool2(up);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(pooled[i] == doctest::Approx(x[i]));
}

TEST_CASE("relu and its backward") {
    Tensor x = Tensor::from_data({4}, {-1.0, 0.0, 2.0, -0.5});
    Tensor y = relu(x);
    CHECK(y[0] == 0.0);
    CHECK(y[2] == 2.0);
    Tensor dy({4}, 1.0);
    Tensor dx = relu_backward(y, dy);
    CHECK(dx[0] == 0.0);
    CHECK(dx[1] == 0.0);
    CHECK(dx[2] == 1.0);
}

TEST_CASE("kaiming uniform stays within the fan-in bound and is seeded") {
    Tensor w({16, 8});
    kaiming_uniform_fill(w, 8, 99);
    const double bound = std::sqrt(6.0 / 8.0);
    double spread = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        CHECK(std::abs(w[i]) <= bound);
        spread = std::max(spread, std::abs(w[i]));
    }
    CHECK(spread > 0.5 * bound);

    Tensor w2({16, 8});
    kaiming_uniform_fill(w2, 8, 99);
    for (std::size_t i = 0; i < w.size(); ++i) CHECK(w[i] == w2[i]);
}

TEST_CASE("matmul kernels agree with naive loops on small tensors") {
    Rng rng(2024);
    for (int trial = 0; trial < 5; ++trial) {
        const std::size_t m = 1 + static_cast<std::size_t>(rng.uniform_int(0, 3));
        const std::size_t k = 1 + static_cast<std::size_t>(rng.uniform_int(0, 7));
        const std::size_t n = 1 + static_cast<std::size_t>(rng.uniform_int(0, 7));
        Tensor w = random_tensor({m, k}, 1000 + static_cast<std::uint64_t>(trial));
        Tensor z = random_tensor({k, n}, 2000 + static_cast<std::uint64_t>(trial));
        Tensor b = random_tensor({m}, 3000 + static_cast<std::uint64_t>(trial));
        Tensor y;
        matmul(y, w, z, &b);
        for (std::size_t r = 0; r < m; ++r)
            for (std::size_t j = 0; j < n; ++j) {
                double acc = b[r];
                for (std::size_t kk = 0; kk < k; ++kk) acc += w[r * k + kk] * z[kk * n + j];
                CHECK(std::abs(y[r * n + j] - acc) < 1e-12);
            }
    }
}
