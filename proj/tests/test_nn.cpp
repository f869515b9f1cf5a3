// Copyright (c) 2026 decloak contributors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <vector>

#include "decloak/nn.hpp"
#include "decloak/rng.hpp"
#include "decloak/tensor.hpp"
#include "support.hpp"

using namespace decloak;
using namespace decloak::nn;

namespace {

double dot(const Tensor& a, const Tensor& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

/// sum(y * r) for a fixed random cotangent r turns any map into a scalar
/// objective whose gradient checks exercise the full backward pass.
Tensor random_cotangent(const Tensor& like, std::uint64_t seed) {
    Rng rng(seed);
    Tensor r = Tensor::zeros_like(like);
    for (std::size_t i = 0; i < r.size(); ++i) r[i] = rng.uniform(-1.0, 1.0);
    return r;
}

}  // namespace

TEST_CASE("im2col and col2im are exact adjoints") {
    Rng rng(100);
    for (auto [ksize, stride, pad] : {std::tuple{3, 1, 1}, {3, 2, 1}, {5, 2, 2}}) {
        Tensor x = tests::random_tensor({4, 9, 7}, rng, -1.0, 1.0);
        Tensor cols = im2col(x, ksize, stride, pad);
        Tensor y = tests::random_tensor(cols.shape(), rng, -1.0, 1.0);
        Tensor back = col2im(y, ksize, stride, pad, 4, 9, 7);
        // <im2col(x), y> == <x, col2im(y)>
        CHECK(tests::rel_err(dot(cols, y), dot(x, back)) <= 1e-12);
    }
}

TEST_CASE("conv2d forward matches direct convolution") {
    Rng rng(101);
    Conv2d conv(2, 3, 3, 1, 1);
    conv.init_params(rng);
    Tensor x = tests::random_tensor({2, 5, 6}, rng, -1.0, 1.0);
    Tensor y = conv.forward(x);
    REQUIRE(y.shape() == std::vector<std::size_t>{3, 5, 6});

    for (int oc = 0; oc < 3; ++oc) {
        for (int oy = 0; oy < 5; ++oy) {
            for (int ox = 0; ox < 6; ++ox) {
                double acc = conv.b[oc];
                for (int ic = 0; ic < 2; ++ic) {
                    for (int ky = 0; ky < 3; ++ky) {
                        for (int kx = 0; kx < 3; ++kx) {
                            int iy = oy + ky - 1, ix = ox + kx - 1;
                            if (iy < 0 || iy >= 5 || ix < 0 || ix >= 6) continue;
                            double w = conv.W[static_cast<std::size_t>(oc) * 18 +
                                              static_cast<std::size_t>(ic) * 9 +
                                              static_cast<std::size_t>(ky) * 3 +
                                              static_cast<std::size_t>(kx)];
                            acc += w * x.at(ic, iy, ix);
                        }
                    }
                }
                CHECK(tests::rel_err(y.at(oc, oy, ox), acc) <= 1e-12);
            }
        }
    }
}

TEST_CASE("conv2d gradients match finite differences") {
    Rng rng(102);
    Conv2d conv(2, 3, 3, 2, 1);
    conv.init_params(rng);
    Tensor x = tests::random_tensor({2, 8, 8}, rng, -1.0, 1.0);
    Tensor r = random_cotangent(conv.forward(x), 777);

    auto eval = [&] { return dot(conv.forward(x), r); };

    Tensor cols;
    Tensor y = conv.forward(x, &cols);
    Tensor gW = Tensor::zeros_like(conv.W), gb = Tensor::zeros_like(conv.b);
    Tensor gx = conv.backward(cols, 8, 8, r, gW, gb);

    CHECK(tests::fd_probe_max_err(eval, x, gx, rng, 25) < 1e-6);
    CHECK(tests::fd_probe_max_err(eval, conv.W, gW, rng, 25) < 1e-6);
    CHECK(tests::fd_full_max_err(eval, conv.b, gb) < 1e-6);
}

TEST_CASE("conv_transpose2d gradients match finite differences") {
    Rng rng(103);
    ConvTranspose2d deconv(3, 2, 3, 2, 1, 1);
    deconv.init_params(rng);
    Tensor x = tests::random_tensor({3, 4, 4}, rng, -1.0, 1.0);
    Tensor y = deconv.forward(x);
    REQUIRE(y.shape() == std::vector<std::size_t>{2, 8, 8});
    Tensor r = random_cotangent(y, 778);

    auto eval = [&] { return dot(deconv.forward(x), r); };

    Tensor gW = Tensor::zeros_like(deconv.W), gb = Tensor::zeros_like(deconv.b);
    Tensor gx = deconv.backward(x, r, gW, gb);

    CHECK(tests::fd_probe_max_err(eval, x, gx, rng, 25) < 1e-6);
    CHECK(tests::fd_probe_max_err(eval, deconv.W, gW, rng, 25) < 1e-6);
    CHECK(tests::fd_full_max_err(eval, deconv.b, gb) < 1e-6);
}

TEST_CASE("conv_transpose2d stride-1 geometry") {
    Rng rng(104);
    ConvTranspose2d deconv(2, 2, 3, 1, 1, 0);
    deconv.init_params(rng);
    Tensor x = tests::random_tensor({2, 6, 6}, rng);
    CHECK(deconv.forward(x).shape() == std::vector<std::size_t>{2, 6, 6});
}

TEST_CASE("relu and its backward") {
    Tensor x({1, 1, 4});
    x[0] = -1.0;
    x[1] = 0.0;
    x[2] = 0.5;
    x[3] = 2.0;
    Tensor y = relu(x);
    CHECK(y[0] == 0.0);
    CHECK(y[1] == 0.0);
    CHECK(y[2] == 0.5);
    CHECK(y[3] == 2.0);

    Tensor gy({1, 1, 4}, 1.0);
    Tensor gx = relu_backward(y, gy);
    CHECK(gx[0] == 0.0);
    CHECK(gx[1] == 0.0);
    CHECK(gx[2] == 1.0);
    CHECK(gx[3] == 1.0);
}

TEST_CASE("avg_pool2 forward and backward") {
    Rng rng(105);
    Tensor x = tests::random_tensor({2, 6, 4}, rng, -1.0, 1.0);
    Tensor y = avg_pool2(x);
    REQUIRE(y.shape() == std::vector<std::size_t>{2, 3, 2});
    CHECK(y.at(0, 0, 0) ==
          doctest::Approx((x.at(0, 0, 0) + x.at(0, 0, 1) + x.at(0, 1, 0) + x.at(0, 1, 1)) / 4));

    Tensor r = random_cotangent(y, 779);
    auto eval = [&] { return dot(avg_pool2(x), r); };
    Tensor gx = avg_pool2_backward(r, 6, 4);
    CHECK(tests::fd_probe_max_err(eval, x, gx, rng, 20) < 1e-8);

    Tensor odd({1, 5, 4});
    CHECK_THROWS(avg_pool2(odd));
}

TEST_CASE("global_avg_pool forward and backward") {
    Rng rng(106);
    Tensor x = tests::random_tensor({3, 4, 4}, rng, -1.0, 1.0);
    std::vector<double> y = global_avg_pool(x);
    REQUIRE(y.size() == 3);
    double want = 0.0;
    for (int i = 0; i < 16; ++i) want += x[i];
    CHECK(y[0] == doctest::Approx(want / 16.0));

    std::vector<double> g = {0.3, -0.7, 1.1};
    Tensor gx = global_avg_pool_backward(g, 3, 4, 4);
    CHECK(gx.at(1, 2, 3) == doctest::Approx(-0.7 / 16.0));
}

TEST_CASE("l2_normalize and backward") {
    std::vector<double> v = {3.0, 4.0};
    std::vector<double> n = l2_normalize(v);
    CHECK(n[0] == doctest::Approx(0.6));
    CHECK(n[1] == doctest::Approx(0.8));

    CHECK_THROWS(l2_normalize(std::vector<double>{0.0, 0.0}));

    // FD check through a fixed linear functional of the normalized vector
    Rng rng(107);
    std::vector<double> x(8), r(8);
    for (int i = 0; i < 8; ++i) {
        x[i] = rng.uniform(-1.0, 1.0);
        r[i] = rng.uniform(-1.0, 1.0);
    }
    auto objective = [&](const std::vector<double>& q) {
        std::vector<double> nq = l2_normalize(q);
        double s = 0.0;
        for (int i = 0; i < 8; ++i) s += nq[i] * r[i];
        return s;
    };
    std::vector<double> g = l2_normalize_backward(x, r);
    const double h = 1e-4;
    for (int i = 0; i < 8; ++i) {
        std::vector<double> up = x, down = x;
        up[i] += h;
        down[i] -= h;
        double fd = (objective(up) - objective(down)) / (2 * h);
        CHECK(tests::rel_err(g[i], fd) < 1e-6);
    }
}

TEST_CASE("softmax cross entropy value and gradient") {
    std::vector<double> logits = {1.0, -2.0, 0.5, 3.0};
    std::size_t label = 2;

    // independent log-sum-exp computation
    double mx = 3.0;
    double lse = 0.0;
    for (double l : logits) lse += std::exp(l - mx);
    double want = -(logits[label] - mx - std::log(lse));

    std::vector<double> grad;
    double got = softmax_cross_entropy(logits, label, &grad);
    CHECK(tests::rel_err(got, want) <= 1e-12);

    const double h = 1e-5;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        std::vector<double> up = logits, down = logits;
        up[i] += h;
        down[i] -= h;
        double fd = (softmax_cross_entropy(up, label, nullptr) -
                     softmax_cross_entropy(down, label, nullptr)) /
                    (2 * h);
        CHECK(tests::rel_err(grad[i], fd) < 1e-7);
    }

    // gradient sums to zero (softmax minus one-hot)
    double gsum = 0.0;
    for (double g : grad) gsum += g;
    CHECK(std::abs(gsum) < 1e-12);

    // large logits stay finite
    CHECK(std::isfinite(softmax_cross_entropy({1000.0, -1000.0, 0.0}, 0, nullptr)));
}

TEST_CASE("linear backward matches finite differences") {
    Rng rng(108);
    Linear lin(6, 4);
    lin.init_params(rng);
    std::vector<double> x(6), r(4);
    for (int i = 0; i < 6; ++i) x[i] = rng.uniform(-1.0, 1.0);
    for (int i = 0; i < 4; ++i) r[i] = rng.uniform(-1.0, 1.0);

    auto eval = [&] {
        std::vector<double> y = lin.forward(x);
        double s = 0.0;
        for (int i = 0; i < 4; ++i) s += y[i] * r[i];
        return s;
    };

    Tensor gW = Tensor::zeros_like(lin.W), gb = Tensor::zeros_like(lin.b);
    std::vector<double> gx = lin.backward(x, r, gW, gb);

    CHECK(tests::fd_full_max_err(eval, lin.W, gW) < 1e-8);
    CHECK(tests::fd_full_max_err(eval, lin.b, gb) < 1e-8);

    const double h = 1e-4;
    for (int i = 0; i < 6; ++i) {
        double keep = x[i];
        x[i] = keep + h;
        double up = eval();
        x[i] = keep - h;
        double down = eval();
        x[i] = keep;
        CHECK(tests::rel_err(gx[i], (up - down) / (2 * h)) < 1e-8);
    }
}

TEST_CASE("adam minimizes a quadratic deterministically") {
    auto run = [] {
        Tensor w({1, 1, 4}, 1.0);
        Adam opt(0.05);
        ParamRefs params = {&w};
        for (int step = 0; step < 200; ++step) {
            std::vector<Tensor> grads = zero_grads_like(params);
            for (std::size_t i = 0; i < w.size(); ++i) grads[0][i] = 2.0 * w[i];
            opt.step(params, grads);
        }
        return w;
    };
    Tensor a = run(), b = run();
    CHECK(a == b);
    CHECK(a.max_abs() < 1e-2);
}

TEST_CASE("argmax breaks ties toward the smaller index") {
    CHECK(argmax({0.1, 0.9, 0.9, 0.2}) == 1);
    CHECK(argmax({5.0}) == 0);
    CHECK(argmax({2.0, 2.0}) == 0);
}

TEST_CASE("parameter list helpers") {
    Rng rng(109);
    Linear a(3, 2), b(3, 2);
    a.init_params(rng);
    b.W = a.W;
    b.b = a.b;
    ConstParamRefs pa = {&a.W, &a.b}, pb = {&b.W, &b.b};
    CHECK(param_distance(pa, pb) == 0.0);
    CHECK(param_count(pa) == 3 * 2 + 2);

    b.W[0] += 0.5;
    CHECK(param_distance(pa, pb) == doctest::Approx(0.5));

    std::vector<Tensor> grads = zero_grads_like(pa);
    REQUIRE(grads.size() == 2);
    CHECK(grads[0].same_shape(a.W));
    CHECK(grads[1].same_shape(a.b));
    CHECK(grads[0].max_abs() == 0.0);
}
