// Copyright (c) 2026 decloak contributors
// SPDX-License-Identifier: Apache-2.0
//
// Layer-level hot paths. The purifier and extractor spend nearly all their
// time in these kernels, so regressions here show up everywhere.

#include <benchmark/benchmark.h>

#include "decloak/nn.hpp"
#include "decloak/rng.hpp"
#include "decloak/tensor.hpp"

namespace {

using decloak::Rng;
using decloak::Tensor;

Tensor random_input(std::vector<std::size_t> shape, std::uint64_t seed) {
    Rng rng(seed);
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-1.0, 1.0);
    return t;
}

void BM_Conv2dForward(benchmark::State& state) {
    const auto ch = static_cast<int>(state.range(0));
    Rng rng(1);
    decloak::nn::Conv2d conv(ch, ch, 3, 1, 1);
    conv.init_params(rng);
    Tensor x = random_input({static_cast<std::size_t>(ch), 16, 16}, 2);
    for (auto _ : state) {
        benchmark::DoNotOptimize(conv.forward(x));
    }
}
BENCHMARK(BM_Conv2dForward)->Arg(16)->Arg(32)->Arg(64);

void BM_Conv2dBackward(benchmark::State& state) {
    const auto ch = static_cast<int>(state.range(0));
    Rng rng(3);
    decloak::nn::Conv2d conv(ch, ch, 3, 1, 1);
    conv.init_params(rng);
    Tensor x = random_input({static_cast<std::size_t>(ch), 16, 16}, 4);
    Tensor cols;
    Tensor y = conv.forward(x, &cols);
    Tensor gy = random_input(y.shape(), 5);
    for (auto _ : state) {
        Tensor gW = Tensor::zeros_like(conv.W);
        Tensor gb = Tensor::zeros_like(conv.b);
        benchmark::DoNotOptimize(conv.backward(cols, 16, 16, gy, gW, gb));
    }
}
BENCHMARK(BM_Conv2dBackward)->Arg(16)->Arg(32)->Arg(64);

void BM_ConvTranspose2dForward(benchmark::State& state) {
    const auto ch = static_cast<int>(state.range(0));
    Rng rng(6);
    decloak::nn::ConvTranspose2d deconv(ch, ch, 3, 2, 1, 1);
    deconv.init_params(rng);
    Tensor x = random_input({static_cast<std::size_t>(ch), 16, 16}, 7);
    for (auto _ : state) {
        benchmark::DoNotOptimize(deconv.forward(x));
    }
}
BENCHMARK(BM_ConvTranspose2dForward)->Arg(16)->Arg(32)->Arg(64);

void BM_AdamStep(benchmark::State& state) {
    Rng rng(8);
    Tensor w = random_input({64, 64 * 9}, 9);
    Tensor g = random_input(w.shape(), 10);
    decloak::nn::Adam opt(1e-3);
    std::vector<Tensor*> params = {&w};
    std::vector<Tensor> grads = {g};
    for (auto _ : state) {
        opt.step(params, grads);
    }
}
BENCHMARK(BM_AdamStep);

}  // namespace
