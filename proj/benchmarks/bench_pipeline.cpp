// Copyright (c) 2026 decloak contributors
// SPDX-License-Identifier: Apache-2.0
//
// End-to-end stage costs at the default 32px image size: embedding, cloak
// optimization, purifier passes and the cheap transformation defenses. Run
// these to budget the evaluation harness before changing configurations.

#include <benchmark/benchmark.h>

#include <vector>

#include "decloak/attacks.hpp"
#include "decloak/dataset.hpp"
#include "decloak/defenses.hpp"
#include "decloak/extractor.hpp"
#include "decloak/purifier.hpp"
#include "decloak/purifier_training.hpp"
#include "decloak/rng.hpp"

namespace {

using namespace decloak;

/// Lazily built shared fixtures; benchmarks must not pay setup cost per run.
struct Fixture {
    IdentityDataset ds;
    ExtractorModel extractor;
    PurifierModel purifier;

    Fixture() {
        SynthIdentitySpec spec;
        spec.num_identities = 4;
        spec.images_per_identity = 6;
        spec.seed = 17;
        ds = generate_synthetic(spec);

        ExtractorConfig ec;
        ec.channels = {16, 32};
        ec.embed_dim = 32;
        ec.epochs = 2;
        ec.seed = 1;
        extractor = train_extractor(ds, ec);

        PurifierConfig pc;
        pc.seed = 2;
        purifier = build_purifier(pc);
    }
};

const Fixture& fixture() {
    static Fixture f;
    return f;
}

void BM_Embed(benchmark::State& state) {
    const auto& f = fixture();
    const Image& img = f.ds.entries.front().image;
    for (auto _ : state) {
        benchmark::DoNotOptimize(embed(f.extractor, img));
    }
}
BENCHMARK(BM_Embed);

void BM_EmbedGradient(benchmark::State& state) {
    const auto& f = fixture();
    const Image& img = f.ds.entries.front().image;
    EmbeddingVector target = embed(f.extractor, f.ds.entries.back().image);
    EmbeddingObjective obj;
    obj.value = [&](const EmbeddingVector& e) { return mae(e, target); };
    obj.grad = [&](const EmbeddingVector& e) {
        std::vector<double> g(e.v.size());
        for (std::size_t i = 0; i < g.size(); ++i)
            g[i] = ((e.v[i] > target.v[i]) ? 1.0 : -1.0) / static_cast<double>(g.size());
        return g;
    };
    for (auto _ : state) {
        benchmark::DoNotOptimize(embed_gradient(f.extractor, img, obj));
    }
}
BENCHMARK(BM_EmbedGradient);

void BM_FawkesCloak(benchmark::State& state) {
    const auto& f = fixture();
    AttackConfig cfg;
    cfg.steps = static_cast<int>(state.range(0));
    cfg.seed = 3;
    const Image& x = f.ds.entries.front().image;
    const Image& target = f.ds.entries.back().image;
    for (auto _ : state) {
        benchmark::DoNotOptimize(fawkes_cloak(x, target, f.extractor, cfg));
    }
}
BENCHMARK(BM_FawkesCloak)->Arg(5)->Arg(20);

void BM_LowkeyCloak(benchmark::State& state) {
    const auto& f = fixture();
    AttackConfig cfg;
    cfg.steps = static_cast<int>(state.range(0));
    cfg.seed = 4;
    const Image& x = f.ds.entries.front().image;
    std::vector<const ExtractorModel*> ensemble = {&f.extractor};
    for (auto _ : state) {
        benchmark::DoNotOptimize(lowkey_cloak(x, ensemble, cfg));
    }
}
BENCHMARK(BM_LowkeyCloak)->Arg(5)->Arg(20);

void BM_PurifierForward(benchmark::State& state) {
    const auto& f = fixture();
    const Image& img = f.ds.entries.front().image;
    for (auto _ : state) {
        benchmark::DoNotOptimize(purify(f.purifier, img));
    }
}
BENCHMARK(BM_PurifierForward);

void BM_PurifierTrainStep(benchmark::State& state) {
    const auto& f = fixture();
    Rng rng(5);
    std::vector<PurifierTrainPair> batch(4);
    for (auto& p : batch) {
        p.natural = f.ds.entries.front().image;
        Tensor delta({3, 32, 32});
        for (std::size_t i = 0; i < delta.size(); ++i) delta[i] = rng.uniform(-0.06, 0.06);
        p.cloak = Cloak(delta);
        p.identity = "bench";
    }
    PurifierModel m = f.purifier;
    std::vector<Tensor> grads;
    for (auto* p : m.parameters()) grads.push_back(Tensor::zeros_like(*p));
    for (auto _ : state) {
        for (auto& g : grads) g.fill(0.0);
        benchmark::DoNotOptimize(combined_loss(m, f.extractor, batch, 5.0, 1.0, &grads, nullptr));
    }
}
BENCHMARK(BM_PurifierTrainStep);

void BM_WaveletDenoise(benchmark::State& state) {
    const auto& f = fixture();
    const Image& img = f.ds.entries.front().image;
    for (auto _ : state) {
        benchmark::DoNotOptimize(wavelet_denoise(img, 0.04));
    }
}
BENCHMARK(BM_WaveletDenoise);

void BM_PixelDeflection(benchmark::State& state) {
    const auto& f = fixture();
    const Image& img = f.ds.entries.front().image;
    for (auto _ : state) {
        benchmark::DoNotOptimize(pixel_deflection(img, 200, 10, 6));
    }
}
BENCHMARK(BM_PixelDeflection);

}  // namespace

BENCHMARK_MAIN();
