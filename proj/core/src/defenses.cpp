// Copyright (c) 2026 decloak contributors
// SPDX-License-Identifier: Apache-2.0

#include "decloak/defenses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "decloak/rng.hpp"

namespace decloak {

void MagnetTrainConfig::validate() const {
    if (!(noise_sigma >= 0.0)) throw std::invalid_argument("noise_sigma must be >= 0");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be positive");
    if (epochs < 0) throw std::invalid_argument("epochs must be >= 0");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    autoencoder.validate();
}

PurifierModel train_magnet_reformer(const std::vector<Image>& naturals,
                                    const MagnetTrainConfig& cfg) {
    cfg.validate();
    if (naturals.empty()) throw std::invalid_argument("no training images");
    for (const auto& img : naturals) {
        if (img.height() != static_cast<std::size_t>(cfg.autoencoder.image_size) ||
            img.width() != static_cast<std::size_t>(cfg.autoencoder.image_size)) {
            throw std::invalid_argument("image size does not match autoencoder config");
        }
    }

    PurifierConfig arch = cfg.autoencoder;
    arch.seed = mix_seed(cfg.seed, 0x3A6);
    PurifierModel m = build_purifier(arch);
    nn::Adam opt(cfg.learning_rate);
    nn::ParamRefs params = m.parameters();
    std::vector<Tensor> grads = nn::zero_grads_like(params);

    std::vector<std::size_t> order(naturals.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(mix_seed(cfg.seed, 0x3A7));

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i) {
            std::size_t j =
                static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
            std::swap(order[i - 1], order[j]);
        }
        PurifierTrainRecord rec;
        rec.epoch = epoch;
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(cfg.batch_size)) {
            std::size_t end =
                std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            for (auto& g : grads) g.fill(0.0);
            double inv_b = 1.0 / static_cast<double>(end - start);
            for (std::size_t k = start; k < end; ++k) {
                const Image& nat = naturals[order[k]];
                Tensor noisy = nat.px;
                if (cfg.noise_sigma > 0.0) {
                    for (std::size_t p = 0; p < noisy.size(); ++p) {
                        noisy[p] += rng.normal(0.0, cfg.noise_sigma);
                    }
                    noisy = clip_unit(noisy);
                }
                PurifierTrace tr;
                Tensor out = purifier_forward_raw(m, noisy, &tr);
                Tensor g_out(out.shape(), 0.0);
                const double inv_n = 1.0 / static_cast<double>(out.size());
                double loss = 0.0;
                for (std::size_t p = 0; p < out.size(); ++p) {
                    double d = out[p] - nat.px[p];
                    loss += d * d * inv_n;
                    g_out[p] = 2.0 * d * inv_n * inv_b;
                }
                rec.image_loss += loss;
                purifier_backward(m, tr, g_out, grads);
            }
            opt.step(params, grads);
        }
        rec.image_loss /= static_cast<double>(order.size());
        rec.total_loss = rec.image_loss;
        m.train_log.push_back(rec);
    }
    return m;
}

Image pixel_deflection(const Image& x, int count, int window, std::uint64_t seed) {
    if (count < 0) throw std::invalid_argument("count must be >= 0");
    if (window < 1) throw std::invalid_argument("window must be >= 1");
    const auto h = static_cast<std::int64_t>(x.height());
    const auto w = static_cast<std::int64_t>(x.width());
    if (window >= std::min(h, w)) throw std::invalid_argument("window larger than image");

    Image out = x;
    Rng rng(seed);
    for (int t = 0; t < count; ++t) {
        std::int64_t px = rng.uniform_int(0, w - 1);
        std::int64_t py = rng.uniform_int(0, h - 1);
        std::int64_t dx = rng.uniform_int(-window, window);
        std::int64_t dy = rng.uniform_int(-window, window);
        std::int64_t sx = std::clamp(px + dx, std::int64_t{0}, w - 1);
        std::int64_t sy = std::clamp(py + dy, std::int64_t{0}, h - 1);
        for (std::size_t c = 0; c < 3; ++c) {
            // Values always come from the pristine input, not earlier swaps.
            out.at(c, static_cast<std::size_t>(py), static_cast<std::size_t>(px)) =
                x.at(c, static_cast<std::size_t>(sy), static_cast<std::size_t>(sx));
        }
    }
    return out;
}

namespace {

constexpr double kInvSqrt2 = 0.7071067811865475244;

/// One forward Haar step over the leading n elements of a strided line.
void haar_line(double* p, std::size_t n, std::size_t stride) {
    std::vector<double> tmp(n);
    const std::size_t half = n / 2;
    for (std::size_t i = 0; i < half; ++i) {
        double a = p[2 * i * stride];
        double b = p[(2 * i + 1) * stride];
        tmp[i] = (a + b) * kInvSqrt2;
        tmp[half + i] = (a - b) * kInvSqrt2;
    }
    for (std::size_t i = 0; i < n; ++i) p[i * stride] = tmp[i];
}

void haar_line_inverse(double* p, std::size_t n, std::size_t stride) {
    std::vector<double> tmp(n);
    const std::size_t half = n / 2;
    for (std::size_t i = 0; i < half; ++i) {
        double a = p[i * stride];
        double d = p[(half + i) * stride];
        tmp[2 * i] = (a + d) * kInvSqrt2;
        tmp[2 * i + 1] = (a - d) * kInvSqrt2;
    }
    for (std::size_t i = 0; i < n; ++i) p[i * stride] = tmp[i];
}

int haar_levels(std::size_t h, std::size_t w) {
    int levels = 0;
    while (levels < 2 && h % 2 == 0 && w % 2 == 0) {
        ++levels;
        h /= 2;
        w /= 2;
    }
    return levels;
}

}  // namespace

Image wavelet_denoise(const Image& x, double sigma) {
    if (!(sigma >= 0.0)) throw std::invalid_argument("sigma must be >= 0");
    const std::size_t h = x.height();
    const std::size_t w = x.width();
    const int levels = haar_levels(h, w);
    const double tau = sigma * std::sqrt(2.0 * std::log(static_cast<double>(h * w)));

    Tensor out = x.px;
    for (std::size_t c = 0; c < 3; ++c) {
        double* plane = out.data() + c * h * w;
        std::size_t lh = h, lw = w;
        for (int lv = 0; lv < levels; ++lv) {
            for (std::size_t row = 0; row < lh; ++row) haar_line(plane + row * w, lw, 1);
            for (std::size_t col = 0; col < lw; ++col) haar_line(plane + col, lh, w);
            lh /= 2;
            lw /= 2;
        }
        // Soft-threshold everything outside the final approximation block.
        for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t xx = 0; xx < w; ++xx) {
                if (y < lh && xx < lw) continue;
                double v = plane[y * w + xx];
                double mag = std::abs(v) - tau;
                plane[y * w + xx] = mag > 0.0 ? (v > 0.0 ? mag : -mag) : 0.0;
            }
        }
        for (int lv = levels; lv-- > 0;) {
            std::size_t sh = h >> (lv + 1), sw = w >> (lv + 1);
            std::size_t rh = sh * 2, rw = sw * 2;
            for (std::size_t col = 0; col < rw; ++col) haar_line_inverse(plane + col, rh, w);
            for (std::size_t row = 0; row < rh; ++row) haar_line_inverse(plane + row * w, rw, 1);
        }
    }
    return clip_unit(Image(out));
}

}  // namespace decloak
