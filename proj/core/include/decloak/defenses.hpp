// Copyright (c) 2026 decloak contributors
// SPDX-License-Identifier: Apache-2.0

#ifndef DECLOAK_DEFENSES_HPP
#define DECLOAK_DEFENSES_HPP

#include <cstdint>
#include <vector>

#include "decloak/dataset.hpp"
#include "decloak/image.hpp"
#include "decloak/purifier.hpp"

namespace decloak {

struct MagnetTrainConfig {
    double noise_sigma = 0.05;   // stddev of the Gaussian training noise
    double learning_rate = 1e-3;
    int epochs = 30;
    int batch_size = 16;
    std::uint64_t seed = 0;
    PurifierConfig autoencoder;

    void validate() const;
};

/// Denoising autoencoder baseline: same architecture as the purifier but
/// trained to map natural images plus Gaussian noise back to themselves with
/// a pure pixel loss. Use purify / purify_dataset to apply it.
PurifierModel train_magnet_reformer(const std::vector<Image>& naturals,
                                    const MagnetTrainConfig& cfg);

/// Random local pixel swaps: count draws of a position plus an offset within
/// a square window of the given radius (clamped at borders); every channel of
/// the drawn position is replaced from the pristine input. Throws when the
/// window does not fit the image.
Image pixel_deflection(const Image& x, int count, int window, std::uint64_t seed);

/// Orthonormal Haar transform (up to 2 levels), soft thresholding of detail
/// coefficients at sigma * sqrt(2 ln(H*W)), inverse transform, clip to [0,1].
Image wavelet_denoise(const Image& x, double sigma);

}  // namespace decloak

#endif  // DECLOAK_DEFENSES_HPP
