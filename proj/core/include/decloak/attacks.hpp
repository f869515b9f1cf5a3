// Copyright (c) 2026 decloak contributors
// SPDX-License-Identifier: Apache-2.0

#ifndef DECLOAK_ATTACKS_HPP
#define DECLOAK_ATTACKS_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "decloak/dataset.hpp"
#include "decloak/extractor.hpp"
#include "decloak/image.hpp"

namespace decloak {

enum class AttackKind { fawkes, lowkey };

struct AttackConfig {
    double epsilon = 0.06;   // L-inf budget in [0,1] pixel units
    int steps = 40;
    double step_size = 0.0;  // <= 0 means epsilon / 10
    double blur_sigma = 1.0; // lowkey robustness term; <= 0 disables the blur
    std::uint64_t seed = 0;

    double effective_step() const { return step_size > 0.0 ? step_size : epsilon / 10.0; }
    void validate() const;
};

/// Separable Gaussian blur (5-tap kernel, reflect padding). sigma <= 0 is the
/// identity.
Tensor gaussian_blur(const Tensor& x, double sigma);
Image gaussian_blur(const Image& x, double sigma);

/// Adjoint of gaussian_blur, for pulling gradients through the blur.
Tensor gaussian_blur_adjoint(const Tensor& gy, double sigma);

/// Targeted cloak: signed-gradient steps on the cloak to pull the embedding
/// of clip(x + c) toward the target image's embedding, keeping ||c||_inf
/// within epsilon. Returns the best iterate (never worse than c = 0).
Cloak fawkes_cloak(const Image& x, const Image& target, const ExtractorModel& model,
                   const AttackConfig& cfg);

/// Untargeted cloak: signed-gradient ascent on the mean embedding drift over
/// an ensemble, with a blur-robustness term. Returns the best iterate.
Cloak lowkey_cloak(const Image& x, const std::vector<const ExtractorModel*>& ensemble,
                   const AttackConfig& cfg);

/// Replace every train image of `attacker` with its cloaked version. For the
/// fawkes variant each image gets a seeded random target drawn from a
/// different identity's train images; models[0] is the surrogate. For lowkey
/// all models form the ensemble. Test images and other identities are
/// untouched.
IdentityDataset cloak_identity(const IdentityDataset& ds, const std::string& attacker,
                               AttackKind kind,
                               const std::vector<const ExtractorModel*>& models,
                               const AttackConfig& cfg);

}  // namespace decloak

#endif  // DECLOAK_ATTACKS_HPP
