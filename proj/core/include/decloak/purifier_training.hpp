// Copyright (c) 2026 decloak contributors
// SPDX-License-Identifier: Apache-2.0

#ifndef DECLOAK_PURIFIER_TRAINING_HPP
#define DECLOAK_PURIFIER_TRAINING_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "decloak/attacks.hpp"
#include "decloak/extractor.hpp"
#include "decloak/image.hpp"
#include "decloak/purifier.hpp"

namespace decloak {

struct PurifierTrainPair {
    Image natural;
    Cloak cloak;
    std::string identity;
};

struct PurifierTrainConfig {
    double alpha = 5.0;           // cloak amplification factor
    double lambda = 1.0;          // feature loss weight
    double learning_rate = 1e-4;
    int epochs = 30;
    int batch_size = 16;
    std::uint64_t seed = 0;
    PurifierConfig purifier;

    void validate() const;
};

/// clip(natural + alpha * cloak); the network only ever sees these inputs.
Image amplify(const PurifierTrainPair& pair, double alpha);

struct PurifierLossTerms {
    double image_loss = 0.0;    // mse(output, natural)
    double feature_loss = 0.0;  // mae(F(output), F(natural))
    double total(double lambda) const { return image_loss + lambda * feature_loss; }
};

/// Loss terms for one raw (unclipped) purifier output against its natural
/// image, measured with feature extractor fx.
PurifierLossTerms combined_loss_terms(const Tensor& purified_raw, const Image& natural,
                                      const ExtractorModel& fx);

/// Mean combined loss over a batch. When param_grads is non-null it is
/// accumulated with d(mean total loss)/d(purifier params); terms_out receives
/// the mean individual terms when non-null.
double combined_loss(const PurifierModel& m, const ExtractorModel& fx,
                     const std::vector<PurifierTrainPair>& batch, double alpha, double lambda,
                     std::vector<Tensor>* param_grads, PurifierLossTerms* terms_out);

/// Adam training of a fresh purifier on amplified pairs. fx stays frozen.
/// Deterministic for a fixed config; per-epoch mean losses land in train_log.
PurifierModel train_purifier(const std::vector<PurifierTrainPair>& pairs,
                             const ExtractorModel& fx, const PurifierTrainConfig& cfg);

/// Build training pairs by running the targeted cloak attack against
/// surrogate on every train image of ds (capped at max_pairs > 0, selection
/// seeded). Targets are train images of other identities.
std::vector<PurifierTrainPair> make_fawkes_pairs(const IdentityDataset& ds,
                                                 const ExtractorModel& surrogate,
                                                 const AttackConfig& attack,
                                                 std::size_t max_pairs, std::uint64_t seed);

}  // namespace decloak

#endif  // DECLOAK_PURIFIER_TRAINING_HPP
