// Copyright (c) 2026 decloak contributors
// SPDX-License-Identifier: Apache-2.0

#ifndef DECLOAK_RECOGNITION_HPP
#define DECLOAK_RECOGNITION_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "decloak/dataset.hpp"
#include "decloak/extractor.hpp"
#include "decloak/image.hpp"

namespace decloak {

enum class RecognitionKind { one_nn, linear, finetune };

std::string to_string(RecognitionKind v);
RecognitionKind recognition_from_string(const std::string& s);

/// Identity classifier built on top of an embedding extractor. For one_nn the
/// references hold every train embedding; linear trains a softmax head over
/// frozen embeddings; finetune also updates the backbone.
struct RecognitionModel {
    RecognitionKind kind = RecognitionKind::one_nn;
    ExtractorModel backbone;
    std::vector<std::string> labels;  // sorted identities

    // one_nn state
    std::vector<std::vector<double>> ref_embeddings;
    std::vector<std::string> ref_labels;

    // linear / finetune state
    nn::Linear head;
};

struct RecognitionTrainConfig {
    int epochs = 40;
    double learning_rate = 1e-2;
    int batch_size = 16;
    std::uint64_t seed = 0;

    void validate() const;
};

RecognitionModel train_1nn(const ExtractorModel& extractor, const IdentityDataset& ds);

RecognitionModel train_linear(const ExtractorModel& extractor, const IdentityDataset& ds,
                              const RecognitionTrainConfig& cfg);

/// Updates a copy of the backbone jointly with the head (gradients flow
/// through the embedding normalization).
RecognitionModel train_finetune(const ExtractorModel& extractor, const IdentityDataset& ds,
                                const RecognitionTrainConfig& cfg);

/// Predicted identity label. Ties (equal distance or equal logit) go to the
/// lexicographically smallest label.
std::string predict(const RecognitionModel& m, const Image& x);

}  // namespace decloak

#endif  // DECLOAK_RECOGNITION_HPP
