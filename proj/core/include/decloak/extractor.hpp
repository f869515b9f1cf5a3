// Copyright (c) 2026 decloak contributors
// SPDX-License-Identifier: Apache-2.0

#ifndef DECLOAK_EXTRACTOR_HPP
#define DECLOAK_EXTRACTOR_HPP

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "decloak/dataset.hpp"
#include "decloak/image.hpp"
#include "decloak/nn.hpp"

namespace decloak {

struct ExtractorConfig {
    int image_size = 32;
    std::vector<int> channels = {16, 32, 64};  // one conv block per entry
    int embed_dim = 64;
    int epochs = 25;
    double learning_rate = 3e-3;
    int batch_size = 16;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Small convolutional embedding network. Blocks are conv3x3 + ReLU with a
/// 2x2 average pool between blocks, then global average pooling, a linear
/// projection to embed_dim and L2 normalization. A classifier head over the
/// unnormalized projection exists only to drive supervised training.
struct ExtractorModel {
    ExtractorConfig cfg;
    std::vector<nn::Conv2d> convs;
    nn::Linear embed_head;
    nn::Linear class_head;
    std::vector<std::string> labels;  // class order used by class_head
    std::uint64_t dataset_fingerprint = 0;
    double final_train_accuracy = 0.0;

    nn::ParamRefs parameters();
    nn::ConstParamRefs parameters() const;
    nn::ParamRefs backbone_parameters();  // excludes class_head
    nn::ConstParamRefs backbone_parameters() const;
};

/// Activations cached by extractor_forward for the backward passes.
struct ExtractorTrace {
    Tensor input;
    std::vector<Tensor> conv_cols;
    std::vector<std::pair<std::size_t, std::size_t>> conv_in_hw;
    std::vector<Tensor> conv_out;  // post-ReLU
    std::vector<Tensor> pool_out;
    std::vector<double> pooled;
    std::vector<double> penult;
    std::vector<double> embedding;  // L2-normalized
    std::vector<double> logits;     // filled when with_logits
};

ExtractorModel make_extractor(const ExtractorConfig& cfg, std::size_t num_classes);

void extractor_forward(const ExtractorModel& m, const Tensor& x, ExtractorTrace& tr,
                       bool with_logits);

/// Backward from a gradient on the normalized embedding. Accumulates into
/// backbone_grads (aligned with backbone_parameters()) when non-null and
/// returns the gradient with respect to the input pixels.
Tensor extractor_backward_from_embedding(const ExtractorModel& m, const ExtractorTrace& tr,
                                         const std::vector<double>& g_embedding,
                                         std::vector<Tensor>* backbone_grads);

/// Backward from a gradient on the classifier logits. Accumulates into grads
/// (aligned with parameters()) when non-null.
Tensor extractor_backward_from_logits(const ExtractorModel& m, const ExtractorTrace& tr,
                                      const std::vector<double>& g_logits,
                                      std::vector<Tensor>* grads);

/// L2-normalized embedding of an image.
EmbeddingVector embed(const ExtractorModel& m, const Image& x);

/// Supervised training on the train split of ds (cross entropy over
/// identities). Deterministic for a fixed config.
ExtractorModel train_extractor(const IdentityDataset& ds, const ExtractorConfig& cfg);

/// Scalar objective over an embedding plus its gradient, used to pull
/// gradients back to pixel space without exposing network internals.
struct EmbeddingObjective {
    std::function<double(const EmbeddingVector&)> value;
    std::function<std::vector<double>(const EmbeddingVector&)> grad;
};

/// d objective / d pixels at x; shape {3, H, W}.
Tensor embed_gradient(const ExtractorModel& m, const Image& x, const EmbeddingObjective& obj);

}  // namespace decloak

#endif  // DECLOAK_EXTRACTOR_HPP
