// Copyright (c) 2026 decloak contributors
// SPDX-License-Identifier: Apache-2.0

#ifndef DECLOAK_PURIFIER_HPP
#define DECLOAK_PURIFIER_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "decloak/dataset.hpp"
#include "decloak/image.hpp"
#include "decloak/nn.hpp"

namespace decloak {

struct PurifierConfig {
    int image_size = 32;
    int channels = 64;       // feature maps in every hidden layer
    int depth = 10;          // total conv + deconv layers; even, >= 4
    int skip_interval = 2;   // encoder layers between skip connections; even, >= 2
    std::uint64_t seed = 0;

    int layers_per_side() const { return depth / 2; }
    void validate() const;
};

struct PurifierTrainRecord {
    int epoch = 0;
    double image_loss = 0.0;
    double feature_loss = 0.0;
    double total_loss = 0.0;
};

/// Symmetric convolutional encoder-decoder. The first conv and the last
/// deconv use stride 2; interior layers keep resolution. Every
/// skip_interval-th encoder output is added to the matching decoder layer's
/// pre-activation. All layers are 3x3 with ReLU except the final deconv,
/// which is linear; outputs are clipped to [0,1] only at inference.
struct PurifierModel {
    PurifierConfig cfg;
    std::vector<nn::Conv2d> convs;
    std::vector<nn::ConvTranspose2d> deconvs;
    std::vector<int> skip_source;  // per deconv: encoder layer index or -1

    std::uint64_t dataset_fingerprint = 0;
    std::vector<PurifierTrainRecord> train_log;

    nn::ParamRefs parameters();
    nn::ConstParamRefs parameters() const;
};

PurifierModel build_purifier(const PurifierConfig& cfg);

/// Activations cached by purifier_forward_raw for the backward pass.
struct PurifierTrace {
    std::vector<Tensor> conv_cols;
    std::vector<std::pair<std::size_t, std::size_t>> conv_in_hw;
    std::vector<Tensor> conv_out;    // post-ReLU encoder outputs
    std::vector<Tensor> deconv_in;   // input to each decoder layer
    std::vector<Tensor> deconv_out;  // post-activation decoder outputs
};

/// Decoder output before clipping; shape equals the input shape.
Tensor purifier_forward_raw(const PurifierModel& m, const Tensor& x, PurifierTrace* trace);

/// Backward through the raw forward pass. grads is aligned with parameters()
/// and accumulated into; returns the gradient with respect to the input.
Tensor purifier_backward(const PurifierModel& m, const PurifierTrace& trace, const Tensor& gy,
                         std::vector<Tensor>& grads);

/// clip_unit(raw forward). The clip is applied only here, never in training.
Image purify(const PurifierModel& m, const Image& x);

/// Copy of ds with every train image purified; test images untouched.
IdentityDataset purify_dataset(const PurifierModel& m, const IdentityDataset& ds);

}  // namespace decloak

#endif  // DECLOAK_PURIFIER_HPP
