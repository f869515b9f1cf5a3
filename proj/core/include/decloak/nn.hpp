// Copyright (c) 2026 decloak contributors
// SPDX-License-Identifier: Apache-2.0

#ifndef DECLOAK_NN_HPP
#define DECLOAK_NN_HPP

#include <cstddef>
#include <utility>
#include <vector>

#include "decloak/rng.hpp"
#include "decloak/tensor.hpp"

namespace decloak::nn {

/// Unfold a CHW tensor into a {C*k*k, ho*wo} patch matrix (zero padding).
Tensor im2col(const Tensor& x, int ksize, int stride, int pad);

/// Exact adjoint of im2col: scatter-add a patch matrix back into a {C,H,W} tensor.
Tensor col2im(const Tensor& cols, int ksize, int stride, int pad,
              std::size_t channels, std::size_t height, std::size_t width);

inline std::size_t conv_out_dim(std::size_t in, int ksize, int stride, int pad) {
    return (in + 2 * static_cast<std::size_t>(pad) - static_cast<std::size_t>(ksize)) /
               static_cast<std::size_t>(stride) +
           1;
}

/// 2-D convolution, weights {out_ch, in_ch*k*k}, bias {out_ch}.
struct Conv2d {
    int in_ch = 0, out_ch = 0, ksize = 3, stride = 1, pad = 1;
    Tensor W, b;

    Conv2d() = default;
    Conv2d(int in_channels, int out_channels, int kernel, int stride_, int pad_);

    void init_params(Rng& rng);
    std::pair<std::size_t, std::size_t> out_hw(std::size_t h, std::size_t w) const;

    /// Forward pass; if cols_out is non-null the im2col matrix is stored there
    /// for reuse by backward().
    Tensor forward(const Tensor& x, Tensor* cols_out = nullptr) const;

    /// Returns grad wrt input; accumulates parameter grads into gW/gb.
    Tensor backward(const Tensor& cols, std::size_t in_h, std::size_t in_w,
                    const Tensor& gy, Tensor& gW, Tensor& gb) const;
};

/// Transposed 2-D convolution (the adjoint map of a Conv2d with the same
/// geometry), weights {in_ch, out_ch*k*k}, bias {out_ch}.
struct ConvTranspose2d {
    int in_ch = 0, out_ch = 0, ksize = 3, stride = 1, pad = 1, out_pad = 0;
    Tensor W, b;

    ConvTranspose2d() = default;
    ConvTranspose2d(int in_channels, int out_channels, int kernel, int stride_, int pad_,
                    int out_pad_);

    void init_params(Rng& rng);
    std::pair<std::size_t, std::size_t> out_hw(std::size_t h, std::size_t w) const;

    Tensor forward(const Tensor& x) const;

    /// Returns grad wrt input; accumulates parameter grads into gW/gb.
    Tensor backward(const Tensor& x, const Tensor& gy, Tensor& gW, Tensor& gb) const;
};

/// Fully connected layer, weights {out_dim, in_dim}, bias {out_dim}.
struct Linear {
    int in_dim = 0, out_dim = 0;
    Tensor W, b;

    Linear() = default;
    Linear(int in, int out);

    void init_params(Rng& rng);
    std::vector<double> forward(const std::vector<double>& x) const;
    std::vector<double> backward(const std::vector<double>& x, const std::vector<double>& gy,
                                 Tensor& gW, Tensor& gb) const;
};

Tensor relu(const Tensor& x);
/// gy masked by the post-activation output (y > 0  <=>  pre-activation > 0).
Tensor relu_backward(const Tensor& y, const Tensor& gy);

/// 2x2 average pooling, stride 2; spatial dims must be even.
Tensor avg_pool2(const Tensor& x);
Tensor avg_pool2_backward(const Tensor& gy, std::size_t in_h, std::size_t in_w);

std::vector<double> global_avg_pool(const Tensor& x);
Tensor global_avg_pool_backward(const std::vector<double>& g, std::size_t channels,
                                std::size_t height, std::size_t width);

/// v / ||v||_2; throws on (near-)zero norm.
std::vector<double> l2_normalize(const std::vector<double>& v);
/// Grad wrt v of l2_normalize(v), given upstream grad gy.
std::vector<double> l2_normalize_backward(const std::vector<double>& v,
                                          const std::vector<double>& gy);

/// Numerically stable cross-entropy over logits; fills grad (softmax - onehot)
/// when non-null. Returns the loss.
double softmax_cross_entropy(const std::vector<double>& logits, std::size_t label,
                             std::vector<double>* grad);

std::size_t argmax(const std::vector<double>& v);

/// Adam optimizer over a fixed parameter list.
struct Adam {
    double lr, beta1, beta2, eps;
    long t = 0;
    std::vector<Tensor> m, v;

    explicit Adam(double learning_rate, double beta1_ = 0.9, double beta2_ = 0.999,
                  double eps_ = 1e-8)
        : lr(learning_rate), beta1(beta1_), beta2(beta2_), eps(eps_) {}

    void step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads);
};

using ParamRefs = std::vector<Tensor*>;
using ConstParamRefs = std::vector<const Tensor*>;

std::vector<Tensor> zero_grads_like(const ConstParamRefs& params);
inline std::vector<Tensor> zero_grads_like(const ParamRefs& params) {
    return zero_grads_like(ConstParamRefs(params.begin(), params.end()));
}

/// L2 distance between two parameter lists of identical structure.
double param_distance(const ConstParamRefs& a, const ConstParamRefs& b);

std::size_t param_count(const ConstParamRefs& params);

}  // namespace decloak::nn

#endif  // DECLOAK_NN_HPP
