// Copyright (c) 2026 decloak contributors
// SPDX-License-Identifier: Apache-2.0

#ifndef DECLOAK_IMAGE_HPP
#define DECLOAK_IMAGE_HPP

#include <cstddef>
#include <vector>

#include "decloak/tensor.hpp"

namespace decloak {

/// RGB image with pixels in [0,1], stored CHW as {3, H, W}.
struct Image {
    Tensor px;

    Image() = default;
    explicit Image(const Tensor& t);
    Image(std::size_t height, std::size_t width, double fill = 0.0);

    std::size_t height() const { return px.dim(1); }
    std::size_t width() const { return px.dim(2); }

    double& at(std::size_t c, std::size_t y, std::size_t x) { return px.at(c, y, x); }
    double at(std::size_t c, std::size_t y, std::size_t x) const { return px.at(c, y, x); }

    bool operator==(const Image& other) const { return px == other.px; }

    /// Throws if any pixel is non-finite or outside [0,1].
    void validate() const;
};

/// Additive perturbation paired with an image; values may be negative.
struct Cloak {
    Tensor delta;

    Cloak() = default;
    explicit Cloak(const Tensor& t) : delta(t) {}
    static Cloak zeros(std::size_t height, std::size_t width) {
        return Cloak(Tensor({3, height, width}));
    }

    double linf_norm() const { return delta.max_abs(); }
};

/// Unit-L2-norm feature vector.
struct EmbeddingVector {
    std::vector<double> v;

    EmbeddingVector() = default;
    explicit EmbeddingVector(std::vector<double> values) : v(std::move(values)) {}

    std::size_t dim() const { return v.size(); }
    double l2_norm() const;
};

/// Clamp every element into [0,1]. Throws "non-finite pixels" on non-finite input.
Tensor clip_unit(const Tensor& x);
Image clip_unit(const Image& x);

/// Mean squared elementwise difference. Shapes must match.
double mse(const Tensor& a, const Tensor& b);
double mse(const Image& a, const Image& b);

/// Mean absolute elementwise difference. Dimensions must match.
double mae(const EmbeddingVector& a, const EmbeddingVector& b);
double mae(const Tensor& a, const Tensor& b);

/// x + s * delta, elementwise; shapes must match.
Tensor add_scaled(const Tensor& x, double s, const Tensor& delta);

}  // namespace decloak

#endif  // DECLOAK_IMAGE_HPP
