// Copyright (c) 2026 decloak contributors
// SPDX-License-Identifier: Apache-2.0

#include "decloak/image.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace decloak {

Image::Image(const Tensor& t) : px(t) {
    if (t.rank() != 3 || t.dim(0) != 3) {
        throw std::invalid_argument("Image: expected tensor of shape {3, H, W}");
    }
}

Image::Image(std::size_t height, std::size_t width, double fill)
    : px(Tensor({3, height, width}, fill)) {}

void Image::validate() const {
    for (std::size_t i = 0; i < px.size(); ++i) {
        double v = px[i];
        if (!std::isfinite(v)) throw std::invalid_argument("Image: non-finite pixels");
        if (v < 0.0 || v > 1.0) throw std::invalid_argument("Image: pixel outside [0,1]");
    }
}

double EmbeddingVector::l2_norm() const {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

Tensor clip_unit(const Tensor& x) {
    if (!x.all_finite()) throw std::invalid_argument("non-finite pixels");
    Tensor out = x;
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = std::clamp(out[i], 0.0, 1.0);
    }
    return out;
}

Image clip_unit(const Image& x) { return Image(clip_unit(x.px)); }

double mse(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("mse: shape mismatch");
    if (a.size() == 0) throw std::invalid_argument("mse: empty input");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double d = a[i] - b[i];
        s += d * d;
    }
    return s / static_cast<double>(a.size());
}

double mse(const Image& a, const Image& b) { return mse(a.px, b.px); }

double mae(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("mae: shape mismatch");
    if (a.size() == 0) throw std::invalid_argument("mae: empty input");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
    return s / static_cast<double>(a.size());
}

double mae(const EmbeddingVector& a, const EmbeddingVector& b) {
    if (a.dim() != b.dim()) throw std::invalid_argument("mae: dimension mismatch");
    if (a.dim() == 0) throw std::invalid_argument("mae: empty input");
    double s = 0.0;
    for (std::size_t i = 0; i < a.dim(); ++i) s += std::abs(a.v[i] - b.v[i]);
    return s / static_cast<double>(a.dim());
}

Tensor add_scaled(const Tensor& x, double s, const Tensor& delta) {
    if (!x.same_shape(delta)) throw std::invalid_argument("add_scaled: shape mismatch");
    Tensor out = x;
    out.axpy(s, delta);
    return out;
}

}  // namespace decloak
