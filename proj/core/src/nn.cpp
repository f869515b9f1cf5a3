// Copyright (c) 2026 decloak contributors
// SPDX-License-Identifier: Apache-2.0

#include "decloak/nn.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>

namespace decloak::nn {

namespace {

using MatMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

void check_chw(const Tensor& x, const char* who) {
    if (x.rank() != 3) throw std::invalid_argument(std::string(who) + ": expected CHW tensor");
}

}  // namespace

Tensor im2col(const Tensor& x, int ksize, int stride, int pad) {
    check_chw(x, "im2col");
    const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    const std::size_t ho = conv_out_dim(h, ksize, stride, pad);
    const std::size_t wo = conv_out_dim(w, ksize, stride, pad);
    const std::size_t k2 = static_cast<std::size_t>(ksize) * ksize;

    Tensor cols({c * k2, ho * wo});
    const double* xp = x.data();
    double* cp = cols.data();
    const std::size_t cols_stride = ho * wo;

    for (std::size_t ch = 0; ch < c; ++ch) {
        for (int ky = 0; ky < ksize; ++ky) {
            for (int kx = 0; kx < ksize; ++kx) {
                const std::size_t row = (ch * k2 + static_cast<std::size_t>(ky) * ksize + kx);
                double* dst = cp + row * cols_stride;
                for (std::size_t oy = 0; oy < ho; ++oy) {
                    const long iy = static_cast<long>(oy) * stride - pad + ky;
                    const bool y_ok = iy >= 0 && iy < static_cast<long>(h);
                    for (std::size_t ox = 0; ox < wo; ++ox) {
                        const long ix = static_cast<long>(ox) * stride - pad + kx;
                        double v = 0.0;
                        if (y_ok && ix >= 0 && ix < static_cast<long>(w)) {
                            v = xp[(ch * h + static_cast<std::size_t>(iy)) * w +
                                   static_cast<std::size_t>(ix)];
                        }
                        dst[oy * wo + ox] = v;
                    }
                }
            }
        }
    }
    return cols;
}

Tensor col2im(const Tensor& cols, int ksize, int stride, int pad, std::size_t channels,
              std::size_t height, std::size_t width) {
    const std::size_t ho = conv_out_dim(height, ksize, stride, pad);
    const std::size_t wo = conv_out_dim(width, ksize, stride, pad);
    const std::size_t k2 = static_cast<std::size_t>(ksize) * ksize;
    if (cols.rank() != 2 || cols.dim(0) != channels * k2 || cols.dim(1) != ho * wo) {
        throw std::invalid_argument("col2im: patch matrix shape mismatch");
    }

    Tensor x({channels, height, width});
    const double* cp = cols.data();
    double* xp = x.data();
    const std::size_t cols_stride = ho * wo;

    for (std::size_t ch = 0; ch < channels; ++ch) {
        for (int ky = 0; ky < ksize; ++ky) {
            for (int kx = 0; kx < ksize; ++kx) {
                const std::size_t row = (ch * k2 + static_cast<std::size_t>(ky) * ksize + kx);
                const double* src = cp + row * cols_stride;
                for (std::size_t oy = 0; oy < ho; ++oy) {
                    const long iy = static_cast<long>(oy) * stride - pad + ky;
                    if (iy < 0 || iy >= static_cast<long>(height)) continue;
                    for (std::size_t ox = 0; ox < wo; ++ox) {
                        const long ix = static_cast<long>(ox) * stride - pad + kx;
                        if (ix < 0 || ix >= static_cast<long>(width)) continue;
                        xp[(ch * height + static_cast<std::size_t>(iy)) * width +
                           static_cast<std::size_t>(ix)] += src[oy * wo + ox];
                    }
                }
            }
        }
    }
    return x;
}

// ---------------------------------------------------------------------------
// Conv2d

Conv2d::Conv2d(int in_channels, int out_channels, int kernel, int stride_, int pad_)
    : in_ch(in_channels),
      out_ch(out_channels),
      ksize(kernel),
      stride(stride_),
      pad(pad_),
      W({static_cast<std::size_t>(out_channels),
         static_cast<std::size_t>(in_channels) * kernel * kernel}),
      b({static_cast<std::size_t>(out_channels)}) {
    if (in_channels <= 0 || out_channels <= 0 || kernel <= 0 || stride_ <= 0 || pad_ < 0) {
        throw std::invalid_argument("Conv2d: invalid geometry");
    }
}

void Conv2d::init_params(Rng& rng) {
    const double scale = std::sqrt(2.0 / (static_cast<double>(in_ch) * ksize * ksize));
    for (std::size_t i = 0; i < W.size(); ++i) W[i] = rng.normal(0.0, scale);
    b.fill(0.0);
}

std::pair<std::size_t, std::size_t> Conv2d::out_hw(std::size_t h, std::size_t w) const {
    return {conv_out_dim(h, ksize, stride, pad), conv_out_dim(w, ksize, stride, pad)};
}

Tensor Conv2d::forward(const Tensor& x, Tensor* cols_out) const {
    check_chw(x, "Conv2d");
    if (x.dim(0) != static_cast<std::size_t>(in_ch)) {
        throw std::invalid_argument("Conv2d: channel mismatch");
    }
    auto [ho, wo] = out_hw(x.dim(1), x.dim(2));
    Tensor cols = im2col(x, ksize, stride, pad);

    Tensor y({static_cast<std::size_t>(out_ch), ho, wo});
    ConstMatMap wm(W.data(), out_ch, static_cast<long>(in_ch) * ksize * ksize);
    ConstMatMap cm(cols.data(), static_cast<long>(cols.dim(0)), static_cast<long>(cols.dim(1)));
    MatMap ym(y.data(), out_ch, static_cast<long>(ho * wo));
    ym.noalias() = wm * cm;
    for (int oc = 0; oc < out_ch; ++oc) ym.row(oc).array() += b[oc];

    if (cols_out) *cols_out = std::move(cols);
    return y;
}

Tensor Conv2d::backward(const Tensor& cols, std::size_t in_h, std::size_t in_w, const Tensor& gy,
                        Tensor& gW, Tensor& gb) const {
    const std::size_t l = gy.dim(1) * gy.dim(2);
    ConstMatMap gym(gy.data(), out_ch, static_cast<long>(l));
    ConstMatMap cm(cols.data(), static_cast<long>(cols.dim(0)), static_cast<long>(cols.dim(1)));
    ConstMatMap wm(W.data(), out_ch, static_cast<long>(in_ch) * ksize * ksize);

    MatMap gwm(gW.data(), out_ch, static_cast<long>(in_ch) * ksize * ksize);
    gwm.noalias() += gym * cm.transpose();
    // plain loop: Eigen's vectorized sum rounds differently depending on the
    // buffer's SIMD alignment, which breaks bitwise train determinism
    for (int oc = 0; oc < out_ch; ++oc) {
        const double* row = gy.data() + static_cast<std::size_t>(oc) * l;
        double s = 0.0;
        for (std::size_t i = 0; i < l; ++i) s += row[i];
        gb[oc] += s;
    }

    Tensor gcols({cols.dim(0), cols.dim(1)});
    MatMap gcm(gcols.data(), static_cast<long>(gcols.dim(0)), static_cast<long>(gcols.dim(1)));
    gcm.noalias() = wm.transpose() * gym;
    return col2im(gcols, ksize, stride, pad, static_cast<std::size_t>(in_ch), in_h, in_w);
}

// ---------------------------------------------------------------------------
// ConvTranspose2d

ConvTranspose2d::ConvTranspose2d(int in_channels, int out_channels, int kernel, int stride_,
                                 int pad_, int out_pad_)
    : in_ch(in_channels),
      out_ch(out_channels),
      ksize(kernel),
      stride(stride_),
      pad(pad_),
      out_pad(out_pad_),
      W({static_cast<std::size_t>(in_channels),
         static_cast<std::size_t>(out_channels) * kernel * kernel}),
      b({static_cast<std::size_t>(out_channels)}) {
    if (in_channels <= 0 || out_channels <= 0 || kernel <= 0 || stride_ <= 0 || pad_ < 0 ||
        out_pad_ < 0 || out_pad_ >= stride_) {
        throw std::invalid_argument("ConvTranspose2d: invalid geometry");
    }
}

void ConvTranspose2d::init_params(Rng& rng) {
    const double scale = std::sqrt(2.0 / (static_cast<double>(in_ch) * ksize * ksize));
    for (std::size_t i = 0; i < W.size(); ++i) W[i] = rng.normal(0.0, scale);
    b.fill(0.0);
}

std::pair<std::size_t, std::size_t> ConvTranspose2d::out_hw(std::size_t h, std::size_t w) const {
    const std::size_t ho = (h - 1) * stride - 2 * static_cast<std::size_t>(pad) + ksize + out_pad;
    const std::size_t wo = (w - 1) * stride - 2 * static_cast<std::size_t>(pad) + ksize + out_pad;
    return {ho, wo};
}

Tensor ConvTranspose2d::forward(const Tensor& x) const {
    check_chw(x, "ConvTranspose2d");
    if (x.dim(0) != static_cast<std::size_t>(in_ch)) {
        throw std::invalid_argument("ConvTranspose2d: channel mismatch");
    }
    auto [ho, wo] = out_hw(x.dim(1), x.dim(2));
    if (conv_out_dim(ho, ksize, stride, pad) != x.dim(1) ||
        conv_out_dim(wo, ksize, stride, pad) != x.dim(2)) {
        throw std::invalid_argument("ConvTranspose2d: inconsistent geometry");
    }

    const std::size_t l = x.dim(1) * x.dim(2);
    Tensor cols({static_cast<std::size_t>(out_ch) * ksize * ksize, l});
    ConstMatMap wm(W.data(), in_ch, static_cast<long>(out_ch) * ksize * ksize);
    ConstMatMap xm(x.data(), in_ch, static_cast<long>(l));
    MatMap cm(cols.data(), static_cast<long>(cols.dim(0)), static_cast<long>(l));
    cm.noalias() = wm.transpose() * xm;

    Tensor y = col2im(cols, ksize, stride, pad, static_cast<std::size_t>(out_ch), ho, wo);
    for (int oc = 0; oc < out_ch; ++oc) {
        double* row = y.data() + static_cast<std::size_t>(oc) * ho * wo;
        for (std::size_t i = 0; i < ho * wo; ++i) row[i] += b[oc];
    }
    return y;
}

Tensor ConvTranspose2d::backward(const Tensor& x, const Tensor& gy, Tensor& gW,
                                 Tensor& gb) const {
    const std::size_t l = x.dim(1) * x.dim(2);
    Tensor gcols = im2col(gy, ksize, stride, pad);  // {out_ch*k*k, l}

    ConstMatMap wm(W.data(), in_ch, static_cast<long>(out_ch) * ksize * ksize);
    ConstMatMap xm(x.data(), in_ch, static_cast<long>(l));
    ConstMatMap gcm(gcols.data(), static_cast<long>(gcols.dim(0)), static_cast<long>(l));

    MatMap gwm(gW.data(), in_ch, static_cast<long>(out_ch) * ksize * ksize);
    gwm.noalias() += xm * gcm.transpose();

    const std::size_t ho = gy.dim(1), wo = gy.dim(2);
    for (int oc = 0; oc < out_ch; ++oc) {
        const double* row = gy.data() + static_cast<std::size_t>(oc) * ho * wo;
        double s = 0.0;
        for (std::size_t i = 0; i < ho * wo; ++i) s += row[i];
        gb[oc] += s;
    }

    Tensor gx({static_cast<std::size_t>(in_ch), x.dim(1), x.dim(2)});
    MatMap gxm(gx.data(), in_ch, static_cast<long>(l));
    gxm.noalias() = wm * gcm;
    return gx;
}

// ---------------------------------------------------------------------------
// Linear

Linear::Linear(int in, int out)
    : in_dim(in),
      out_dim(out),
      W({static_cast<std::size_t>(out), static_cast<std::size_t>(in)}),
      b({static_cast<std::size_t>(out)}) {
    if (in <= 0 || out <= 0) throw std::invalid_argument("Linear: invalid dims");
}

void Linear::init_params(Rng& rng) {
    const double scale = std::sqrt(2.0 / static_cast<double>(in_dim));
    for (std::size_t i = 0; i < W.size(); ++i) W[i] = rng.normal(0.0, scale);
    b.fill(0.0);
}

std::vector<double> Linear::forward(const std::vector<double>& x) const {
    if (x.size() != static_cast<std::size_t>(in_dim)) {
        throw std::invalid_argument("Linear: input dim mismatch");
    }
    std::vector<double> y(out_dim);
    for (int o = 0; o < out_dim; ++o) {
        const double* wr = W.data() + static_cast<std::size_t>(o) * in_dim;
        double s = b[o];
        for (int i = 0; i < in_dim; ++i) s += wr[i] * x[i];
        y[o] = s;
    }
    return y;
}

std::vector<double> Linear::backward(const std::vector<double>& x, const std::vector<double>& gy,
                                     Tensor& gW, Tensor& gb) const {
    std::vector<double> gx(in_dim, 0.0);
    for (int o = 0; o < out_dim; ++o) {
        const double g = gy[o];
        const double* wr = W.data() + static_cast<std::size_t>(o) * in_dim;
        double* gwr = gW.data() + static_cast<std::size_t>(o) * in_dim;
        gb[o] += g;
        for (int i = 0; i < in_dim; ++i) {
            gwr[i] += g * x[i];
            gx[i] += g * wr[i];
        }
    }
    return gx;
}

// ---------------------------------------------------------------------------
// Activations, pooling, losses

Tensor relu(const Tensor& x) {
    Tensor y = x;
    for (std::size_t i = 0; i < y.size(); ++i) {
        if (y[i] < 0.0) y[i] = 0.0;
    }
    return y;
}

Tensor relu_backward(const Tensor& y, const Tensor& gy) {
    Tensor gx = gy;
    for (std::size_t i = 0; i < gx.size(); ++i) {
        if (y[i] <= 0.0) gx[i] = 0.0;
    }
    return gx;
}

Tensor avg_pool2(const Tensor& x) {
    check_chw(x, "avg_pool2");
    const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    if (h % 2 != 0 || w % 2 != 0) throw std::invalid_argument("avg_pool2: odd spatial dims");
    Tensor y({c, h / 2, w / 2});
    for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t oy = 0; oy < h / 2; ++oy) {
            for (std::size_t ox = 0; ox < w / 2; ++ox) {
                const double s = x.at(ch, 2 * oy, 2 * ox) + x.at(ch, 2 * oy, 2 * ox + 1) +
                                 x.at(ch, 2 * oy + 1, 2 * ox) + x.at(ch, 2 * oy + 1, 2 * ox + 1);
                y.at(ch, oy, ox) = 0.25 * s;
            }
        }
    }
    return y;
}

Tensor avg_pool2_backward(const Tensor& gy, std::size_t in_h, std::size_t in_w) {
    const std::size_t c = gy.dim(0);
    Tensor gx({c, in_h, in_w});
    for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t oy = 0; oy < gy.dim(1); ++oy) {
            for (std::size_t ox = 0; ox < gy.dim(2); ++ox) {
                const double g = 0.25 * gy.at(ch, oy, ox);
                gx.at(ch, 2 * oy, 2 * ox) = g;
                gx.at(ch, 2 * oy, 2 * ox + 1) = g;
                gx.at(ch, 2 * oy + 1, 2 * ox) = g;
                gx.at(ch, 2 * oy + 1, 2 * ox + 1) = g;
            }
        }
    }
    return gx;
}

std::vector<double> global_avg_pool(const Tensor& x) {
    check_chw(x, "global_avg_pool");
    const std::size_t c = x.dim(0), hw = x.dim(1) * x.dim(2);
    std::vector<double> y(c, 0.0);
    for (std::size_t ch = 0; ch < c; ++ch) {
        const double* row = x.data() + ch * hw;
        double s = 0.0;
        for (std::size_t i = 0; i < hw; ++i) s += row[i];
        y[ch] = s / static_cast<double>(hw);
    }
    return y;
}

Tensor global_avg_pool_backward(const std::vector<double>& g, std::size_t channels,
                                std::size_t height, std::size_t width) {
    Tensor gx({channels, height, width});
    const double inv = 1.0 / static_cast<double>(height * width);
    for (std::size_t ch = 0; ch < channels; ++ch) {
        double* row = gx.data() + ch * height * width;
        const double v = g[ch] * inv;
        for (std::size_t i = 0; i < height * width; ++i) row[i] = v;
    }
    return gx;
}

std::vector<double> l2_normalize(const std::vector<double>& v) {
    double n = 0.0;
    for (double x : v) n += x * x;
    n = std::sqrt(n);
    if (n < 1e-12) throw std::runtime_error("l2_normalize: zero-norm vector");
    std::vector<double> y(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) y[i] = v[i] / n;
    return y;
}

std::vector<double> l2_normalize_backward(const std::vector<double>& v,
                                          const std::vector<double>& gy) {
    double n = 0.0;
    for (double x : v) n += x * x;
    n = std::sqrt(n);
    if (n < 1e-12) throw std::runtime_error("l2_normalize_backward: zero-norm vector");
    double dot = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) dot += v[i] * gy[i];
    std::vector<double> gx(v.size());
    const double inv = 1.0 / n;
    const double c = dot / (n * n);
    for (std::size_t i = 0; i < v.size(); ++i) gx[i] = (gy[i] - v[i] * c) * inv;
    return gx;
}

double softmax_cross_entropy(const std::vector<double>& logits, std::size_t label,
                             std::vector<double>* grad) {
    if (label >= logits.size()) throw std::invalid_argument("softmax_cross_entropy: bad label");
    double mx = logits[0];
    for (double v : logits) mx = std::max(mx, v);
    double lse = 0.0;
    for (double v : logits) lse += std::exp(v - mx);
    lse = mx + std::log(lse);
    if (grad) {
        grad->resize(logits.size());
        for (std::size_t i = 0; i < logits.size(); ++i) {
            (*grad)[i] = std::exp(logits[i] - lse) - (i == label ? 1.0 : 0.0);
        }
    }
    return lse - logits[label];
}

std::size_t argmax(const std::vector<double>& v) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i) {
        if (v[i] > v[best]) best = i;
    }
    return best;
}

// ---------------------------------------------------------------------------
// Adam

void Adam::step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads) {
    if (params.size() != grads.size()) throw std::invalid_argument("Adam: grad count mismatch");
    if (m.empty()) {
        for (const Tensor* p : params) {
            m.push_back(Tensor::zeros_like(*p));
            v.push_back(Tensor::zeros_like(*p));
        }
    }
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Tensor& p = *params[pi];
        const Tensor& g = grads[pi];
        Tensor& mi = m[pi];
        Tensor& vi = v[pi];
        for (std::size_t i = 0; i < p.size(); ++i) {
            mi[i] = beta1 * mi[i] + (1.0 - beta1) * g[i];
            vi[i] = beta2 * vi[i] + (1.0 - beta2) * g[i] * g[i];
            const double mhat = mi[i] / bc1;
            const double vhat = vi[i] / bc2;
            p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

std::vector<Tensor> zero_grads_like(const ConstParamRefs& params) {
    std::vector<Tensor> grads;
    grads.reserve(params.size());
    for (const Tensor* p : params) grads.push_back(Tensor::zeros_like(*p));
    return grads;
}

double param_distance(const ConstParamRefs& a, const ConstParamRefs& b) {
    if (a.size() != b.size()) throw std::invalid_argument("param_distance: structure mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (!a[i]->same_shape(*b[i])) {
            throw std::invalid_argument("param_distance: shape mismatch");
        }
        for (std::size_t j = 0; j < a[i]->size(); ++j) {
            const double d = (*a[i])[j] - (*b[i])[j];
            s += d * d;
        }
    }
    return std::sqrt(s);
}

std::size_t param_count(const ConstParamRefs& params) {
    std::size_t n = 0;
    for (const Tensor* p : params) n += p->size();
    return n;
}

}  // namespace decloak::nn
