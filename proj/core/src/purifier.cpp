// Copyright (c) 2026 decloak contributors
// SPDX-License-Identifier: Apache-2.0

#include "decloak/purifier.hpp"

#include <stdexcept>

#include "decloak/rng.hpp"

namespace decloak {

void PurifierConfig::validate() const {
    if (image_size < 8 || image_size % 2 != 0) {
        throw std::invalid_argument("image_size must be even and >= 8");
    }
    if (channels < 1) throw std::invalid_argument("channels must be positive");
    if (depth < 4 || depth % 2 != 0) {
        throw std::invalid_argument("depth must be even and >= 4");
    }
    if (skip_interval < 2 || skip_interval % 2 != 0) {
        throw std::invalid_argument("skip_interval must be even and >= 2");
    }
}

nn::ParamRefs PurifierModel::parameters() {
    nn::ParamRefs p;
    for (auto& c : convs) {
        p.push_back(&c.W);
        p.push_back(&c.b);
    }
    for (auto& d : deconvs) {
        p.push_back(&d.W);
        p.push_back(&d.b);
    }
    return p;
}

nn::ConstParamRefs PurifierModel::parameters() const {
    nn::ConstParamRefs p;
    for (const auto& c : convs) {
        p.push_back(&c.W);
        p.push_back(&c.b);
    }
    for (const auto& d : deconvs) {
        p.push_back(&d.W);
        p.push_back(&d.b);
    }
    return p;
}

PurifierModel build_purifier(const PurifierConfig& cfg) {
    cfg.validate();
    PurifierModel m;
    m.cfg = cfg;
    Rng rng(mix_seed(cfg.seed, 0xF1));
    const int e = cfg.layers_per_side();
    const int ch = cfg.channels;

    for (int i = 0; i < e; ++i) {
        int in_ch = (i == 0) ? 3 : ch;
        int stride = (i == 0) ? 2 : 1;
        nn::Conv2d conv(in_ch, ch, 3, stride, 1);
        conv.init_params(rng);
        m.convs.push_back(std::move(conv));
    }
    for (int j = 0; j < e; ++j) {
        bool last = (j == e - 1);
        int out_ch = last ? 3 : ch;
        int stride = last ? 2 : 1;
        nn::ConvTranspose2d deconv(ch, out_ch, 3, stride, 1, last ? 1 : 0);
        deconv.init_params(rng);
        m.deconvs.push_back(std::move(deconv));
    }

    // Decoder layer j mirrors encoder layer i = e - 1 - j (0-based). A skip
    // lands there when the 1-based encoder index is a multiple of
    // skip_interval; the final decoder layer never receives one because the
    // first encoder layer's 1-based index is 1.
    m.skip_source.assign(static_cast<std::size_t>(e), -1);
    for (int j = 0; j < e; ++j) {
        int i = e - 1 - j;
        if ((i + 1) % cfg.skip_interval == 0) m.skip_source[static_cast<std::size_t>(j)] = i;
    }
    return m;
}

Tensor purifier_forward_raw(const PurifierModel& m, const Tensor& x, PurifierTrace* trace) {
    if (x.rank() != 3 || x.dim(0) != 3) {
        throw std::invalid_argument("purifier expects a {3,H,W} tensor");
    }
    const std::size_t e = m.convs.size();
    PurifierTrace local;
    PurifierTrace& tr = trace ? *trace : local;
    tr.conv_cols.assign(e, Tensor({1}, 0.0));
    tr.conv_in_hw.assign(e, {0, 0});
    tr.conv_out.assign(e, Tensor({1}, 0.0));
    tr.deconv_in.assign(e, Tensor({1}, 0.0));
    tr.deconv_out.assign(e, Tensor({1}, 0.0));

    Tensor h = x;
    for (std::size_t i = 0; i < e; ++i) {
        tr.conv_in_hw[i] = {h.dim(1), h.dim(2)};
        tr.conv_out[i] = nn::relu(m.convs[i].forward(h, &tr.conv_cols[i]));
        h = tr.conv_out[i];
    }
    for (std::size_t j = 0; j < e; ++j) {
        tr.deconv_in[j] = h;
        Tensor pre = m.deconvs[j].forward(h);
        if (m.skip_source[j] >= 0) {
            pre.axpy(1.0, tr.conv_out[static_cast<std::size_t>(m.skip_source[j])]);
        }
        h = (j + 1 < e) ? nn::relu(pre) : pre;
        tr.deconv_out[j] = h;
    }
    return h;
}

Tensor purifier_backward(const PurifierModel& m, const PurifierTrace& tr, const Tensor& gy,
                         std::vector<Tensor>& grads) {
    const std::size_t e = m.convs.size();
    if (grads.size() != 4 * e) throw std::invalid_argument("grads not aligned with parameters");

    std::vector<Tensor> skip_grad(e, Tensor({1}, 0.0));
    std::vector<char> has_skip(e, 0);

    Tensor g = gy;
    for (std::size_t j = e; j-- > 0;) {
        if (j + 1 < e) g = nn::relu_backward(tr.deconv_out[j], g);
        if (m.skip_source[j] >= 0) {
            auto src = static_cast<std::size_t>(m.skip_source[j]);
            if (has_skip[src]) {
                skip_grad[src].axpy(1.0, g);
            } else {
                skip_grad[src] = g;
                has_skip[src] = 1;
            }
        }
        g = m.deconvs[j].backward(tr.deconv_in[j], g, grads[2 * e + 2 * j],
                                  grads[2 * e + 2 * j + 1]);
    }
    for (std::size_t i = e; i-- > 0;) {
        if (has_skip[i]) g.axpy(1.0, skip_grad[i]);
        g = nn::relu_backward(tr.conv_out[i], g);
        g = m.convs[i].backward(tr.conv_cols[i], tr.conv_in_hw[i].first, tr.conv_in_hw[i].second,
                                g, grads[2 * i], grads[2 * i + 1]);
    }
    return g;
}

Image purify(const PurifierModel& m, const Image& x) {
    if (x.height() != static_cast<std::size_t>(m.cfg.image_size) ||
        x.width() != static_cast<std::size_t>(m.cfg.image_size)) {
        throw std::invalid_argument("image size does not match purifier config");
    }
    return clip_unit(Image(purifier_forward_raw(m, x.px, nullptr)));
}

IdentityDataset purify_dataset(const PurifierModel& m, const IdentityDataset& ds) {
    IdentityDataset out = ds;
    for (std::size_t i : out.train_idx) {
        out.entries[i].image = purify(m, out.entries[i].image);
    }
    return out;
}

}  // namespace decloak
