// Copyright (c) 2026 decloak contributors
// SPDX-License-Identifier: Apache-2.0

#include "decloak/extractor.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <stdexcept>

#include "decloak/rng.hpp"

namespace decloak {

void ExtractorConfig::validate() const {
    if (channels.empty()) throw std::invalid_argument("channels must be non-empty");
    for (int c : channels) {
        if (c < 1) throw std::invalid_argument("channel counts must be positive");
    }
    if (embed_dim < 2) throw std::invalid_argument("embed_dim must be >= 2");
    if (image_size < 8) throw std::invalid_argument("image_size must be >= 8");
    int s = image_size;
    for (std::size_t i = 0; i + 1 < channels.size(); ++i) {
        if (s % 2 != 0) throw std::invalid_argument("image_size not divisible by pooling chain");
        s /= 2;
    }
    if (epochs < 0) throw std::invalid_argument("epochs must be >= 0");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be positive");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
}

nn::ParamRefs ExtractorModel::parameters() {
    nn::ParamRefs p = backbone_parameters();
    p.push_back(&class_head.W);
    p.push_back(&class_head.b);
    return p;
}

nn::ConstParamRefs ExtractorModel::parameters() const {
    nn::ConstParamRefs p = backbone_parameters();
    p.push_back(&class_head.W);
    p.push_back(&class_head.b);
    return p;
}

nn::ParamRefs ExtractorModel::backbone_parameters() {
    nn::ParamRefs p;
    for (auto& c : convs) {
        p.push_back(&c.W);
        p.push_back(&c.b);
    }
    p.push_back(&embed_head.W);
    p.push_back(&embed_head.b);
    return p;
}

nn::ConstParamRefs ExtractorModel::backbone_parameters() const {
    nn::ConstParamRefs p;
    for (const auto& c : convs) {
        p.push_back(&c.W);
        p.push_back(&c.b);
    }
    p.push_back(&embed_head.W);
    p.push_back(&embed_head.b);
    return p;
}

ExtractorModel make_extractor(const ExtractorConfig& cfg, std::size_t num_classes) {
    cfg.validate();
    if (num_classes < 2) throw std::invalid_argument("need at least 2 classes");
    ExtractorModel m;
    m.cfg = cfg;
    Rng rng(mix_seed(cfg.seed, 0xEB));
    int in_ch = 3;
    for (int out_ch : cfg.channels) {
        nn::Conv2d conv(in_ch, out_ch, 3, 1, 1);
        conv.init_params(rng);
        m.convs.push_back(std::move(conv));
        in_ch = out_ch;
    }
    m.embed_head = nn::Linear(in_ch, cfg.embed_dim);
    m.embed_head.init_params(rng);
    m.class_head = nn::Linear(cfg.embed_dim, static_cast<int>(num_classes));
    m.class_head.init_params(rng);
    return m;
}

void extractor_forward(const ExtractorModel& m, const Tensor& x, ExtractorTrace& tr,
                       bool with_logits) {
    const std::size_t blocks = m.convs.size();
    tr.input = x;
    tr.conv_cols.assign(blocks, Tensor({1}, 0.0));
    tr.conv_in_hw.assign(blocks, {0, 0});
    tr.conv_out.assign(blocks, Tensor({1}, 0.0));
    tr.pool_out.assign(blocks > 0 ? blocks - 1 : 0, Tensor({1}, 0.0));

    Tensor h = x;
    for (std::size_t i = 0; i < blocks; ++i) {
        tr.conv_in_hw[i] = {h.dim(1), h.dim(2)};
        tr.conv_out[i] = nn::relu(m.convs[i].forward(h, &tr.conv_cols[i]));
        if (i + 1 < blocks) {
            h = nn::avg_pool2(tr.conv_out[i]);
            tr.pool_out[i] = h;
        } else {
            h = tr.conv_out[i];
        }
    }
    tr.pooled = nn::global_avg_pool(h);
    tr.penult = m.embed_head.forward(tr.pooled);
    tr.embedding = nn::l2_normalize(tr.penult);
    if (with_logits) {
        tr.logits = m.class_head.forward(tr.penult);
    } else {
        tr.logits.clear();
    }
}

namespace {

/// Common tail: gradient on the unnormalized projection back to pixels.
Tensor backward_from_penult(const ExtractorModel& m, const ExtractorTrace& tr,
                            const std::vector<double>& g_penult, std::vector<Tensor>* grads,
                            std::size_t grad_offset) {
    const std::size_t blocks = m.convs.size();
    Tensor* gW_embed = nullptr;
    Tensor* gb_embed = nullptr;
    if (grads) {
        gW_embed = &(*grads)[grad_offset + 2 * blocks];
        gb_embed = &(*grads)[grad_offset + 2 * blocks + 1];
    }
    std::vector<double> g_pooled;
    {
        Tensor local_gW(m.embed_head.W.shape(), 0.0);
        Tensor local_gb(m.embed_head.b.shape(), 0.0);
        g_pooled = m.embed_head.backward(tr.pooled, g_penult, gW_embed ? *gW_embed : local_gW,
                                         gb_embed ? *gb_embed : local_gb);
    }

    const Tensor& last = tr.conv_out[blocks - 1];
    Tensor g = nn::global_avg_pool_backward(g_pooled, last.dim(0), last.dim(1), last.dim(2));
    for (std::size_t ri = blocks; ri-- > 0;) {
        if (ri + 1 < blocks) {
            g = nn::avg_pool2_backward(g, tr.conv_out[ri].dim(1), tr.conv_out[ri].dim(2));
        }
        g = nn::relu_backward(tr.conv_out[ri], g);
        Tensor local_gW(m.convs[ri].W.shape(), 0.0);
        Tensor local_gb(m.convs[ri].b.shape(), 0.0);
        Tensor* gW = grads ? &(*grads)[grad_offset + 2 * ri] : &local_gW;
        Tensor* gb = grads ? &(*grads)[grad_offset + 2 * ri + 1] : &local_gb;
        g = m.convs[ri].backward(tr.conv_cols[ri], tr.conv_in_hw[ri].first,
                                 tr.conv_in_hw[ri].second, g, *gW, *gb);
    }
    return g;
}

}  // namespace

Tensor extractor_backward_from_embedding(const ExtractorModel& m, const ExtractorTrace& tr,
                                         const std::vector<double>& g_embedding,
                                         std::vector<Tensor>* backbone_grads) {
    if (g_embedding.size() != tr.embedding.size()) {
        throw std::invalid_argument("embedding gradient dimension mismatch");
    }
    std::vector<double> g_penult = nn::l2_normalize_backward(tr.penult, g_embedding);
    return backward_from_penult(m, tr, g_penult, backbone_grads, 0);
}

Tensor extractor_backward_from_logits(const ExtractorModel& m, const ExtractorTrace& tr,
                                      const std::vector<double>& g_logits,
                                      std::vector<Tensor>* grads) {
    if (tr.logits.empty()) throw std::invalid_argument("trace has no logits");
    if (g_logits.size() != tr.logits.size()) {
        throw std::invalid_argument("logit gradient dimension mismatch");
    }
    const std::size_t backbone_count = 2 * m.convs.size() + 2;
    Tensor local_gW(m.class_head.W.shape(), 0.0);
    Tensor local_gb(m.class_head.b.shape(), 0.0);
    Tensor* gW = grads ? &(*grads)[backbone_count] : &local_gW;
    Tensor* gb = grads ? &(*grads)[backbone_count + 1] : &local_gb;
    std::vector<double> g_penult = m.class_head.backward(tr.penult, g_logits, *gW, *gb);
    return backward_from_penult(m, tr, g_penult, grads, 0);
}

EmbeddingVector embed(const ExtractorModel& m, const Image& x) {
    if (x.height() != static_cast<std::size_t>(m.cfg.image_size) ||
        x.width() != static_cast<std::size_t>(m.cfg.image_size)) {
        throw std::invalid_argument("image size does not match extractor config");
    }
    ExtractorTrace tr;
    extractor_forward(m, x.px, tr, false);
    return EmbeddingVector{tr.embedding};
}

Tensor embed_gradient(const ExtractorModel& m, const Image& x, const EmbeddingObjective& obj) {
    if (!obj.value || !obj.grad) throw std::invalid_argument("objective has empty callbacks");
    ExtractorTrace tr;
    extractor_forward(m, x.px, tr, false);
    std::vector<double> g = obj.grad(EmbeddingVector{tr.embedding});
    if (g.size() != tr.embedding.size()) {
        throw std::invalid_argument("objective gradient dimension mismatch");
    }
    return extractor_backward_from_embedding(m, tr, g, nullptr);
}

ExtractorModel train_extractor(const IdentityDataset& ds, const ExtractorConfig& cfg) {
    cfg.validate();
    ds.validate();
    if (static_cast<std::size_t>(cfg.image_size) != ds.image_size) {
        throw std::invalid_argument("extractor image_size does not match dataset");
    }
    std::vector<std::string> labels = ds.identities();
    if (labels.size() < 2) throw std::invalid_argument("need at least 2 identities to train");
    std::map<std::string, std::size_t> label_of;
    for (std::size_t i = 0; i < labels.size(); ++i) label_of[labels[i]] = i;

    ExtractorModel m = make_extractor(cfg, labels.size());
    m.labels = labels;
    m.dataset_fingerprint = ds.fingerprint();

    std::vector<std::size_t> order = ds.train_idx;
    nn::Adam opt(cfg.learning_rate);
    Rng shuffle_rng(mix_seed(cfg.seed, 0x5BF));
    nn::ParamRefs params = m.parameters();
    std::vector<Tensor> grads = nn::zero_grads_like(params);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(
                shuffle_rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
            std::swap(order[i - 1], order[j]);
        }
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(cfg.batch_size)) {
            std::size_t end =
                std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            for (auto& g : grads) g.fill(0.0);
            for (std::size_t k = start; k < end; ++k) {
                const auto& e = ds.entries[order[k]];
                ExtractorTrace tr;
                extractor_forward(m, e.image.px, tr, true);
                std::vector<double> g_logits;
                nn::softmax_cross_entropy(tr.logits, label_of.at(e.identity), &g_logits);
                extractor_backward_from_logits(m, tr, g_logits, &grads);
            }
            double inv = 1.0 / static_cast<double>(end - start);
            for (auto& g : grads) g *= inv;
            opt.step(params, grads);
        }
    }

    std::size_t correct = 0;
    for (std::size_t i : ds.train_idx) {
        ExtractorTrace tr;
        extractor_forward(m, ds.entries[i].image.px, tr, true);
        if (m.labels[nn::argmax(tr.logits)] == ds.entries[i].identity) ++correct;
    }
    m.final_train_accuracy =
        ds.train_idx.empty() ? 0.0 : static_cast<double>(correct) / ds.train_idx.size();
    return m;
}

}  // namespace decloak
