// Copyright (c) 2026 decloak contributors
// SPDX-License-Identifier: Apache-2.0

#include "decloak/recognition.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include "decloak/rng.hpp"

namespace decloak {

std::string to_string(RecognitionKind v) {
    switch (v) {
        case RecognitionKind::one_nn: return "1nn";
        case RecognitionKind::linear: return "linear";
        case RecognitionKind::finetune: return "finetune";
    }
    throw std::invalid_argument("bad recognition kind");
}

RecognitionKind recognition_from_string(const std::string& s) {
    if (s == "1nn") return RecognitionKind::one_nn;
    if (s == "linear") return RecognitionKind::linear;
    if (s == "finetune") return RecognitionKind::finetune;
    throw std::invalid_argument("unknown recognition kind: " + s);
}

void RecognitionTrainConfig::validate() const {
    if (epochs < 0) throw std::invalid_argument("epochs must be >= 0");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be positive");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
}

namespace {

std::map<std::string, std::size_t> label_index(const std::vector<std::string>& labels) {
    std::map<std::string, std::size_t> out;
    for (std::size_t i = 0; i < labels.size(); ++i) out[labels[i]] = i;
    return out;
}

}  // namespace

RecognitionModel train_1nn(const ExtractorModel& extractor, const IdentityDataset& ds) {
    ds.validate();
    RecognitionModel m;
    m.kind = RecognitionKind::one_nn;
    m.backbone = extractor;
    m.labels = ds.identities();
    for (std::size_t i : ds.train_idx) {
        m.ref_embeddings.push_back(embed(extractor, ds.entries[i].image).v);
        m.ref_labels.push_back(ds.entries[i].identity);
    }
    return m;
}

RecognitionModel train_linear(const ExtractorModel& extractor, const IdentityDataset& ds,
                              const RecognitionTrainConfig& cfg) {
    cfg.validate();
    ds.validate();
    if (ds.identities().size() < 2) {
        throw std::invalid_argument("classifier head needs >= 2 identities");
    }
    RecognitionModel m;
    m.kind = RecognitionKind::linear;
    m.backbone = extractor;
    m.labels = ds.identities();
    auto index = label_index(m.labels);

    m.head = nn::Linear(extractor.cfg.embed_dim, static_cast<int>(m.labels.size()));
    Rng init_rng(mix_seed(cfg.seed, 0x11EAD));
    m.head.init_params(init_rng);

    // Frozen backbone: embeddings are computed once.
    std::vector<std::vector<double>> feats;
    std::vector<std::size_t> targets;
    for (std::size_t i : ds.train_idx) {
        feats.push_back(embed(extractor, ds.entries[i].image).v);
        targets.push_back(index.at(ds.entries[i].identity));
    }

    nn::ParamRefs params = {&m.head.W, &m.head.b};
    std::vector<Tensor> grads = nn::zero_grads_like(params);
    nn::Adam opt(cfg.learning_rate);
    Rng shuffle_rng(mix_seed(cfg.seed, 0x57));
    std::vector<std::size_t> order(feats.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

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
                const auto& x = feats[order[k]];
                std::vector<double> logits = m.head.forward(x);
                std::vector<double> g_logits;
                nn::softmax_cross_entropy(logits, targets[order[k]], &g_logits);
                m.head.backward(x, g_logits, grads[0], grads[1]);
            }
            double inv = 1.0 / static_cast<double>(end - start);
            for (auto& g : grads) g *= inv;
            opt.step(params, grads);
        }
    }
    return m;
}

RecognitionModel train_finetune(const ExtractorModel& extractor, const IdentityDataset& ds,
                                const RecognitionTrainConfig& cfg) {
    cfg.validate();
    ds.validate();
    if (ds.identities().size() < 2) {
        throw std::invalid_argument("classifier head needs >= 2 identities");
    }
    RecognitionModel m;
    m.kind = RecognitionKind::finetune;
    m.backbone = extractor;
    m.labels = ds.identities();
    auto index = label_index(m.labels);

    m.head = nn::Linear(extractor.cfg.embed_dim, static_cast<int>(m.labels.size()));
    Rng init_rng(mix_seed(cfg.seed, 0xF1EAD));
    m.head.init_params(init_rng);

    // grads holds the backbone slots first, then the head; the embedding
    // backward pass only touches the leading backbone entries.
    nn::ParamRefs params = m.backbone.backbone_parameters();
    const std::size_t backbone_count = params.size();
    params.push_back(&m.head.W);
    params.push_back(&m.head.b);
    std::vector<Tensor> grads = nn::zero_grads_like(params);
    nn::Adam opt(cfg.learning_rate);
    Rng shuffle_rng(mix_seed(cfg.seed, 0x58));
    std::vector<std::size_t> order = ds.train_idx;

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
                extractor_forward(m.backbone, e.image.px, tr, false);
                std::vector<double> logits = m.head.forward(tr.embedding);
                std::vector<double> g_logits;
                nn::softmax_cross_entropy(logits, index.at(e.identity), &g_logits);
                std::vector<double> g_emb = m.head.backward(
                    tr.embedding, g_logits, grads[backbone_count], grads[backbone_count + 1]);
                extractor_backward_from_embedding(m.backbone, tr, g_emb, &grads);
            }
            double inv = 1.0 / static_cast<double>(end - start);
            for (auto& g : grads) g *= inv;
            opt.step(params, grads);
        }
    }
    return m;
}

std::string predict(const RecognitionModel& m, const Image& x) {
    EmbeddingVector q = embed(m.backbone, x);
    if (m.kind == RecognitionKind::one_nn) {
        if (m.ref_embeddings.empty()) throw std::invalid_argument("1nn model has no references");
        double best = 0.0;
        const std::string* best_label = nullptr;
        for (std::size_t i = 0; i < m.ref_embeddings.size(); ++i) {
            const auto& r = m.ref_embeddings[i];
            double d2 = 0.0;
            for (std::size_t k = 0; k < r.size(); ++k) {
                double d = q.v[k] - r[k];
                d2 += d * d;
            }
            if (!best_label || d2 < best ||
                (d2 == best && m.ref_labels[i] < *best_label)) {
                best = d2;
                best_label = &m.ref_labels[i];
            }
        }
        return *best_label;
    }
    if (m.head.out_dim == 0) throw std::invalid_argument("model has no trained head");
    std::vector<double> logits = m.head.forward(q.v);
    std::size_t best = 0;
    for (std::size_t i = 1; i < logits.size(); ++i) {
        if (logits[i] > logits[best]) best = i;  // ties keep the smaller index
    }
    return m.labels[best];
}

}  // namespace decloak
