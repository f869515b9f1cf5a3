// Copyright (c) 2026 decloak contributors
// SPDX-License-Identifier: Apache-2.0

#include "decloak/purifier_training.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "decloak/rng.hpp"

namespace decloak {

void PurifierTrainConfig::validate() const {
    if (!(alpha >= 0.0)) throw std::invalid_argument("alpha must be >= 0");
    if (!(lambda >= 0.0)) throw std::invalid_argument("lambda must be >= 0");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be positive");
    if (epochs < 0) throw std::invalid_argument("epochs must be >= 0");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    purifier.validate();
}

Image amplify(const PurifierTrainPair& pair, double alpha) {
    if (!pair.cloak.delta.same_shape(pair.natural.px)) {
        throw std::invalid_argument("cloak shape does not match image");
    }
    return clip_unit(Image(add_scaled(pair.natural.px, alpha, pair.cloak.delta)));
}

PurifierLossTerms combined_loss_terms(const Tensor& purified_raw, const Image& natural,
                                      const ExtractorModel& fx) {
    PurifierLossTerms terms;
    terms.image_loss = mse(purified_raw, natural.px);
    ExtractorTrace tr;
    extractor_forward(fx, purified_raw, tr, false);
    terms.feature_loss = mae(EmbeddingVector(tr.embedding), embed(fx, natural));
    return terms;
}

namespace {

double sgn(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

/// Loss terms plus gradient wrt the raw purifier output for a single pair.
PurifierLossTerms loss_terms_and_grad(const Tensor& out, const Image& natural,
                                      const ExtractorModel& fx, double lambda, Tensor& g_out) {
    PurifierLossTerms terms;
    const double inv_n = 1.0 / static_cast<double>(out.size());
    g_out = Tensor(out.shape(), 0.0);
    for (std::size_t i = 0; i < out.size(); ++i) {
        double d = out[i] - natural.px[i];
        terms.image_loss += d * d * inv_n;
        g_out[i] = 2.0 * d * inv_n;
    }

    ExtractorTrace tr;
    extractor_forward(fx, out, tr, false);
    std::vector<double> ref = embed(fx, natural).v;
    std::vector<double> g_emb(ref.size(), 0.0);
    const double inv_d = 1.0 / static_cast<double>(ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) {
        double d = tr.embedding[i] - ref[i];
        terms.feature_loss += std::abs(d) * inv_d;
        g_emb[i] = lambda * sgn(d) * inv_d;
    }
    if (lambda != 0.0) {
        Tensor g_feat = extractor_backward_from_embedding(fx, tr, g_emb, nullptr);
        g_out.axpy(1.0, g_feat);
    }
    return terms;
}

}  // namespace

double combined_loss(const PurifierModel& m, const ExtractorModel& fx,
                     const std::vector<PurifierTrainPair>& batch, double alpha, double lambda,
                     std::vector<Tensor>* param_grads, PurifierLossTerms* terms_out) {
    if (batch.empty()) throw std::invalid_argument("batch must be non-empty");
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    PurifierLossTerms mean;
    std::vector<Tensor> local;
    for (const auto& pair : batch) {
        Image amp = amplify(pair, alpha);
        PurifierTrace tr;
        Tensor out = purifier_forward_raw(m, amp.px, &tr);
        Tensor g_out;
        PurifierLossTerms terms = loss_terms_and_grad(out, pair.natural, fx, lambda, g_out);
        mean.image_loss += terms.image_loss * inv_b;
        mean.feature_loss += terms.feature_loss * inv_b;
        if (param_grads) {
            g_out *= inv_b;
            purifier_backward(m, tr, g_out, *param_grads);
        }
    }
    if (terms_out) *terms_out = mean;
    return mean.total(lambda);
}

PurifierModel train_purifier(const std::vector<PurifierTrainPair>& pairs,
                             const ExtractorModel& fx, const PurifierTrainConfig& cfg) {
    cfg.validate();
    if (pairs.empty()) throw std::invalid_argument("no training pairs");
    for (const auto& p : pairs) {
        if (p.natural.height() != static_cast<std::size_t>(cfg.purifier.image_size)) {
            throw std::invalid_argument("pair size does not match purifier config");
        }
    }

    PurifierConfig arch = cfg.purifier;
    arch.seed = mix_seed(cfg.seed, 0xA11);
    PurifierModel m = build_purifier(arch);
    nn::Adam opt(cfg.learning_rate);
    nn::ParamRefs params = m.parameters();
    std::vector<Tensor> grads = nn::zero_grads_like(params);

    std::vector<std::size_t> order(pairs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle_rng(mix_seed(cfg.seed, 0x5F));

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(
                shuffle_rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
            std::swap(order[i - 1], order[j]);
        }
        PurifierTrainRecord rec;
        rec.epoch = epoch;
        double weight_sum = 0.0;
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(cfg.batch_size)) {
            std::size_t end =
                std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            std::vector<PurifierTrainPair> batch;
            batch.reserve(end - start);
            for (std::size_t k = start; k < end; ++k) batch.push_back(pairs[order[k]]);
            for (auto& g : grads) g.fill(0.0);
            PurifierLossTerms terms;
            combined_loss(m, fx, batch, cfg.alpha, cfg.lambda, &grads, &terms);
            opt.step(params, grads);
            double w = static_cast<double>(end - start);
            rec.image_loss += terms.image_loss * w;
            rec.feature_loss += terms.feature_loss * w;
            weight_sum += w;
        }
        rec.image_loss /= weight_sum;
        rec.feature_loss /= weight_sum;
        rec.total_loss = rec.image_loss + cfg.lambda * rec.feature_loss;
        m.train_log.push_back(rec);
    }
    return m;
}

std::vector<PurifierTrainPair> make_fawkes_pairs(const IdentityDataset& ds,
                                                 const ExtractorModel& surrogate,
                                                 const AttackConfig& attack,
                                                 std::size_t max_pairs, std::uint64_t seed) {
    attack.validate();
    ds.validate();
    std::vector<std::size_t> order = ds.train_idx;
    Rng rng(mix_seed(seed, 0x9A1));
    for (std::size_t i = order.size(); i > 1; --i) {
        std::size_t j =
            static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
        std::swap(order[i - 1], order[j]);
    }
    if (max_pairs > 0 && order.size() > max_pairs) order.resize(max_pairs);

    std::vector<PurifierTrainPair> pairs;
    pairs.reserve(order.size());
    for (std::size_t k = 0; k < order.size(); ++k) {
        std::size_t i = order[k];
        const auto& e = ds.entries[i];
        std::vector<std::size_t> others;
        for (std::size_t t : ds.train_idx) {
            if (ds.entries[t].identity != e.identity) others.push_back(t);
        }
        if (others.empty()) throw std::invalid_argument("need train images from >= 2 identities");
        Rng pick = rng.fork(k);
        std::size_t t = others[static_cast<std::size_t>(
            pick.uniform_int(0, static_cast<std::int64_t>(others.size()) - 1))];
        AttackConfig per_image = attack;
        per_image.seed = mix_seed(seed, k);
        Cloak c = fawkes_cloak(e.image, ds.entries[t].image, surrogate, per_image);
        pairs.push_back(PurifierTrainPair{e.image, std::move(c), e.identity});
    }
    return pairs;
}

}  // namespace decloak
