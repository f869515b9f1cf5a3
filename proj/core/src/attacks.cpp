// Copyright (c) 2026 decloak contributors
// SPDX-License-Identifier: Apache-2.0

#include "decloak/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "decloak/rng.hpp"

namespace decloak {

void AttackConfig::validate() const {
    if (!(epsilon > 0.0 && epsilon <= 1.0)) {
        throw std::invalid_argument("epsilon must be in (0, 1]");
    }
    if (steps < 0) throw std::invalid_argument("steps must be >= 0");
    if (!(effective_step() > 0.0)) throw std::invalid_argument("step size must be positive");
}

namespace {

std::vector<double> blur_kernel(double sigma) {
    std::vector<double> w(5);
    double sum = 0.0;
    for (int i = -2; i <= 2; ++i) {
        w[i + 2] = std::exp(-(i * i) / (2.0 * sigma * sigma));
        sum += w[i + 2];
    }
    for (auto& v : w) v /= sum;
    return w;
}

std::size_t reflect(std::ptrdiff_t i, std::size_t n) {
    auto sn = static_cast<std::ptrdiff_t>(n);
    while (i < 0 || i >= sn) {
        if (i < 0) i = -1 - i;
        if (i >= sn) i = 2 * sn - 1 - i;
    }
    return static_cast<std::size_t>(i);
}

/// One separable pass along rows (horizontal = true) or columns.
Tensor blur_pass(const Tensor& x, const std::vector<double>& w, bool horizontal) {
    Tensor y(x.shape(), 0.0);
    const std::size_t c_n = x.dim(0), h = x.dim(1), wd = x.dim(2);
    for (std::size_t c = 0; c < c_n; ++c) {
        for (std::size_t yy = 0; yy < h; ++yy) {
            for (std::size_t xx = 0; xx < wd; ++xx) {
                double acc = 0.0;
                for (int t = -2; t <= 2; ++t) {
                    std::size_t sy = yy, sx = xx;
                    if (horizontal) {
                        sx = reflect(static_cast<std::ptrdiff_t>(xx) + t, wd);
                    } else {
                        sy = reflect(static_cast<std::ptrdiff_t>(yy) + t, h);
                    }
                    acc += w[t + 2] * x.at(c, sy, sx);
                }
                y.at(c, yy, xx) = acc;
            }
        }
    }
    return y;
}

/// Adjoint of blur_pass: scatter instead of gather.
Tensor blur_pass_adjoint(const Tensor& gy, const std::vector<double>& w, bool horizontal) {
    Tensor gx(gy.shape(), 0.0);
    const std::size_t c_n = gy.dim(0), h = gy.dim(1), wd = gy.dim(2);
    for (std::size_t c = 0; c < c_n; ++c) {
        for (std::size_t yy = 0; yy < h; ++yy) {
            for (std::size_t xx = 0; xx < wd; ++xx) {
                double g = gy.at(c, yy, xx);
                for (int t = -2; t <= 2; ++t) {
                    std::size_t sy = yy, sx = xx;
                    if (horizontal) {
                        sx = reflect(static_cast<std::ptrdiff_t>(xx) + t, wd);
                    } else {
                        sy = reflect(static_cast<std::ptrdiff_t>(yy) + t, h);
                    }
                    gx.at(c, sy, sx) += w[t + 2] * g;
                }
            }
        }
    }
    return gx;
}

double sgn(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

}  // namespace

Tensor gaussian_blur(const Tensor& x, double sigma) {
    if (x.rank() != 3) throw std::invalid_argument("blur expects a {C,H,W} tensor");
    if (sigma <= 0.0) return x;
    auto w = blur_kernel(sigma);
    return blur_pass(blur_pass(x, w, true), w, false);
}

Image gaussian_blur(const Image& x, double sigma) {
    return Image(gaussian_blur(x.px, sigma));
}

Tensor gaussian_blur_adjoint(const Tensor& gy, double sigma) {
    if (gy.rank() != 3) throw std::invalid_argument("blur expects a {C,H,W} tensor");
    if (sigma <= 0.0) return gy;
    auto w = blur_kernel(sigma);
    return blur_pass_adjoint(blur_pass_adjoint(gy, w, false), w, true);
}

namespace {

/// mae objective against a fixed reference embedding; grad is wrt the query.
double mae_and_grad(const std::vector<double>& q, const std::vector<double>& ref,
                    std::vector<double>& g) {
    const double inv = 1.0 / static_cast<double>(q.size());
    double loss = 0.0;
    g.assign(q.size(), 0.0);
    for (std::size_t i = 0; i < q.size(); ++i) {
        loss += std::abs(q[i] - ref[i]) * inv;
        g[i] = sgn(q[i] - ref[i]) * inv;
    }
    return loss;
}

}  // namespace

Cloak fawkes_cloak(const Image& x, const Image& target, const ExtractorModel& model,
                   const AttackConfig& cfg) {
    cfg.validate();
    x.validate();
    target.validate();
    const std::vector<double> ref = embed(model, target).v;
    const double step = cfg.effective_step();

    Tensor c(x.px.shape(), 0.0);
    Tensor best_c = c;
    double best_loss = 0.0;
    std::vector<double> g_emb;
    for (int it = 0; it <= cfg.steps; ++it) {
        Tensor u = clip_unit(add_scaled(x.px, 1.0, c));
        ExtractorTrace tr;
        extractor_forward(model, u, tr, false);
        double loss = mae_and_grad(tr.embedding, ref, g_emb);
        if (it == 0 || loss < best_loss) {
            best_loss = loss;
            best_c = c;
        }
        if (it == cfg.steps) break;
        Tensor gu = extractor_backward_from_embedding(model, tr, g_emb, nullptr);
        // Chain through the clip: pixels pinned at the boundary pass nothing.
        for (std::size_t i = 0; i < c.size(); ++i) {
            double v = x.px[i] + c[i];
            double gc = (v > 0.0 && v < 1.0) ? gu[i] : 0.0;
            c[i] = std::clamp(c[i] - step * sgn(gc), -cfg.epsilon, cfg.epsilon);
        }
    }
    return Cloak(best_c);
}

Cloak lowkey_cloak(const Image& x, const std::vector<const ExtractorModel*>& ensemble,
                   const AttackConfig& cfg) {
    cfg.validate();
    x.validate();
    if (ensemble.empty()) throw std::invalid_argument("ensemble must be non-empty");
    for (const auto* m : ensemble) {
        if (!m) throw std::invalid_argument("ensemble contains a null model");
    }
    std::vector<std::vector<double>> refs;
    refs.reserve(ensemble.size());
    for (const auto* m : ensemble) refs.push_back(embed(*m, x).v);

    const double step = cfg.effective_step();
    const double inv_m = 1.0 / static_cast<double>(ensemble.size());
    Tensor c(x.px.shape(), 0.0);
    Tensor best_c = c;
    double best_obj = 0.0;
    std::vector<double> g_emb;

    for (int it = 0; it <= cfg.steps; ++it) {
        Tensor u = add_scaled(x.px, 1.0, c);
        Tensor ub = gaussian_blur(u, cfg.blur_sigma);
        double obj = 0.0;
        Tensor gu(u.shape(), 0.0);
        for (std::size_t mi = 0; mi < ensemble.size(); ++mi) {
            ExtractorTrace tr;
            extractor_forward(*ensemble[mi], u, tr, false);
            obj += inv_m * mae_and_grad(tr.embedding, refs[mi], g_emb);
            for (auto& gv : g_emb) gv *= inv_m;
            gu.axpy(1.0, extractor_backward_from_embedding(*ensemble[mi], tr, g_emb, nullptr));

            ExtractorTrace trb;
            extractor_forward(*ensemble[mi], ub, trb, false);
            obj += inv_m * mae_and_grad(trb.embedding, refs[mi], g_emb);
            for (auto& gv : g_emb) gv *= inv_m;
            Tensor gub = extractor_backward_from_embedding(*ensemble[mi], trb, g_emb, nullptr);
            gu.axpy(1.0, gaussian_blur_adjoint(gub, cfg.blur_sigma));
        }
        if (it == 0 || obj > best_obj) {
            best_obj = obj;
            best_c = c;
        }
        if (it == cfg.steps) break;
        for (std::size_t i = 0; i < c.size(); ++i) {
            c[i] = std::clamp(c[i] + step * sgn(gu[i]), -cfg.epsilon, cfg.epsilon);
        }
    }
    return Cloak(best_c);
}

IdentityDataset cloak_identity(const IdentityDataset& ds, const std::string& attacker,
                               AttackKind kind,
                               const std::vector<const ExtractorModel*>& models,
                               const AttackConfig& cfg) {
    cfg.validate();
    if (models.empty()) throw std::invalid_argument("need at least one surrogate model");
    if (!ds.has_identity(attacker)) {
        throw std::invalid_argument("attacker identity '" + attacker + "' not in dataset");
    }
    IdentityDataset out = ds;
    Rng rng(cfg.seed);

    std::vector<std::size_t> other_train;
    for (std::size_t i : ds.train_idx) {
        if (ds.entries[i].identity != attacker) other_train.push_back(i);
    }
    if (kind == AttackKind::fawkes && other_train.empty()) {
        throw std::invalid_argument("fawkes needs train images from another identity");
    }

    std::size_t k = 0;
    for (std::size_t i : ds.train_idx) {
        if (ds.entries[i].identity != attacker) continue;
        const Image& x = ds.entries[i].image;
        Cloak c;
        if (kind == AttackKind::fawkes) {
            Rng pick = rng.fork(k);
            std::size_t t = other_train[static_cast<std::size_t>(
                pick.uniform_int(0, static_cast<std::int64_t>(other_train.size()) - 1))];
            c = fawkes_cloak(x, ds.entries[t].image, *models[0], cfg);
        } else {
            c = lowkey_cloak(x, models, cfg);
        }
        out.entries[i].image = clip_unit(Image(add_scaled(x.px, 1.0, c.delta)));
        ++k;
    }
    return out;
}

}  // namespace decloak
