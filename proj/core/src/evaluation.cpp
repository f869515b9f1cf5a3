// Copyright (c) 2026 decloak contributors
// SPDX-License-Identifier: Apache-2.0

#include "decloak/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include <Eigen/Dense>
#include <json.hpp>

#include "decloak/rng.hpp"

namespace decloak {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::string to_string(AttackName v) {
    switch (v) {
        case AttackName::none: return "none";
        case AttackName::fawkes: return "fawkes";
        case AttackName::lowkey: return "lowkey";
    }
    throw std::invalid_argument("bad attack name");
}

std::string to_string(DefenseName v) {
    switch (v) {
        case DefenseName::none: return "none";
        case DefenseName::purifier: return "purifier";
        case DefenseName::magnet: return "magnet";
        case DefenseName::deflect: return "deflect";
    }
    throw std::invalid_argument("bad defense name");
}

AttackName attack_from_string(const std::string& s) {
    if (s == "none") return AttackName::none;
    if (s == "fawkes") return AttackName::fawkes;
    if (s == "lowkey") return AttackName::lowkey;
    throw std::invalid_argument("unknown attack: " + s);
}

DefenseName defense_from_string(const std::string& s) {
    if (s == "none") return DefenseName::none;
    if (s == "purifier") return DefenseName::purifier;
    if (s == "magnet") return DefenseName::magnet;
    if (s == "deflect") return DefenseName::deflect;
    throw std::invalid_argument("unknown defense: " + s);
}

double attack_success_rate(const RecognitionModel& m, const std::string& attacker,
                           const IdentityDataset& natural) {
    auto tests = natural.test_of(attacker);
    if (tests.empty()) throw std::invalid_argument("attacker has no test images");
    std::size_t evaded = 0;
    for (std::size_t i : tests) {
        if (predict(m, natural.entries[i].image) != attacker) ++evaded;
    }
    return static_cast<double>(evaded) / static_cast<double>(tests.size());
}

double normal_accuracy(const RecognitionModel& m, const std::string& attacker,
                       const IdentityDataset& natural) {
    std::size_t total = 0, correct = 0;
    for (std::size_t i : natural.test_idx) {
        const auto& e = natural.entries[i];
        if (e.identity == attacker) continue;
        ++total;
        if (predict(m, e.image) == e.identity) ++correct;
    }
    if (total == 0) throw std::invalid_argument("no non-attacker test images");
    return static_cast<double>(correct) / static_cast<double>(total);
}

void EvaluationContext::validate() const {
    if (!dataset) throw std::invalid_argument("context has no dataset");
    if (!recognizer) throw std::invalid_argument("context has no recognition extractor");
    dataset->validate();
    attack.validate();
    recognition.validate();
    if (deflect_count < 0) throw std::invalid_argument("deflect_count must be >= 0");
    if (deflect_window < 1) throw std::invalid_argument("deflect_window must be >= 1");
    if (!(deflect_sigma >= 0.0)) throw std::invalid_argument("deflect_sigma must be >= 0");
}

namespace {

IdentityDataset apply_defense(const EvaluationContext& ctx, DefenseName defense,
                              const IdentityDataset& ds, std::uint64_t seed) {
    switch (defense) {
        case DefenseName::none:
            return ds;
        case DefenseName::purifier:
            if (!ctx.purifier) throw std::invalid_argument("context has no purifier");
            return purify_dataset(*ctx.purifier, ds);
        case DefenseName::magnet:
            if (!ctx.magnet) throw std::invalid_argument("context has no magnet reformer");
            return purify_dataset(*ctx.magnet, ds);
        case DefenseName::deflect: {
            IdentityDataset out = ds;
            std::uint64_t base = mix_seed(seed, 0xDEF);
            for (std::size_t i : out.train_idx) {
                Image d = pixel_deflection(out.entries[i].image, ctx.deflect_count,
                                           ctx.deflect_window, mix_seed(base, i));
                out.entries[i].image = wavelet_denoise(d, ctx.deflect_sigma);
            }
            return out;
        }
    }
    throw std::invalid_argument("bad defense name");
}

RecognitionModel train_recognizer(const EvaluationContext& ctx, RecognitionKind kind,
                                  const IdentityDataset& ds, std::uint64_t seed) {
    RecognitionTrainConfig cfg = ctx.recognition;
    cfg.seed = seed;
    switch (kind) {
        case RecognitionKind::one_nn: return train_1nn(*ctx.recognizer, ds);
        case RecognitionKind::linear: return train_linear(*ctx.recognizer, ds, cfg);
        case RecognitionKind::finetune: return train_finetune(*ctx.recognizer, ds, cfg);
    }
    throw std::invalid_argument("bad recognition kind");
}

DistortionReport measure_distortion(const EvaluationContext& ctx, const std::string& attacker,
                                    const IdentityDataset& defended) {
    const IdentityDataset& nat = *ctx.dataset;
    DistortionReport rep;
    std::size_t n_nat = 0, n_clk = 0;
    for (std::size_t i : nat.train_idx) {
        const Image& orig = nat.entries[i].image;
        const Image& def = defended.entries[i].image;
        double img_d = mse(def, orig);
        double feat_d = mae(embed(*ctx.recognizer, def), embed(*ctx.recognizer, orig));
        if (nat.entries[i].identity == attacker) {
            rep.image_distortion_cloaked += img_d;
            rep.feature_loss_cloaked += feat_d;
            ++n_clk;
        } else {
            rep.image_distortion_natural += img_d;
            rep.feature_loss_natural += feat_d;
            ++n_nat;
        }
    }
    if (n_clk > 0) {
        rep.image_distortion_cloaked /= static_cast<double>(n_clk);
        rep.feature_loss_cloaked /= static_cast<double>(n_clk);
    }
    if (n_nat > 0) {
        rep.image_distortion_natural /= static_cast<double>(n_nat);
        rep.feature_loss_natural /= static_cast<double>(n_nat);
    }
    return rep;
}

std::vector<std::string> pick_attackers(const IdentityDataset& ds, int num_attackers,
                                        std::uint64_t seed) {
    std::vector<std::string> ids = ds.identities();
    if (num_attackers < 1 || static_cast<std::size_t>(num_attackers) > ids.size()) {
        throw std::invalid_argument("num_attackers out of range");
    }
    Rng rng(mix_seed(seed, 0xA77));
    for (std::size_t i = ids.size(); i > 1; --i) {
        std::size_t j =
            static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
        std::swap(ids[i - 1], ids[j]);
    }
    ids.resize(static_cast<std::size_t>(num_attackers));
    return ids;
}

}  // namespace

std::vector<ExperimentReport> run_experiment_suite(const EvaluationContext& ctx,
                                                   AttackName attack,
                                                   const std::vector<DefenseName>& defenses,
                                                   RecognitionKind model, int num_attackers,
                                                   std::uint64_t seed) {
    ctx.validate();
    if (defenses.empty()) throw std::invalid_argument("no defenses requested");
    std::vector<const ExtractorModel*> attack_models = ctx.attack_models;
    if (attack_models.empty()) attack_models.push_back(ctx.recognizer);

    std::vector<std::string> attackers = pick_attackers(*ctx.dataset, num_attackers, seed);

    std::vector<ExperimentReport> reports(defenses.size());
    for (std::size_t d = 0; d < defenses.size(); ++d) {
        auto& r = reports[d];
        r.attack = to_string(attack);
        r.defense = to_string(defenses[d]);
        r.model = to_string(model);
        r.num_attackers = num_attackers;
        r.seed = seed;
        r.attacker_ids = attackers;
    }

    for (std::size_t ai = 0; ai < attackers.size(); ++ai) {
        const std::string& attacker = attackers[ai];
        IdentityDataset cloaked = *ctx.dataset;
        if (attack != AttackName::none) {
            AttackConfig atk = ctx.attack;
            atk.seed = mix_seed(seed, 1000 + ai);
            cloaked = cloak_identity(*ctx.dataset, attacker,
                                     attack == AttackName::fawkes ? AttackKind::fawkes
                                                                  : AttackKind::lowkey,
                                     attack_models, atk);
        }
        for (std::size_t d = 0; d < defenses.size(); ++d) {
            std::uint64_t cell_seed =
                mix_seed(seed, 4000 + 16 * ai + static_cast<std::uint64_t>(defenses[d]));
            IdentityDataset defended = apply_defense(ctx, defenses[d], cloaked, cell_seed);
            RecognitionModel rec =
                train_recognizer(ctx, model, defended, mix_seed(seed, 2000 + ai));
            double success = attack_success_rate(rec, attacker, *ctx.dataset);
            double normal = normal_accuracy(rec, attacker, *ctx.dataset);
            DistortionReport dist = measure_distortion(ctx, attacker, defended);

            auto& r = reports[d];
            double inv = 1.0 / static_cast<double>(attackers.size());
            r.attack_success_rate += success * inv;
            r.normal_accuracy += normal * inv;
            r.per_attacker_success.push_back(success);
            r.distortion.image_distortion_natural += dist.image_distortion_natural * inv;
            r.distortion.image_distortion_cloaked += dist.image_distortion_cloaked * inv;
            r.distortion.feature_loss_natural += dist.feature_loss_natural * inv;
            r.distortion.feature_loss_cloaked += dist.feature_loss_cloaked * inv;
        }
    }
    return reports;
}

ExperimentReport run_experiment(const EvaluationContext& ctx, AttackName attack,
                                DefenseName defense, RecognitionKind model, int num_attackers,
                                std::uint64_t seed) {
    return run_experiment_suite(ctx, attack, {defense}, model, num_attackers, seed).front();
}

std::vector<AlphaSweepPoint> alpha_sweep(const EvaluationContext& ctx,
                                         const std::vector<double>& alphas,
                                         const std::vector<PurifierTrainPair>& pairs,
                                         const ExtractorModel& fx,
                                         const PurifierTrainConfig& base, AttackName attack,
                                         RecognitionKind model, int num_attackers,
                                         std::uint64_t seed) {
    if (alphas.empty()) throw std::invalid_argument("no alphas requested");
    std::vector<AlphaSweepPoint> out;
    for (double alpha : alphas) {
        PurifierTrainConfig cfg = base;
        cfg.alpha = alpha;
        PurifierModel purifier = train_purifier(pairs, fx, cfg);
        EvaluationContext local = ctx;
        local.purifier = &purifier;
        AlphaSweepPoint pt;
        pt.alpha = alpha;
        pt.report = run_experiment(local, attack, DefenseName::purifier, model, num_attackers,
                                   seed);
        out.push_back(std::move(pt));
    }
    return out;
}

PcaProjection pca_diagnostic(const ExtractorModel& extractor, const IdentityDataset& natural,
                             const IdentityDataset* cloaked,
                             const std::vector<std::string>& identities) {
    std::vector<std::string> ids = identities.empty() ? natural.identities() : identities;
    for (const auto& id : ids) {
        if (!natural.has_identity(id)) {
            throw std::invalid_argument("identity '" + id + "' not in dataset");
        }
    }
    if (cloaked && cloaked->entries.size() != natural.entries.size()) {
        throw std::invalid_argument("cloaked dataset does not match natural dataset");
    }

    std::vector<PcaPoint> meta;
    std::vector<std::vector<double>> rows;
    for (const auto& id : ids) {
        for (std::size_t i : natural.train_of(id)) {
            rows.push_back(embed(extractor, natural.entries[i].image).v);
            meta.push_back(PcaPoint{0, 0, id, "train_natural"});
            if (cloaked) {
                rows.push_back(embed(extractor, cloaked->entries[i].image).v);
                meta.push_back(PcaPoint{0, 0, id, "train_cloaked"});
            }
        }
        for (std::size_t i : natural.test_of(id)) {
            rows.push_back(embed(extractor, natural.entries[i].image).v);
            meta.push_back(PcaPoint{0, 0, id, "test_natural"});
        }
    }
    std::vector<std::string> distinct = ids;
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    if (distinct.size() < 2) throw std::invalid_argument("need at least 2 identities");
    if (rows.size() < 3) throw std::invalid_argument("need at least 3 points");

    const auto n = static_cast<Eigen::Index>(rows.size());
    const auto dim = static_cast<Eigen::Index>(rows.front().size());
    Eigen::MatrixXd x(n, dim);
    for (Eigen::Index r = 0; r < n; ++r) {
        for (Eigen::Index c = 0; c < dim; ++c) {
            x(r, c) = rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
        }
    }
    Eigen::RowVectorXd mean = x.colwise().mean();
    x.rowwise() -= mean;
    Eigen::MatrixXd cov = (x.transpose() * x) / static_cast<double>(n - 1);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
    if (solver.info() != Eigen::Success) throw std::runtime_error("eigendecomposition failed");

    PcaProjection proj;
    Eigen::MatrixXd components(dim, 2);
    for (int k = 0; k < 2; ++k) {
        Eigen::Index col = dim - 1 - k;  // eigenvalues come back ascending
        Eigen::VectorXd v = solver.eigenvectors().col(col);
        for (Eigen::Index i = 0; i < dim; ++i) {
            if (std::abs(v(i)) > 1e-12) {
                if (v(i) < 0.0) v = -v;
                break;
            }
        }
        components.col(k) = v;
        proj.component_variance[static_cast<std::size_t>(k)] = solver.eigenvalues()(col);
    }
    Eigen::MatrixXd scores = x * components;
    proj.points = std::move(meta);
    for (Eigen::Index r = 0; r < n; ++r) {
        proj.points[static_cast<std::size_t>(r)].x = scores(r, 0);
        proj.points[static_cast<std::size_t>(r)].y = scores(r, 1);
    }
    return proj;
}

namespace {

json report_to_json(const ExperimentReport& r) {
    return json{{"attack", r.attack},
                {"defense", r.defense},
                {"model", r.model},
                {"num_attackers", r.num_attackers},
                {"seed", r.seed},
                {"attack_success_rate", r.attack_success_rate},
                {"normal_accuracy", r.normal_accuracy},
                {"image_distortion_natural", r.distortion.image_distortion_natural},
                {"image_distortion_cloaked", r.distortion.image_distortion_cloaked},
                {"feature_loss_natural", r.distortion.feature_loss_natural},
                {"feature_loss_cloaked", r.distortion.feature_loss_cloaked},
                {"attacker_ids", r.attacker_ids},
                {"per_attacker_success", r.per_attacker_success}};
}

constexpr const char* kCsvHeader =
    "attack,defense,model,num_attackers,seed,attack_success_rate,normal_accuracy,"
    "image_distortion_natural,image_distortion_cloaked,feature_loss_natural,"
    "feature_loss_cloaked";

void append_csv_row(std::ofstream& out, const ExperimentReport& r) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%s,%s,%s,%d,%llu,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g",
                  r.attack.c_str(), r.defense.c_str(), r.model.c_str(), r.num_attackers,
                  static_cast<unsigned long long>(r.seed), r.attack_success_rate,
                  r.normal_accuracy, r.distortion.image_distortion_natural,
                  r.distortion.image_distortion_cloaked, r.distortion.feature_loss_natural,
                  r.distortion.feature_loss_cloaked);
    out << buf << "\n";
}

std::ofstream open_out(const fs::path& path, bool append) {
    std::ofstream out(path, append ? std::ios::app : std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
    return out;
}

}  // namespace

void write_reports_jsonl(const std::vector<ExperimentReport>& reports, const fs::path& path,
                         const std::string& provenance_json, bool append) {
    std::ofstream out = open_out(path, append);
    for (const auto& r : reports) {
        json row = report_to_json(r);
        if (!provenance_json.empty()) row["provenance"] = json::parse(provenance_json);
        out << row.dump() << "\n";
    }
    if (!out) throw std::runtime_error("failed writing " + path.string());
}

void write_reports_csv(const std::vector<ExperimentReport>& reports, const fs::path& path,
                       bool append) {
    bool write_header = !append || !fs::exists(path) || fs::file_size(path) == 0;
    std::ofstream out = open_out(path, append);
    if (write_header) out << kCsvHeader << "\n";
    for (const auto& r : reports) append_csv_row(out, r);
    if (!out) throw std::runtime_error("failed writing " + path.string());
}

void write_sweep_jsonl(const std::vector<AlphaSweepPoint>& points, const fs::path& path,
                       const std::string& provenance_json) {
    std::ofstream out = open_out(path, false);
    for (const auto& p : points) {
        json row = report_to_json(p.report);
        row["alpha"] = p.alpha;
        if (!provenance_json.empty()) row["provenance"] = json::parse(provenance_json);
        out << row.dump() << "\n";
    }
    if (!out) throw std::runtime_error("failed writing " + path.string());
}

void write_sweep_csv(const std::vector<AlphaSweepPoint>& points, const fs::path& path) {
    std::ofstream out = open_out(path, false);
    out << "alpha," << kCsvHeader << "\n";
    for (const auto& p : points) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.10g,", p.alpha);
        out << buf;
        append_csv_row(out, p.report);
    }
    if (!out) throw std::runtime_error("failed writing " + path.string());
}

void write_pca_csv(const PcaProjection& proj, const fs::path& path) {
    std::ofstream out = open_out(path, false);
    char buf[128];
    std::snprintf(buf, sizeof(buf), "# component_variance,%.10g,%.10g",
                  proj.component_variance[0], proj.component_variance[1]);
    out << buf << "\n" << "pc1,pc2,identity,group\n";
    for (const auto& p : proj.points) {
        std::snprintf(buf, sizeof(buf), "%.10g,%.10g,", p.x, p.y);
        out << buf << p.identity << "," << p.group << "\n";
    }
    if (!out) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace decloak
