// Copyright (c) 2026 decloak contributors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <cstddef>
#include <fstream>
#include <json.hpp>
#include <sstream>
#include <string>
#include <vector>

#include "decloak/dataset.hpp"
#include "decloak/defenses.hpp"
#include "decloak/evaluation.hpp"
#include "decloak/extractor.hpp"
#include "decloak/purifier.hpp"
#include "decloak/purifier_training.hpp"
#include "decloak/recognition.hpp"
#include "support.hpp"

using namespace decloak;

namespace {

/// Shared pipeline pieces; built once because purifier training dominates.
struct Fixture {
    IdentityDataset ds;
    ExtractorModel extractor;
    std::vector<PurifierTrainPair> pairs;
    PurifierModel purifier;
    PurifierModel magnet;

    Fixture() {
        SynthIdentitySpec spec;
        spec.num_identities = 5;
        spec.images_per_identity = 8;
        spec.image_size = 16;
        spec.seed = 101;
        ds = generate_synthetic(spec);

        ExtractorConfig ecfg;
        ecfg.image_size = 16;
        ecfg.channels = {8, 16};
        ecfg.embed_dim = 16;
        ecfg.epochs = 14;
        ecfg.seed = 6;
        extractor = train_extractor(ds, ecfg);

        AttackConfig attack;
        pairs = make_fawkes_pairs(ds, extractor, attack, 0, 103);

        PurifierTrainConfig pcfg;
        pcfg.learning_rate = 1e-3;
        pcfg.epochs = 30;
        pcfg.seed = 105;
        pcfg.purifier.image_size = 16;
        pcfg.purifier.channels = 32;
        pcfg.purifier.depth = 6;
        purifier = train_purifier(pairs, extractor, pcfg);

        std::vector<Image> naturals;
        for (std::size_t i : ds.train_idx) naturals.push_back(ds.entries[i].image);
        MagnetTrainConfig mcfg;
        mcfg.autoencoder.image_size = 16;
        mcfg.autoencoder.channels = 32;
        mcfg.autoencoder.depth = 6;
        mcfg.epochs = 10;
        mcfg.seed = 107;
        magnet = train_magnet_reformer(naturals, mcfg);
    }

    EvaluationContext context() const {
        EvaluationContext ctx;
        ctx.dataset = &ds;
        ctx.recognizer = &extractor;
        ctx.purifier = &purifier;
        ctx.magnet = &magnet;
        ctx.attack.steps = 30;
        ctx.deflect_count = 50;
        ctx.deflect_window = 3;
        return ctx;
    }
};

const Fixture& fixture() {
    static Fixture f;
    return f;
}

bool reports_equal(const ExperimentReport& a, const ExperimentReport& b) {
    return a.attack == b.attack && a.defense == b.defense && a.model == b.model &&
           a.num_attackers == b.num_attackers && a.seed == b.seed &&
           a.attack_success_rate == b.attack_success_rate &&
           a.normal_accuracy == b.normal_accuracy &&
           a.distortion.image_distortion_natural == b.distortion.image_distortion_natural &&
           a.distortion.image_distortion_cloaked == b.distortion.image_distortion_cloaked &&
           a.distortion.feature_loss_natural == b.distortion.feature_loss_natural &&
           a.distortion.feature_loss_cloaked == b.distortion.feature_loss_cloaked &&
           a.attacker_ids == b.attacker_ids && a.per_attacker_success == b.per_attacker_success;
}

ExperimentReport fake_report(double success, double accuracy) {
    ExperimentReport r;
    r.attack = "lowkey";
    r.defense = "purifier";
    r.model = "1nn";
    r.num_attackers = 2;
    r.seed = 42;
    r.attack_success_rate = success;
    r.normal_accuracy = accuracy;
    r.distortion.image_distortion_natural = 0.001;
    r.distortion.image_distortion_cloaked = 0.002;
    r.distortion.feature_loss_natural = 0.01;
    r.distortion.feature_loss_cloaked = 0.02;
    r.attacker_ids = {"id_0", "id_1"};
    r.per_attacker_success = {success, success};
    return r;
}

std::vector<std::string> read_lines(const std::filesystem::path& p) {
    std::ifstream in(p);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) lines.push_back(line);
    return lines;
}

}  // namespace

TEST_CASE("attack and defense names round-trip") {
    CHECK(to_string(AttackName::lowkey) == "lowkey");
    CHECK(attack_from_string("fawkes") == AttackName::fawkes);
    CHECK(to_string(DefenseName::deflect) == "deflect");
    CHECK(defense_from_string("magnet") == DefenseName::magnet);
    CHECK_THROWS_AS(attack_from_string("pgd"), std::invalid_argument);
    CHECK_THROWS_AS(defense_from_string("gan"), std::invalid_argument);
}

TEST_CASE("success rate hits both endpoints with rigged references") {
    const auto& f = fixture();
    std::string attacker = f.ds.identities().front();

    RecognitionModel rigged = train_1nn(f.extractor, f.ds);
    rigged.ref_embeddings.clear();
    rigged.ref_labels.clear();
    for (std::size_t i : f.ds.test_of(attacker)) {
        rigged.ref_embeddings.push_back(embed(f.extractor, f.ds.entries[i].image).v);
        rigged.ref_labels.push_back(attacker);
    }
    CHECK(attack_success_rate(rigged, attacker, f.ds) == 0.0);

    for (auto& label : rigged.ref_labels) label = "somebody_else";
    CHECK(attack_success_rate(rigged, attacker, f.ds) == 1.0);
}

TEST_CASE("success rate matches a direct recount") {
    const auto& f = fixture();
    RecognitionModel m = train_1nn(f.extractor, f.ds);
    for (const auto& attacker : f.ds.identities()) {
        auto tests_idx = f.ds.test_of(attacker);
        std::size_t evaded = 0;
        for (std::size_t i : tests_idx) {
            if (predict(m, f.ds.entries[i].image) != attacker) ++evaded;
        }
        double want = static_cast<double>(evaded) / static_cast<double>(tests_idx.size());
        CHECK(attack_success_rate(m, attacker, f.ds) == want);
    }
}

TEST_CASE("normal accuracy complements its own error") {
    const auto& f = fixture();
    RecognitionModel m = train_1nn(f.extractor, f.ds);
    std::string attacker = f.ds.identities().front();

    std::size_t total = 0, correct = 0;
    for (std::size_t i : f.ds.test_idx) {
        if (f.ds.entries[i].identity == attacker) continue;
        ++total;
        if (predict(m, f.ds.entries[i].image) == f.ds.entries[i].identity) ++correct;
    }
    double acc = normal_accuracy(m, attacker, f.ds);
    CHECK(acc == static_cast<double>(correct) / static_cast<double>(total));
    CHECK(acc + static_cast<double>(total - correct) / static_cast<double>(total) == 1.0);
}

TEST_CASE("metrics reject impossible attackers") {
    const auto& f = fixture();
    RecognitionModel m = train_1nn(f.extractor, f.ds);
    CHECK_THROWS_AS(attack_success_rate(m, "ghost", f.ds), std::invalid_argument);

    IdentityDataset one = tests::only_identity(f.ds, f.ds.identities().front());
    RecognitionModel m1 = train_1nn(f.extractor, one);
    CHECK_THROWS_AS(normal_accuracy(m1, one.identities().front(), one),
                    std::invalid_argument);
}

TEST_CASE("context validation catches missing pieces") {
    const auto& f = fixture();
    EvaluationContext ctx;
    CHECK_THROWS_AS(ctx.validate(), std::invalid_argument);
    ctx.dataset = &f.ds;
    CHECK_THROWS_AS(ctx.validate(), std::invalid_argument);
    ctx.recognizer = &f.extractor;
    CHECK_NOTHROW(ctx.validate());

    // purifier defense demands a purifier
    CHECK_THROWS_AS(
        run_experiment(ctx, AttackName::none, DefenseName::purifier, RecognitionKind::one_nn, 1,
                       1),
        std::invalid_argument);
    CHECK_THROWS_AS(
        run_experiment(ctx, AttackName::none, DefenseName::magnet, RecognitionKind::one_nn, 1, 1),
        std::invalid_argument);

    // attacker count must fit the identity list
    CHECK_THROWS_AS(
        run_experiment(ctx, AttackName::none, DefenseName::none, RecognitionKind::one_nn, 0, 1),
        std::invalid_argument);
    CHECK_THROWS_AS(
        run_experiment(ctx, AttackName::none, DefenseName::none, RecognitionKind::one_nn, 99, 1),
        std::invalid_argument);
}

TEST_CASE("clean pipeline stays accurate") {
    const auto& f = fixture();
    EvaluationContext ctx = f.context();
    ExperimentReport r =
        run_experiment(ctx, AttackName::none, DefenseName::none, RecognitionKind::one_nn, 2, 7);
    CHECK(r.attack_success_rate < 0.1);
    CHECK(r.normal_accuracy > 0.9);
    CHECK(r.distortion.image_distortion_natural == 0.0);
    CHECK(r.distortion.image_distortion_cloaked == 0.0);
    CHECK(r.attacker_ids.size() == 2);
    CHECK(r.per_attacker_success.size() == 2);
}

TEST_CASE("experiments are deterministic") {
    const auto& f = fixture();
    EvaluationContext ctx = f.context();
    ExperimentReport a =
        run_experiment(ctx, AttackName::fawkes, DefenseName::deflect, RecognitionKind::one_nn, 1,
                       11);
    ExperimentReport b =
        run_experiment(ctx, AttackName::fawkes, DefenseName::deflect, RecognitionKind::one_nn, 1,
                       11);
    CHECK(reports_equal(a, b));

    ExperimentReport c =
        run_experiment(ctx, AttackName::fawkes, DefenseName::deflect, RecognitionKind::one_nn, 1,
                       12);
    CHECK(c.seed == 12);
}

TEST_CASE("purifier beats no defense under the untargeted attack") {
    const auto& f = fixture();
    EvaluationContext ctx = f.context();
    std::vector<ExperimentReport> suite = run_experiment_suite(
        ctx, AttackName::lowkey, {DefenseName::none, DefenseName::purifier},
        RecognitionKind::one_nn, 2, 13);
    REQUIRE(suite.size() == 2);
    const ExperimentReport& none = suite[0];
    const ExperimentReport& purified = suite[1];

    CHECK(none.attack_success_rate > 0.4);  // the attack actually lands
    CHECK(purified.attack_success_rate < none.attack_success_rate);
    CHECK(purified.normal_accuracy > 0.7);
}

TEST_CASE("suite cells match standalone runs bit for bit") {
    const auto& f = fixture();
    EvaluationContext ctx = f.context();
    ctx.attack.steps = 10;  // equivalence is structural, keep the cell cheap

    std::vector<DefenseName> defenses = {DefenseName::none, DefenseName::purifier,
                                         DefenseName::magnet, DefenseName::deflect};
    std::vector<ExperimentReport> suite = run_experiment_suite(
        ctx, AttackName::fawkes, defenses, RecognitionKind::one_nn, 2, 17);
    REQUIRE(suite.size() == defenses.size());

    for (std::size_t d = 0; d < defenses.size(); ++d) {
        ExperimentReport single = run_experiment(ctx, AttackName::fawkes, defenses[d],
                                                 RecognitionKind::one_nn, 2, 17);
        CHECK(reports_equal(suite[d], single));
    }
}

TEST_CASE("alpha sweep trains one purifier per factor") {
    const auto& f = fixture();
    EvaluationContext ctx = f.context();
    ctx.attack.steps = 10;

    PurifierTrainConfig base;
    base.learning_rate = 1e-3;
    base.epochs = 2;
    base.seed = 19;
    base.purifier.image_size = 16;
    base.purifier.channels = 8;
    base.purifier.depth = 4;

    std::vector<double> alphas = {1.0, 5.0, 10.0};
    std::vector<AlphaSweepPoint> sweep = alpha_sweep(ctx, alphas, f.pairs, f.extractor, base,
                                                     AttackName::fawkes, RecognitionKind::one_nn,
                                                     1, 21);
    REQUIRE(sweep.size() == 3);
    for (std::size_t i = 0; i < sweep.size(); ++i) {
        CHECK(sweep[i].alpha == alphas[i]);
        CHECK(sweep[i].report.defense == "purifier");
        CHECK(sweep[i].report.attack == "fawkes");
        CHECK(sweep[i].report.attack_success_rate >= 0.0);
        CHECK(sweep[i].report.attack_success_rate <= 1.0);
    }

    std::vector<AlphaSweepPoint> again = alpha_sweep(ctx, alphas, f.pairs, f.extractor, base,
                                                     AttackName::fawkes, RecognitionKind::one_nn,
                                                     1, 21);
    for (std::size_t i = 0; i < sweep.size(); ++i) {
        CHECK(reports_equal(sweep[i].report, again[i].report));
    }

    CHECK_THROWS_AS(alpha_sweep(ctx, {}, f.pairs, f.extractor, base, AttackName::fawkes,
                                RecognitionKind::one_nn, 1, 21),
                    std::invalid_argument);
}

TEST_CASE("zero amplification leaves the poisoning in place") {
    const auto& f = fixture();
    EvaluationContext ctx = f.context();

    PurifierTrainConfig base;
    base.learning_rate = 1e-3;
    base.epochs = 25;
    base.seed = 23;
    base.purifier.image_size = 16;
    base.purifier.channels = 16;
    base.purifier.depth = 4;

    std::vector<AlphaSweepPoint> sweep =
        alpha_sweep(ctx, {0.0}, f.pairs, f.extractor, base, AttackName::lowkey,
                    RecognitionKind::one_nn, 2, 25);
    REQUIRE(sweep.size() == 1);

    ExperimentReport none = run_experiment(ctx, AttackName::lowkey, DefenseName::none,
                                           RecognitionKind::one_nn, 2, 25);
    // trained on natural->natural pairs the purifier is a near-identity, so
    // the attack keeps working about as well as with no defense at all
    CHECK(std::abs(sweep[0].report.attack_success_rate - none.attack_success_rate) <= 0.34);
}

TEST_CASE("pca projects onto exactly two ordered components") {
    const auto& f = fixture();
    std::vector<std::string> ids = {f.ds.identities()[0], f.ds.identities()[1]};
    PcaProjection proj = pca_diagnostic(f.extractor, f.ds, nullptr, ids);

    std::size_t expect = 0;
    for (const auto& id : ids) expect += f.ds.train_of(id).size() + f.ds.test_of(id).size();
    REQUIRE(proj.points.size() == expect);
    CHECK(proj.component_variance[0] >= proj.component_variance[1]);
    CHECK(proj.component_variance[1] >= 0.0);
    for (const auto& p : proj.points) {
        CHECK(std::isfinite(p.x));
        CHECK(std::isfinite(p.y));
        CHECK((p.group == "train_natural" || p.group == "test_natural"));
    }
}

TEST_CASE("pca marks cloaked points with their own group") {
    const auto& f = fixture();
    IdentityDataset cloaked = f.ds;
    Rng rng(27);
    for (std::size_t i : cloaked.train_idx) {
        for (std::size_t p = 0; p < cloaked.entries[i].image.px.size(); ++p) {
            cloaked.entries[i].image.px[p] =
                std::min(1.0, std::max(0.0, cloaked.entries[i].image.px[p] +
                                                rng.uniform(-0.05, 0.05)));
        }
    }
    std::vector<std::string> ids = {f.ds.identities()[0], f.ds.identities()[1]};
    PcaProjection proj = pca_diagnostic(f.extractor, f.ds, &cloaked, ids);

    std::size_t train = 0, test = 0;
    for (const auto& id : ids) {
        train += f.ds.train_of(id).size();
        test += f.ds.test_of(id).size();
    }
    REQUIRE(proj.points.size() == 2 * train + test);
    std::size_t cloaked_count = 0;
    for (const auto& p : proj.points) {
        if (p.group == "train_cloaked") ++cloaked_count;
    }
    CHECK(cloaked_count == train);
}

TEST_CASE("pca agrees with an independent eigensolver") {
    const auto& f = fixture();
    std::vector<std::string> ids = {f.ds.identities()[0], f.ds.identities()[1],
                                    f.ds.identities()[2]};
    PcaProjection proj = pca_diagnostic(f.extractor, f.ds, nullptr, ids);

    // rebuild the embedding matrix in the same order
    std::vector<std::vector<double>> rows;
    for (const auto& id : ids) {
        for (std::size_t i : f.ds.train_of(id)) {
            rows.push_back(embed(f.extractor, f.ds.entries[i].image).v);
        }
        for (std::size_t i : f.ds.test_of(id)) {
            rows.push_back(embed(f.extractor, f.ds.entries[i].image).v);
        }
    }
    REQUIRE(rows.size() == proj.points.size());
    const std::size_t n = rows.size();
    const std::size_t dim = rows.front().size();

    std::vector<double> mean(dim, 0.0);
    for (const auto& r : rows) {
        for (std::size_t c = 0; c < dim; ++c) mean[c] += r[c];
    }
    for (auto& v : mean) v /= static_cast<double>(n);

    std::vector<std::vector<double>> cov(dim, std::vector<double>(dim, 0.0));
    for (const auto& r : rows) {
        for (std::size_t a = 0; a < dim; ++a) {
            for (std::size_t b = 0; b < dim; ++b) {
                cov[a][b] += (r[a] - mean[a]) * (r[b] - mean[b]);
            }
        }
    }
    for (auto& rw : cov) {
        for (auto& v : rw) v /= static_cast<double>(n - 1);
    }

    tests::EigenPair eig = tests::jacobi_eigen(cov);
    CHECK(tests::rel_err(proj.component_variance[0], eig.values[0]) <= 1e-6);
    CHECK(tests::rel_err(proj.component_variance[1], eig.values[1]) <= 1e-6);

    // same sign convention as the library: first nonzero loading positive
    for (int k = 0; k < 2; ++k) {
        for (std::size_t i = 0; i < dim; ++i) {
            if (std::abs(eig.vectors[k][i]) > 1e-12) {
                if (eig.vectors[k][i] < 0.0) {
                    for (auto& v : eig.vectors[k]) v = -v;
                }
                break;
            }
        }
    }
    for (std::size_t r = 0; r < n; ++r) {
        double sx = 0.0, sy = 0.0;
        for (std::size_t c = 0; c < dim; ++c) {
            sx += (rows[r][c] - mean[c]) * eig.vectors[0][c];
            sy += (rows[r][c] - mean[c]) * eig.vectors[1][c];
        }
        CHECK(std::abs(proj.points[r].x - sx) <= 1e-6);
        CHECK(std::abs(proj.points[r].y - sy) <= 1e-6);
    }
}

TEST_CASE("pca rejects degenerate requests") {
    const auto& f = fixture();
    CHECK_THROWS_AS(pca_diagnostic(f.extractor, f.ds, nullptr, {"ghost"}),
                    std::invalid_argument);
    CHECK_THROWS_AS(pca_diagnostic(f.extractor, f.ds, nullptr, {f.ds.identities()[0]}),
                    std::invalid_argument);

    IdentityDataset mismatched = f.ds;
    mismatched.entries.pop_back();
    CHECK_THROWS_AS(pca_diagnostic(f.extractor, f.ds, &mismatched, {}), std::invalid_argument);

    // two identities but only two points in total
    IdentityDataset tiny;
    tiny.image_size = 16;
    Rng rng(29);
    tiny.entries.push_back({tests::random_image(16, rng), "a", ""});
    tiny.entries.push_back({tests::random_image(16, rng), "b", ""});
    tiny.train_idx = {0, 1};
    CHECK_THROWS_AS(pca_diagnostic(f.extractor, tiny, nullptr, {}), std::invalid_argument);
}

TEST_CASE("report writers produce parsable artifacts") {
    tests::TempDir dir("decloak-eval");
    std::vector<ExperimentReport> reports = {fake_report(0.75, 0.9), fake_report(0.25, 0.95)};

    auto jsonl = dir / "report.jsonl";
    write_reports_jsonl(reports, jsonl, R"({"run":"t"})", false);
    auto lines = read_lines(jsonl);
    REQUIRE(lines.size() == 2);
    nlohmann::json row = nlohmann::json::parse(lines[0]);
    CHECK(row["attack"] == "lowkey");
    CHECK(row["defense"] == "purifier");
    CHECK(row["attack_success_rate"].get<double>() == 0.75);
    CHECK(row["normal_accuracy"].get<double>() == 0.9);
    CHECK(row["provenance"]["run"] == "t");
    CHECK(row["attacker_ids"].size() == 2);

    write_reports_jsonl(reports, jsonl, "", true);  // append
    CHECK(read_lines(jsonl).size() == 4);

    auto csv = dir / "report.csv";
    write_reports_csv(reports, csv, false);
    auto csv_lines = read_lines(csv);
    REQUIRE(csv_lines.size() == 3);
    CHECK(csv_lines[0].rfind("attack,defense,model", 0) == 0);
    CHECK(csv_lines[1].rfind("lowkey,purifier,1nn,2,42,0.75,0.9", 0) == 0);

    write_reports_csv(reports, csv, true);  // append keeps one header
    csv_lines = read_lines(csv);
    REQUIRE(csv_lines.size() == 5);
    CHECK(csv_lines[3].rfind("lowkey,", 0) == 0);
}

TEST_CASE("sweep and pca writers include their extra columns") {
    tests::TempDir dir("decloak-eval");
    std::vector<AlphaSweepPoint> sweep(2);
    sweep[0].alpha = 1.0;
    sweep[0].report = fake_report(0.8, 0.9);
    sweep[1].alpha = 5.0;
    sweep[1].report = fake_report(0.1, 0.92);

    auto jsonl = dir / "sweep.jsonl";
    write_sweep_jsonl(sweep, jsonl, "");
    auto lines = read_lines(jsonl);
    REQUIRE(lines.size() == 2);
    CHECK(nlohmann::json::parse(lines[1])["alpha"].get<double>() == 5.0);

    auto csv = dir / "sweep.csv";
    write_sweep_csv(sweep, csv);
    auto csv_lines = read_lines(csv);
    REQUIRE(csv_lines.size() == 3);
    CHECK(csv_lines[0].rfind("alpha,attack,", 0) == 0);
    CHECK(csv_lines[1].rfind("1,lowkey,", 0) == 0);

    PcaProjection proj;
    proj.component_variance = {2.0, 1.0};
    proj.points.push_back({0.5, -0.5, "id_0", "train_natural"});
    auto pca = dir / "pca.csv";
    write_pca_csv(proj, pca);
    auto pca_lines = read_lines(pca);
    REQUIRE(pca_lines.size() == 3);
    CHECK(pca_lines[0].rfind("# component_variance,2,1", 0) == 0);
    CHECK(pca_lines[1] == "pc1,pc2,identity,group");
    CHECK(pca_lines[2] == "0.5,-0.5,id_0,train_natural");
}
