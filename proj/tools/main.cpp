// Copyright (c) 2026 decloak contributors
// SPDX-License-Identifier: Apache-2.0
//
// Command line front end for the cloak purification pipeline. Every artifact
// (dataset manifest, checkpoint, report) embeds the full flag set that
// produced it, so runs can be reproduced from the files alone.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "decloak/attacks.hpp"
#include "decloak/checkpoint.hpp"
#include "decloak/dataset.hpp"
#include "decloak/defenses.hpp"
#include "decloak/evaluation.hpp"
#include "decloak/extractor.hpp"
#include "decloak/purifier.hpp"
#include "decloak/purifier_training.hpp"
#include "decloak/recognition.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace decloak;

namespace {

/// Exit code 2: an input file or directory is absent.
struct MissingInput : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Exit code 1: flags conflict with on-disk state (e.g. output exists).
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void require_dir(const fs::path& p, const char* what) {
    if (!fs::is_directory(p)) {
        throw MissingInput(std::string(what) + " directory not found: " + p.string());
    }
}

void require_file(const fs::path& p, const char* what) {
    if (!fs::is_regular_file(p)) {
        throw MissingInput(std::string(what) + " file not found: " + p.string());
    }
}

void ensure_fresh_dir(const fs::path& p, bool force) {
    if (fs::exists(p) && !fs::is_empty(p) && !force) {
        throw UsageError("output directory exists and is not empty (use --force): " +
                         p.string());
    }
}

void ensure_parent(const fs::path& p) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

/// Serialized record of every option of the subcommand, defaults included.
std::string flags_json(const CLI::App& sub) {
    json flags = json::object();
    for (const CLI::Option* opt : sub.get_options()) {
        if (opt->get_lnames().empty()) continue;
        std::string name = opt->get_lnames().front();
        if (name == "help" || name == "config") continue;
        if (opt->count() > 0) {
            auto res = opt->results();
            flags[name] = res.size() == 1 ? json(res.front()) : json(res);
        } else {
            flags[name] = opt->get_default_str();
        }
    }
    return json{{"command", sub.get_name()}, {"flags", flags}}.dump();
}

struct SynthArgs {
    std::string out;
    SynthIdentitySpec spec;
    bool force = false;
};

struct TrainExtractorArgs {
    std::string data, out;
    ExtractorConfig cfg;
};

struct AttackArgs {
    std::string data, out, attack = "fawkes", attacker;
    std::vector<std::string> extractors;
    AttackConfig cfg;
    bool force = false;
};

struct TrainPurifierArgs {
    std::string data, attack_extractor, feature_extractor, out, log;
    PurifierTrainConfig cfg;
    AttackConfig attack;
    std::size_t max_pairs = 0;
};

struct TrainRecognizerArgs {
    std::string data, extractor, out, kind = "1nn";
    RecognitionTrainConfig cfg;
};

struct PurifyArgs {
    std::string model, in, out;
    bool force = false;
};

struct DefendArgs {
    std::string method = "deflect", in, out, model, save_model, train_data;
    MagnetTrainConfig magnet;
    int count = 200;
    int window = 10;
    double sigma = 0.04;
    std::uint64_t seed = 7;
    bool force = false;
};

struct EvaluateArgs {
    std::string data, extractor, out;
    std::string attack = "none", defense = "none", model = "1nn";
    std::string purifier, magnet;
    int attackers = 1;
    std::uint64_t seed = 1;
    AttackConfig attack_cfg;
    RecognitionTrainConfig rec_cfg;
    int deflect_count = 200;
    int deflect_window = 10;
    double deflect_sigma = 0.04;
    bool append = false;
};

struct SweepArgs {
    std::string data, extractor, feature_extractor, purifier_data, out;
    std::vector<double> alphas = {1.0, 3.0, 5.0, 8.0, 10.0};
    std::string attack = "fawkes", model = "1nn";
    int attackers = 1;
    std::uint64_t seed = 1;
    std::size_t max_pairs = 0;
    PurifierTrainConfig train_cfg;
    AttackConfig attack_cfg;
    RecognitionTrainConfig rec_cfg;
};

struct PcaArgs {
    std::string data, extractor, cloaked, out;
    std::vector<std::string> identities;
};

void run_synth(const SynthArgs& a, const std::string& provenance) {
    ensure_fresh_dir(a.out, a.force);
    IdentityDataset ds = generate_synthetic(a.spec);
    export_dataset(ds, a.out, provenance);
    std::printf("wrote %zu images (%d identities) to %s\n", ds.size(), a.spec.num_identities,
                a.out.c_str());
}

void run_train_extractor(const TrainExtractorArgs& a, const std::string& provenance) {
    require_dir(a.data, "dataset");
    IdentityDataset ds = load_directory(a.data, a.cfg.image_size);
    ExtractorModel m = train_extractor(ds, a.cfg);
    ensure_parent(a.out);
    save_extractor(m, a.out, provenance);
    std::printf("extractor trained: train accuracy %.4f, saved to %s\n",
                m.final_train_accuracy, a.out.c_str());
}

void run_attack(const AttackArgs& a, const std::string& provenance) {
    require_dir(a.data, "dataset");
    for (const auto& e : a.extractors) require_file(e, "extractor checkpoint");
    ensure_fresh_dir(a.out, a.force);

    std::vector<ExtractorModel> models;
    models.reserve(a.extractors.size());
    for (const auto& e : a.extractors) models.push_back(load_extractor(e));
    std::vector<const ExtractorModel*> refs;
    for (const auto& m : models) refs.push_back(&m);

    // Cloaks are exported as byte deltas against the on-disk files, so the
    // dataset is loaded at native size and the extractors must match it.
    IdentityDataset natural = load_directory(a.data);
    for (const auto& m : models) {
        if (static_cast<std::size_t>(m.cfg.image_size) != natural.image_size) {
            throw std::runtime_error("extractor expects " +
                                     std::to_string(m.cfg.image_size) +
                                     "px images but dataset is " +
                                     std::to_string(natural.image_size) + "px");
        }
    }
    AttackKind kind = a.attack == "fawkes" ? AttackKind::fawkes : AttackKind::lowkey;
    IdentityDataset cloaked = cloak_identity(natural, a.attacker, kind, refs, a.cfg);

    export_cloaked_dataset(cloaked, natural, a.data, a.out, a.cfg.epsilon, provenance);
    std::size_t changed = 0;
    for (std::size_t i = 0; i < natural.size(); ++i) {
        if (!(cloaked.entries[i].image == natural.entries[i].image)) ++changed;
    }
    std::printf("cloaked %zu train images of %s into %s\n", changed, a.attacker.c_str(),
                a.out.c_str());
}

void run_train_purifier(const TrainPurifierArgs& a, const std::string& provenance) {
    require_dir(a.data, "dataset");
    require_file(a.attack_extractor, "attack extractor checkpoint");
    require_file(a.feature_extractor, "feature extractor checkpoint");

    ExtractorModel surrogate = load_extractor(a.attack_extractor);
    ExtractorModel fx = load_extractor(a.feature_extractor);
    IdentityDataset ds = load_directory(a.data, surrogate.cfg.image_size);

    std::vector<PurifierTrainPair> pairs =
        make_fawkes_pairs(ds, surrogate, a.attack, a.max_pairs, a.cfg.seed);
    PurifierTrainConfig cfg = a.cfg;
    cfg.purifier.image_size = surrogate.cfg.image_size;
    PurifierModel m = train_purifier(pairs, fx, cfg);
    m.dataset_fingerprint = ds.fingerprint();

    ensure_parent(a.out);
    save_purifier(m, a.out, provenance);
    if (!a.log.empty()) {
        ensure_parent(a.log);
        std::ofstream log(a.log);
        log << "epoch,image_loss,feature_loss,total_loss\n";
        for (const auto& r : m.train_log) {
            char buf[128];
            std::snprintf(buf, sizeof(buf), "%d,%.10g,%.10g,%.10g", r.epoch, r.image_loss,
                          r.feature_loss, r.total_loss);
            log << buf << "\n";
        }
    }
    double final_loss = m.train_log.empty() ? 0.0 : m.train_log.back().total_loss;
    std::printf("purifier trained on %zu pairs, final loss %.6f, saved to %s\n", pairs.size(),
                final_loss, a.out.c_str());
}

void run_train_recognizer(const TrainRecognizerArgs& a, const std::string& provenance) {
    require_dir(a.data, "dataset");
    require_file(a.extractor, "extractor checkpoint");
    ExtractorModel e = load_extractor(a.extractor);
    IdentityDataset ds = load_directory(a.data, e.cfg.image_size);

    RecognitionModel m;
    RecognitionKind kind = recognition_from_string(a.kind);
    switch (kind) {
        case RecognitionKind::one_nn: m = train_1nn(e, ds); break;
        case RecognitionKind::linear: m = train_linear(e, ds, a.cfg); break;
        case RecognitionKind::finetune: m = train_finetune(e, ds, a.cfg); break;
    }
    ensure_parent(a.out);
    save_recognizer(m, a.out, provenance);
    std::printf("recognizer (%s) over %zu identities saved to %s\n", a.kind.c_str(),
                m.labels.size(), a.out.c_str());
}

void run_purify(const PurifyArgs& a, const std::string& provenance) {
    require_file(a.model, "purifier checkpoint");
    require_dir(a.in, "dataset");
    ensure_fresh_dir(a.out, a.force);
    PurifierModel m = load_purifier(a.model);
    IdentityDataset ds = load_directory(a.in, m.cfg.image_size);
    IdentityDataset out = purify_dataset(m, ds);
    export_dataset(out, a.out, provenance);
    std::printf("purified %zu train images into %s\n", out.train_idx.size(), a.out.c_str());
}

void run_defend(const DefendArgs& a, const std::string& provenance) {
    require_dir(a.in, "dataset");
    ensure_fresh_dir(a.out, a.force);

    if (a.method == "magnet") {
        PurifierModel reformer;
        IdentityDataset ds = load_directory(a.in);
        if (!a.model.empty()) {
            require_file(a.model, "reformer checkpoint");
            reformer = load_purifier(a.model);
            ds = load_directory(a.in, reformer.cfg.image_size);
        } else {
            // Train the reformer on natural images the defender holds.
            std::string train_root = a.train_data.empty() ? a.in : a.train_data;
            require_dir(train_root, "reformer training dataset");
            MagnetTrainConfig cfg = a.magnet;
            cfg.autoencoder.image_size = static_cast<int>(ds.image_size);
            IdentityDataset train_ds = load_directory(train_root, cfg.autoencoder.image_size);
            std::vector<Image> naturals;
            for (std::size_t i : train_ds.train_idx) {
                naturals.push_back(train_ds.entries[i].image);
            }
            reformer = train_magnet_reformer(naturals, cfg);
            if (!a.save_model.empty()) {
                ensure_parent(a.save_model);
                save_purifier(reformer, a.save_model, provenance);
            }
        }
        IdentityDataset out = purify_dataset(reformer, ds);
        export_dataset(out, a.out, provenance);
        std::printf("reformed %zu train images into %s\n", out.train_idx.size(), a.out.c_str());
        return;
    }

    IdentityDataset ds = load_directory(a.in);
    IdentityDataset out = ds;
    for (std::size_t i : out.train_idx) {
        Image d = pixel_deflection(out.entries[i].image, a.count, a.window,
                                   mix_seed(a.seed, i));
        out.entries[i].image = wavelet_denoise(d, a.sigma);
    }
    export_dataset(out, a.out, provenance);
    std::printf("deflected %zu train images into %s\n", out.train_idx.size(), a.out.c_str());
}

void print_report(const ExperimentReport& r) {
    std::printf("attack=%s defense=%s model=%s attackers=%d\n", r.attack.c_str(),
                r.defense.c_str(), r.model.c_str(), r.num_attackers);
    std::printf("  attack_success_rate      %.4f\n", r.attack_success_rate);
    std::printf("  normal_accuracy          %.4f\n", r.normal_accuracy);
    std::printf("  image_distortion nat/clk %.6f / %.6f\n",
                r.distortion.image_distortion_natural, r.distortion.image_distortion_cloaked);
    std::printf("  feature_loss nat/clk     %.6f / %.6f\n", r.distortion.feature_loss_natural,
                r.distortion.feature_loss_cloaked);
}

void run_evaluate(const EvaluateArgs& a, const std::string& provenance) {
    require_dir(a.data, "dataset");
    require_file(a.extractor, "extractor checkpoint");
    ExtractorModel e = load_extractor(a.extractor);
    IdentityDataset ds = load_directory(a.data, e.cfg.image_size);

    PurifierModel purifier, magnet;
    EvaluationContext ctx;
    ctx.dataset = &ds;
    ctx.recognizer = &e;
    ctx.attack = a.attack_cfg;
    ctx.recognition = a.rec_cfg;
    ctx.deflect_count = a.deflect_count;
    ctx.deflect_window = a.deflect_window;
    ctx.deflect_sigma = a.deflect_sigma;
    DefenseName defense = defense_from_string(a.defense);
    if (defense == DefenseName::purifier) {
        require_file(a.purifier, "purifier checkpoint");
        purifier = load_purifier(a.purifier);
        ctx.purifier = &purifier;
    }
    if (defense == DefenseName::magnet) {
        require_file(a.magnet, "reformer checkpoint");
        magnet = load_purifier(a.magnet);
        ctx.magnet = &magnet;
    }

    ExperimentReport report =
        run_experiment(ctx, attack_from_string(a.attack), defense,
                       recognition_from_string(a.model), a.attackers, a.seed);

    fs::create_directories(a.out);
    write_reports_jsonl({report}, fs::path(a.out) / "report.jsonl", provenance, a.append);
    write_reports_csv({report}, fs::path(a.out) / "report.csv", a.append);
    print_report(report);
}

void run_sweep(const SweepArgs& a, const std::string& provenance) {
    require_dir(a.data, "dataset");
    require_dir(a.purifier_data, "purifier training dataset");
    require_file(a.extractor, "extractor checkpoint");
    require_file(a.feature_extractor, "feature extractor checkpoint");

    ExtractorModel e = load_extractor(a.extractor);
    ExtractorModel fx = load_extractor(a.feature_extractor);
    IdentityDataset ds = load_directory(a.data, e.cfg.image_size);
    IdentityDataset defender = load_directory(a.purifier_data, e.cfg.image_size);

    std::vector<PurifierTrainPair> pairs =
        make_fawkes_pairs(defender, e, a.attack_cfg, a.max_pairs, a.train_cfg.seed);

    EvaluationContext ctx;
    ctx.dataset = &ds;
    ctx.recognizer = &e;
    ctx.attack = a.attack_cfg;
    ctx.recognition = a.rec_cfg;

    PurifierTrainConfig base = a.train_cfg;
    base.purifier.image_size = e.cfg.image_size;
    std::vector<AlphaSweepPoint> points =
        alpha_sweep(ctx, a.alphas, pairs, fx, base, attack_from_string(a.attack),
                    recognition_from_string(a.model), a.attackers, a.seed);

    fs::create_directories(a.out);
    write_sweep_jsonl(points, fs::path(a.out) / "sweep.jsonl", provenance);
    write_sweep_csv(points, fs::path(a.out) / "sweep.csv");
    for (const auto& p : points) {
        std::printf("alpha=%.3g success=%.4f normal=%.4f natural_mse=%.6f\n", p.alpha,
                    p.report.attack_success_rate, p.report.normal_accuracy,
                    p.report.distortion.image_distortion_natural);
    }
}

void run_pca(const PcaArgs& a, const std::string& provenance) {
    (void)provenance;
    require_dir(a.data, "dataset");
    require_file(a.extractor, "extractor checkpoint");
    ExtractorModel e = load_extractor(a.extractor);
    IdentityDataset ds = load_directory(a.data, e.cfg.image_size);

    IdentityDataset cloaked;
    const IdentityDataset* cloaked_ptr = nullptr;
    if (!a.cloaked.empty()) {
        require_dir(a.cloaked, "cloaked dataset");
        cloaked = load_directory(a.cloaked, e.cfg.image_size);
        cloaked_ptr = &cloaked;
    }
    PcaProjection proj = pca_diagnostic(e, ds, cloaked_ptr, a.identities);
    ensure_parent(a.out);
    write_pca_csv(proj, a.out);
    std::printf("projected %zu points, component variance %.6g / %.6g, wrote %s\n",
                proj.points.size(), proj.component_variance[0], proj.component_variance[1],
                a.out.c_str());
}

void add_attack_flags(CLI::App* sub, AttackConfig& cfg) {
    sub->add_option("--epsilon", cfg.epsilon, "Cloak L-inf budget")->capture_default_str();
    sub->add_option("--steps", cfg.steps, "Attack iterations")->capture_default_str();
    sub->add_option("--step-size", cfg.step_size, "Step size (0 = epsilon/10)")
        ->capture_default_str();
    sub->add_option("--blur-sigma", cfg.blur_sigma, "Blur sigma of the robustness term")
        ->capture_default_str();
}

void add_recognition_flags(CLI::App* sub, RecognitionTrainConfig& cfg) {
    sub->add_option("--rec-epochs", cfg.epochs, "Recognizer training epochs")
        ->capture_default_str();
    sub->add_option("--rec-lr", cfg.learning_rate, "Recognizer learning rate")
        ->capture_default_str();
    sub->add_option("--rec-batch", cfg.batch_size, "Recognizer batch size")
        ->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"cloak purification pipeline"};
    app.require_subcommand(1);
    app.set_config("--config", "", "Read options from an INI file (flags win)");

    SynthArgs synth;
    auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic identity dataset");
    synth_cmd->add_option("--out", synth.out, "Output dataset directory")->required();
    synth_cmd->add_option("--identities", synth.spec.num_identities, "Number of identities")
        ->capture_default_str();
    synth_cmd->add_option("--per-identity", synth.spec.images_per_identity,
                          "Images per identity")
        ->capture_default_str();
    synth_cmd->add_option("--size", synth.spec.image_size, "Image size in pixels")
        ->capture_default_str();
    synth_cmd->add_option("--jitter", synth.spec.jitter_scale, "Within-identity variation")
        ->capture_default_str();
    synth_cmd->add_option("--seed", synth.spec.seed, "Generator seed")->capture_default_str();
    synth_cmd->add_option("--train-fraction", synth.spec.train_fraction, "Train split fraction")
        ->capture_default_str();
    synth_cmd->add_flag("--force", synth.force, "Overwrite a non-empty output directory");
    synth_cmd->callback([&] { run_synth(synth, flags_json(*synth_cmd)); });

    TrainExtractorArgs tex;
    auto* tex_cmd = app.add_subcommand("train-extractor", "Train an embedding extractor");
    tex_cmd->add_option("--data", tex.data, "Training dataset directory")->required();
    tex_cmd->add_option("--out", tex.out, "Output checkpoint path")->required();
    tex_cmd->add_option("--size", tex.cfg.image_size, "Image size")->capture_default_str();
    tex_cmd->add_option("--channels", tex.cfg.channels, "Conv channels per block")
        ->delimiter(',')
        ->capture_default_str();
    tex_cmd->add_option("--embed-dim", tex.cfg.embed_dim, "Embedding dimension")
        ->capture_default_str();
    tex_cmd->add_option("--epochs", tex.cfg.epochs, "Training epochs")->capture_default_str();
    tex_cmd->add_option("--lr", tex.cfg.learning_rate, "Learning rate")->capture_default_str();
    tex_cmd->add_option("--batch", tex.cfg.batch_size, "Batch size")->capture_default_str();
    tex_cmd->add_option("--seed", tex.cfg.seed, "Training seed")->capture_default_str();
    tex_cmd->callback([&] { run_train_extractor(tex, flags_json(*tex_cmd)); });

    AttackArgs atk;
    auto* atk_cmd = app.add_subcommand("attack", "Cloak one identity's train images");
    atk_cmd->add_option("--data", atk.data, "Natural dataset directory")->required();
    atk_cmd->add_option("--out", atk.out, "Output dataset directory")->required();
    atk_cmd->add_option("--attack", atk.attack, "Attack family")
        ->check(CLI::IsMember({"fawkes", "lowkey"}))
        ->capture_default_str();
    atk_cmd->add_option("--attacker", atk.attacker, "Identity to cloak")->required();
    atk_cmd->add_option("--extractor", atk.extractors,
                        "Surrogate extractor checkpoint (repeat for an ensemble)")
        ->required();
    add_attack_flags(atk_cmd, atk.cfg);
    atk_cmd->add_option("--seed", atk.cfg.seed, "Attack seed (target choice)")
        ->capture_default_str();
    atk_cmd->add_flag("--force", atk.force, "Overwrite a non-empty output directory");
    atk_cmd->callback([&] { run_attack(atk, flags_json(*atk_cmd)); });

    TrainPurifierArgs tpu;
    auto* tpu_cmd = app.add_subcommand("train-purifier", "Train the cloak purifier");
    tpu_cmd->add_option("--data", tpu.data, "Defender's natural dataset directory")->required();
    tpu_cmd->add_option("--attack-extractor", tpu.attack_extractor,
                        "Extractor the training cloaks are generated against")
        ->required();
    tpu_cmd->add_option("--feature-extractor", tpu.feature_extractor,
                        "Frozen extractor for the feature loss")
        ->required();
    tpu_cmd->add_option("--out", tpu.out, "Output checkpoint path")->required();
    tpu_cmd->add_option("--log", tpu.log, "Optional per-epoch loss CSV");
    tpu_cmd->add_option("--alpha", tpu.cfg.alpha, "Cloak amplification factor")
        ->capture_default_str();
    tpu_cmd->add_option("--lambda", tpu.cfg.lambda, "Feature loss weight")
        ->capture_default_str();
    tpu_cmd->add_option("--lr", tpu.cfg.learning_rate, "Learning rate")->capture_default_str();
    tpu_cmd->add_option("--epochs", tpu.cfg.epochs, "Training epochs")->capture_default_str();
    tpu_cmd->add_option("--batch", tpu.cfg.batch_size, "Batch size")->capture_default_str();
    tpu_cmd->add_option("--seed", tpu.cfg.seed, "Training seed")->capture_default_str();
    tpu_cmd->add_option("--pairs", tpu.max_pairs, "Max training pairs (0 = all)")
        ->capture_default_str();
    tpu_cmd->add_option("--depth", tpu.cfg.purifier.depth, "Total conv+deconv layers")
        ->capture_default_str();
    tpu_cmd->add_option("--channels", tpu.cfg.purifier.channels, "Feature maps per layer")
        ->capture_default_str();
    tpu_cmd->add_option("--skip-interval", tpu.cfg.purifier.skip_interval,
                        "Encoder layers between skips")
        ->capture_default_str();
    add_attack_flags(tpu_cmd, tpu.attack);
    tpu_cmd->callback([&] { run_train_purifier(tpu, flags_json(*tpu_cmd)); });

    TrainRecognizerArgs tre;
    auto* tre_cmd = app.add_subcommand("train-recognizer", "Train a recognition model");
    tre_cmd->add_option("--data", tre.data, "Training dataset directory")->required();
    tre_cmd->add_option("--extractor", tre.extractor, "Extractor checkpoint")->required();
    tre_cmd->add_option("--out", tre.out, "Output checkpoint path")->required();
    tre_cmd->add_option("--kind", tre.kind, "Model kind")
        ->check(CLI::IsMember({"1nn", "linear", "finetune"}))
        ->capture_default_str();
    tre_cmd->add_option("--epochs", tre.cfg.epochs, "Training epochs")->capture_default_str();
    tre_cmd->add_option("--lr", tre.cfg.learning_rate, "Learning rate")->capture_default_str();
    tre_cmd->add_option("--batch", tre.cfg.batch_size, "Batch size")->capture_default_str();
    tre_cmd->add_option("--seed", tre.cfg.seed, "Training seed")->capture_default_str();
    tre_cmd->callback([&] { run_train_recognizer(tre, flags_json(*tre_cmd)); });

    PurifyArgs pur;
    auto* pur_cmd = app.add_subcommand("purify", "Purify every train image of a dataset");
    pur_cmd->add_option("--model", pur.model, "Purifier checkpoint")->required();
    pur_cmd->add_option("--in", pur.in, "Input dataset directory")->required();
    pur_cmd->add_option("--out", pur.out, "Output dataset directory")->required();
    pur_cmd->add_flag("--force", pur.force, "Overwrite a non-empty output directory");
    pur_cmd->callback([&] { run_purify(pur, flags_json(*pur_cmd)); });

    DefendArgs def;
    auto* def_cmd = app.add_subcommand("defend", "Apply a baseline defense to train images");
    def_cmd->add_option("--method", def.method, "Defense method")
        ->check(CLI::IsMember({"magnet", "deflect"}))
        ->capture_default_str();
    def_cmd->add_option("--in", def.in, "Input dataset directory")->required();
    def_cmd->add_option("--out", def.out, "Output dataset directory")->required();
    def_cmd->add_option("--model", def.model, "Pre-trained reformer checkpoint (magnet)");
    def_cmd->add_option("--save-model", def.save_model,
                        "Save the inline-trained reformer here (magnet)");
    def_cmd->add_option("--train-data", def.train_data,
                        "Reformer training dataset (magnet; defaults to --in)");
    def_cmd->add_option("--noise-sigma", def.magnet.noise_sigma, "Training noise stddev")
        ->capture_default_str();
    def_cmd->add_option("--epochs", def.magnet.epochs, "Reformer training epochs")
        ->capture_default_str();
    def_cmd->add_option("--lr", def.magnet.learning_rate, "Reformer learning rate")
        ->capture_default_str();
    def_cmd->add_option("--batch", def.magnet.batch_size, "Reformer batch size")
        ->capture_default_str();
    def_cmd->add_option("--depth", def.magnet.autoencoder.depth, "Autoencoder layers")
        ->capture_default_str();
    def_cmd->add_option("--channels", def.magnet.autoencoder.channels,
                        "Autoencoder feature maps")
        ->capture_default_str();
    def_cmd->add_option("--count", def.count, "Deflection draws")->capture_default_str();
    def_cmd->add_option("--window", def.window, "Deflection window radius")
        ->capture_default_str();
    def_cmd->add_option("--wavelet-sigma", def.sigma, "Wavelet threshold sigma")
        ->capture_default_str();
    def_cmd->add_option("--seed", def.seed, "Defense seed")->capture_default_str();
    def_cmd->add_flag("--force", def.force, "Overwrite a non-empty output directory");
    def_cmd->callback([&] {
        def.magnet.seed = def.seed;
        run_defend(def, flags_json(*def_cmd));
    });

    EvaluateArgs ev;
    auto* ev_cmd = app.add_subcommand("evaluate", "Run one attack/defense/model experiment");
    ev_cmd->add_option("--data", ev.data, "Natural dataset directory")->required();
    ev_cmd->add_option("--extractor", ev.extractor, "Recognition extractor checkpoint")
        ->required();
    ev_cmd->add_option("--out", ev.out, "Report output directory")->required();
    ev_cmd->add_option("--attack", ev.attack, "Attack family")
        ->check(CLI::IsMember({"none", "fawkes", "lowkey"}))
        ->capture_default_str();
    ev_cmd->add_option("--defense", ev.defense, "Defense")
        ->check(CLI::IsMember({"none", "purifier", "magnet", "deflect"}))
        ->capture_default_str();
    ev_cmd->add_option("--model", ev.model, "Recognition model kind")
        ->check(CLI::IsMember({"1nn", "linear", "finetune"}))
        ->capture_default_str();
    ev_cmd->add_option("--purifier", ev.purifier, "Purifier checkpoint");
    ev_cmd->add_option("--magnet", ev.magnet, "Reformer checkpoint");
    ev_cmd->add_option("--attackers", ev.attackers, "Attacker identities per cell")
        ->capture_default_str();
    ev_cmd->add_option("--seed", ev.seed, "Experiment seed")->capture_default_str();
    add_attack_flags(ev_cmd, ev.attack_cfg);
    add_recognition_flags(ev_cmd, ev.rec_cfg);
    ev_cmd->add_option("--deflect-count", ev.deflect_count, "Deflection draws")
        ->capture_default_str();
    ev_cmd->add_option("--deflect-window", ev.deflect_window, "Deflection window radius")
        ->capture_default_str();
    ev_cmd->add_option("--deflect-sigma", ev.deflect_sigma, "Wavelet threshold sigma")
        ->capture_default_str();
    ev_cmd->add_flag("--append", ev.append, "Append to existing report files");
    ev_cmd->callback([&] { run_evaluate(ev, flags_json(*ev_cmd)); });

    SweepArgs sw;
    auto* sw_cmd = app.add_subcommand("sweep-alpha",
                                      "Train purifiers over several amplification factors");
    sw_cmd->add_option("--data", sw.data, "Natural dataset directory")->required();
    sw_cmd->add_option("--extractor", sw.extractor, "Recognition extractor checkpoint")
        ->required();
    sw_cmd->add_option("--feature-extractor", sw.feature_extractor,
                       "Frozen extractor for the purifier feature loss")
        ->required();
    sw_cmd->add_option("--purifier-data", sw.purifier_data,
                       "Defender dataset for purifier training pairs")
        ->required();
    sw_cmd->add_option("--out", sw.out, "Sweep output directory")->required();
    sw_cmd->add_option("--alphas", sw.alphas, "Amplification factors")
        ->delimiter(',')
        ->capture_default_str();
    sw_cmd->add_option("--attack", sw.attack, "Attack family")
        ->check(CLI::IsMember({"fawkes", "lowkey"}))
        ->capture_default_str();
    sw_cmd->add_option("--model", sw.model, "Recognition model kind")
        ->check(CLI::IsMember({"1nn", "linear", "finetune"}))
        ->capture_default_str();
    sw_cmd->add_option("--attackers", sw.attackers, "Attacker identities per cell")
        ->capture_default_str();
    sw_cmd->add_option("--seed", sw.seed, "Experiment seed")->capture_default_str();
    sw_cmd->add_option("--pairs", sw.max_pairs, "Max training pairs (0 = all)")
        ->capture_default_str();
    sw_cmd->add_option("--lambda", sw.train_cfg.lambda, "Feature loss weight")
        ->capture_default_str();
    sw_cmd->add_option("--lr", sw.train_cfg.learning_rate, "Purifier learning rate")
        ->capture_default_str();
    sw_cmd->add_option("--epochs", sw.train_cfg.epochs, "Purifier training epochs")
        ->capture_default_str();
    sw_cmd->add_option("--batch", sw.train_cfg.batch_size, "Purifier batch size")
        ->capture_default_str();
    sw_cmd->add_option("--train-seed", sw.train_cfg.seed, "Purifier training seed")
        ->capture_default_str();
    sw_cmd->add_option("--depth", sw.train_cfg.purifier.depth, "Total conv+deconv layers")
        ->capture_default_str();
    sw_cmd->add_option("--channels", sw.train_cfg.purifier.channels, "Feature maps per layer")
        ->capture_default_str();
    add_attack_flags(sw_cmd, sw.attack_cfg);
    add_recognition_flags(sw_cmd, sw.rec_cfg);
    sw_cmd->callback([&] { run_sweep(sw, flags_json(*sw_cmd)); });

    PcaArgs pca;
    auto* pca_cmd = app.add_subcommand("pca", "Project embeddings onto two components");
    pca_cmd->add_option("--data", pca.data, "Natural dataset directory")->required();
    pca_cmd->add_option("--extractor", pca.extractor, "Extractor checkpoint")->required();
    pca_cmd->add_option("--out", pca.out, "Output CSV path")->required();
    pca_cmd->add_option("--identities", pca.identities, "Identities to project (empty = all)")
        ->delimiter(',');
    pca_cmd->add_option("--cloaked", pca.cloaked, "Cloaked variant dataset directory");
    pca_cmd->callback([&] { run_pca(pca, flags_json(*pca_cmd)); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    } catch (const MissingInput& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
