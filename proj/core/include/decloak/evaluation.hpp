// Copyright (c) 2026 decloak contributors
// SPDX-License-Identifier: Apache-2.0

#ifndef DECLOAK_EVALUATION_HPP
#define DECLOAK_EVALUATION_HPP

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "decloak/attacks.hpp"
#include "decloak/dataset.hpp"
#include "decloak/defenses.hpp"
#include "decloak/extractor.hpp"
#include "decloak/purifier.hpp"
#include "decloak/purifier_training.hpp"
#include "decloak/recognition.hpp"

namespace decloak {

enum class AttackName { none, fawkes, lowkey };
enum class DefenseName { none, purifier, magnet, deflect };

std::string to_string(AttackName v);
std::string to_string(DefenseName v);
AttackName attack_from_string(const std::string& s);
DefenseName defense_from_string(const std::string& s);

/// How far defended train images drift from the pristine originals, split by
/// whether the image had been cloaked. Features come from the recognition
/// extractor.
struct DistortionReport {
    double image_distortion_natural = 0.0;
    double image_distortion_cloaked = 0.0;
    double feature_loss_natural = 0.0;
    double feature_loss_cloaked = 0.0;
};

struct ExperimentReport {
    std::string attack;
    std::string defense;
    std::string model;
    int num_attackers = 0;
    std::uint64_t seed = 0;
    double attack_success_rate = 0.0;
    double normal_accuracy = 0.0;
    DistortionReport distortion;
    std::vector<std::string> attacker_ids;
    std::vector<double> per_attacker_success;
};

/// Fraction of the attacker's natural test images the model does NOT assign
/// to the attacker.
double attack_success_rate(const RecognitionModel& m, const std::string& attacker,
                           const IdentityDataset& natural);

/// Accuracy on the natural test images of every other identity.
double normal_accuracy(const RecognitionModel& m, const std::string& attacker,
                       const IdentityDataset& natural);

/// Everything an experiment needs. attack_models defaults to {recognizer}
/// when empty; purifier/magnet are only required by the matching defense.
struct EvaluationContext {
    const IdentityDataset* dataset = nullptr;
    const ExtractorModel* recognizer = nullptr;
    std::vector<const ExtractorModel*> attack_models;
    const PurifierModel* purifier = nullptr;
    const PurifierModel* magnet = nullptr;
    AttackConfig attack;
    RecognitionTrainConfig recognition;
    int deflect_count = 200;
    int deflect_window = 10;
    double deflect_sigma = 0.04;

    void validate() const;
};

/// One attack/defense/model cell: per attacker, cloak that identity's train
/// images, run the defense over every train image, retrain the recognizer,
/// and measure on natural test data. Results are averaged over attackers
/// chosen deterministically from the seed.
ExperimentReport run_experiment(const EvaluationContext& ctx, AttackName attack,
                                DefenseName defense, RecognitionKind model, int num_attackers,
                                std::uint64_t seed);

/// Same cells for several defenses, computing each attacker's cloaked dataset
/// once. Reports match run_experiment for every defense bit for bit.
std::vector<ExperimentReport> run_experiment_suite(const EvaluationContext& ctx,
                                                   AttackName attack,
                                                   const std::vector<DefenseName>& defenses,
                                                   RecognitionKind model, int num_attackers,
                                                   std::uint64_t seed);

struct AlphaSweepPoint {
    double alpha = 0.0;
    ExperimentReport report;
};

/// Trains one purifier per amplification factor on the same pairs and runs
/// the purifier defense cell for each.
std::vector<AlphaSweepPoint> alpha_sweep(const EvaluationContext& ctx,
                                         const std::vector<double>& alphas,
                                         const std::vector<PurifierTrainPair>& pairs,
                                         const ExtractorModel& fx,
                                         const PurifierTrainConfig& base, AttackName attack,
                                         RecognitionKind model, int num_attackers,
                                         std::uint64_t seed);

struct PcaPoint {
    double x = 0.0;
    double y = 0.0;
    std::string identity;
    std::string group;  // train_natural / test_natural / train_cloaked
};

struct PcaProjection {
    std::vector<PcaPoint> points;
    std::array<double, 2> component_variance{};
};

/// Projects embeddings of the selected identities (all when empty) onto the
/// top two principal components. Eigenvector signs are fixed by making each
/// component's first nonzero loading positive.
PcaProjection pca_diagnostic(const ExtractorModel& extractor, const IdentityDataset& natural,
                             const IdentityDataset* cloaked,
                             const std::vector<std::string>& identities);

void write_reports_jsonl(const std::vector<ExperimentReport>& reports,
                         const std::filesystem::path& path, const std::string& provenance_json,
                         bool append);
void write_reports_csv(const std::vector<ExperimentReport>& reports,
                       const std::filesystem::path& path, bool append);
void write_sweep_jsonl(const std::vector<AlphaSweepPoint>& points,
                       const std::filesystem::path& path, const std::string& provenance_json);
void write_sweep_csv(const std::vector<AlphaSweepPoint>& points,
                     const std::filesystem::path& path);
void write_pca_csv(const PcaProjection& proj, const std::filesystem::path& path);

}  // namespace decloak

#endif  // DECLOAK_EVALUATION_HPP
