// Copyright (c) 2026 decloak contributors
// SPDX-License-Identifier: Apache-2.0

#ifndef DECLOAK_DATASET_HPP
#define DECLOAK_DATASET_HPP

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "decloak/image.hpp"

namespace decloak {

struct DatasetEntry {
    Image image;
    std::string identity;
    std::string file;  // relative path "identity/name.png"; empty for in-memory data
};

/// Identity-labeled image collection with a per-identity train/test split.
/// Immutable by convention once constructed; all images share one size >= 8.
struct IdentityDataset {
    std::vector<DatasetEntry> entries;
    std::vector<std::size_t> train_idx;
    std::vector<std::size_t> test_idx;
    std::size_t image_size = 0;
    int load_warnings = 0;

    std::size_t size() const { return entries.size(); }

    /// Sorted unique identity labels.
    std::vector<std::string> identities() const;
    bool has_identity(const std::string& id) const;
    std::vector<std::size_t> train_of(const std::string& id) const;
    std::vector<std::size_t> test_of(const std::string& id) const;

    /// Checks the partition property and per-identity minimums; throws on violation.
    void validate() const;

    /// FNV-1a over image bytes, labels and split; used as checkpoint metadata.
    std::uint64_t fingerprint() const;
};

struct SynthIdentitySpec {
    int num_identities = 10;
    int images_per_identity = 20;
    int image_size = 32;
    double jitter_scale = 0.15;
    std::uint64_t seed = 1;
    double train_fraction = 0.7;

    void validate() const;
};

/// Deterministic synthetic identities: per identity a seeded smooth random
/// base field; each image adds jitter_scale times a per-image smooth noise
/// field, clipped to [0,1]. Same spec -> bit-identical dataset.
IdentityDataset generate_synthetic(const SynthIdentitySpec& spec);

/// Re-split per identity: floor(n * train_fraction) train images (minimum 2),
/// rest test, selection shuffled deterministically by seed.
IdentityDataset split(const IdentityDataset& ds, double train_fraction, std::uint64_t seed = 0);

/// Load `root/<identity>/<image files>` (PNG/JPEG). Images are resized to
/// image_size when > 0 (otherwise the manifest size or the native size is
/// used). Undecodable files are skipped and counted in load_warnings.
/// Identities with fewer than min_images images are skipped with a warning.
/// The split comes from manifest.json when present, else split(0.7, seed 0).
IdentityDataset load_directory(const std::filesystem::path& root, int image_size = 0,
                               int min_images = 3);

/// Write the dataset directory layout plus manifest.json recording the split
/// and provenance (a serialized JSON object; may be empty).
void export_dataset(const IdentityDataset& ds, const std::filesystem::path& root,
                    const std::string& provenance_json = "");

/// Export a cloaked copy of a natural tree. Unchanged images are copied
/// byte-for-byte. Changed images are written so the on-disk 8-bit delta per
/// pixel never exceeds floor(255*epsilon); requires the natural dataset to
/// have been loaded from 8-bit files (pixels on the 1/255 grid).
void export_cloaked_dataset(const IdentityDataset& cloaked, const IdentityDataset& natural,
                            const std::filesystem::path& natural_root,
                            const std::filesystem::path& out_root, double epsilon,
                            const std::string& provenance_json = "");

}  // namespace decloak

#endif  // DECLOAK_DATASET_HPP
