// Copyright (c) 2026 decloak contributors
// SPDX-License-Identifier: Apache-2.0

#ifndef DECLOAK_CHECKPOINT_HPP
#define DECLOAK_CHECKPOINT_HPP

#include <filesystem>
#include <string>

#include "decloak/extractor.hpp"
#include "decloak/purifier.hpp"
#include "decloak/recognition.hpp"

namespace decloak {

/// Checkpoint container: magic "DCLKCKPT", u32 version, u64 JSON header
/// length, the JSON header (kind, config, metadata, tensor table), then every
/// tensor's doubles in table order, little endian. Round-trips bit for bit.
///
/// provenance_json, when non-empty, is parsed and stored in the header so a
/// checkpoint records the exact flags that produced it.

void save_extractor(const ExtractorModel& m, const std::filesystem::path& path,
                    const std::string& provenance_json = "");
ExtractorModel load_extractor(const std::filesystem::path& path);

void save_purifier(const PurifierModel& m, const std::filesystem::path& path,
                   const std::string& provenance_json = "");
PurifierModel load_purifier(const std::filesystem::path& path);

void save_recognizer(const RecognitionModel& m, const std::filesystem::path& path,
                     const std::string& provenance_json = "");
RecognitionModel load_recognizer(const std::filesystem::path& path);

/// Reads just the header's kind field ("extractor", "purifier", "recognizer").
std::string checkpoint_kind(const std::filesystem::path& path);

}  // namespace decloak

#endif  // DECLOAK_CHECKPOINT_HPP
