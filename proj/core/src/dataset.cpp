// Copyright (c) 2026 decloak contributors
// SPDX-License-Identifier: Apache-2.0

#include "decloak/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "decloak/rng.hpp"

namespace decloak {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr const char* kManifestName = "manifest.json";

Image mat_to_image(const cv::Mat& bgr) {
    Tensor px({3, static_cast<std::size_t>(bgr.rows), static_cast<std::size_t>(bgr.cols)});
    for (int y = 0; y < bgr.rows; ++y) {
        const auto* row = bgr.ptr<cv::Vec3b>(y);
        for (int x = 0; x < bgr.cols; ++x) {
            // BGR byte order on disk, RGB channel order in memory.
            px.at(0, y, x) = row[x][2] / 255.0;
            px.at(1, y, x) = row[x][1] / 255.0;
            px.at(2, y, x) = row[x][0] / 255.0;
        }
    }
    return Image(std::move(px));
}

cv::Mat image_to_mat(const Image& img) {
    const int h = static_cast<int>(img.height());
    const int w = static_cast<int>(img.width());
    cv::Mat bgr(h, w, CV_8UC3);
    for (int y = 0; y < h; ++y) {
        auto* row = bgr.ptr<cv::Vec3b>(y);
        for (int x = 0; x < w; ++x) {
            for (int c = 0; c < 3; ++c) {
                double v = std::lround(255.0 * img.at(c, y, x));
                v = std::min(255.0, std::max(0.0, v));
                row[x][2 - c] = static_cast<unsigned char>(v);
            }
        }
    }
    return bgr;
}

void write_png(const Image& img, const fs::path& path) {
    if (!cv::imwrite(path.string(), image_to_mat(img), {cv::IMWRITE_PNG_COMPRESSION, 6})) {
        throw std::runtime_error("failed to write image: " + path.string());
    }
}

Image resize_image(const Image& img, int target) {
    if (static_cast<int>(img.height()) == target && static_cast<int>(img.width()) == target) {
        return img;
    }
    cv::Mat src = image_to_mat(img);
    cv::Mat dst;
    cv::resize(src, dst, cv::Size(target, target), 0, 0, cv::INTER_AREA);
    return mat_to_image(dst);
}

/// Bilinear upsample of a GxG grid (align-corners) to an SxS field.
void upsample_grid(const std::vector<double>& grid, int g, int s, int channel, Tensor& out) {
    for (int y = 0; y < s; ++y) {
        double gy = (s == 1) ? 0.0 : static_cast<double>(y) * (g - 1) / (s - 1);
        int y0 = std::min(static_cast<int>(gy), g - 2);
        double fy = gy - y0;
        for (int x = 0; x < s; ++x) {
            double gx = (s == 1) ? 0.0 : static_cast<double>(x) * (g - 1) / (s - 1);
            int x0 = std::min(static_cast<int>(gx), g - 2);
            double fx = gx - x0;
            double v00 = grid[static_cast<std::size_t>(y0) * g + x0];
            double v01 = grid[static_cast<std::size_t>(y0) * g + x0 + 1];
            double v10 = grid[(static_cast<std::size_t>(y0) + 1) * g + x0];
            double v11 = grid[(static_cast<std::size_t>(y0) + 1) * g + x0 + 1];
            out.at(static_cast<std::size_t>(channel), y, x) =
                (1 - fy) * ((1 - fx) * v00 + fx * v01) + fy * ((1 - fx) * v10 + fx * v11);
        }
    }
}

std::string identity_name(int index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "id_%03d", index);
    return buf;
}

std::string image_name(int index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "img_%03d.png", index);
    return buf;
}

void fnv_bytes(std::uint64_t& h, const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
    }
}

}  // namespace

std::vector<std::string> IdentityDataset::identities() const {
    std::set<std::string> ids;
    for (const auto& e : entries) ids.insert(e.identity);
    return {ids.begin(), ids.end()};
}

bool IdentityDataset::has_identity(const std::string& id) const {
    return std::any_of(entries.begin(), entries.end(),
                       [&](const DatasetEntry& e) { return e.identity == id; });
}

std::vector<std::size_t> IdentityDataset::train_of(const std::string& id) const {
    std::vector<std::size_t> out;
    for (std::size_t i : train_idx)
        if (entries[i].identity == id) out.push_back(i);
    return out;
}

std::vector<std::size_t> IdentityDataset::test_of(const std::string& id) const {
    std::vector<std::size_t> out;
    for (std::size_t i : test_idx)
        if (entries[i].identity == id) out.push_back(i);
    return out;
}

void IdentityDataset::validate() const {
    if (entries.empty()) throw std::invalid_argument("dataset is empty");
    if (image_size < 8) throw std::invalid_argument("dataset image size must be >= 8");
    std::vector<char> seen(entries.size(), 0);
    for (std::size_t i : train_idx) {
        if (i >= entries.size() || seen[i]) throw std::invalid_argument("bad train index");
        seen[i] = 1;
    }
    for (std::size_t i : test_idx) {
        if (i >= entries.size() || seen[i]) throw std::invalid_argument("bad test index");
        seen[i] = 1;
    }
    if (static_cast<std::size_t>(std::count(seen.begin(), seen.end(), 1)) != entries.size()) {
        throw std::invalid_argument("split does not cover all entries");
    }
    for (const auto& e : entries) {
        if (e.image.height() != image_size || e.image.width() != image_size) {
            throw std::invalid_argument("mixed image sizes in dataset");
        }
        e.image.validate();
    }
    for (const auto& id : identities()) {
        if (train_of(id).size() < 2 || test_of(id).empty()) {
            throw std::invalid_argument("identity '" + id +
                                        "' needs >= 2 train and >= 1 test images");
        }
    }
}

std::uint64_t IdentityDataset::fingerprint() const {
    std::uint64_t h = 1469598103934665603ULL;
    std::uint64_t sz = image_size;
    fnv_bytes(h, &sz, sizeof(sz));
    for (const auto& e : entries) {
        fnv_bytes(h, e.identity.data(), e.identity.size());
        fnv_bytes(h, e.image.px.data(), e.image.px.size() * sizeof(double));
    }
    for (std::size_t i : train_idx) fnv_bytes(h, &i, sizeof(i));
    for (std::size_t i : test_idx) fnv_bytes(h, &i, sizeof(i));
    return h;
}

void SynthIdentitySpec::validate() const {
    if (num_identities < 2) throw std::invalid_argument("need at least 2 identities");
    if (images_per_identity < 4) throw std::invalid_argument("need at least 4 images per identity");
    if (image_size < 8) throw std::invalid_argument("image_size must be >= 8");
    if (!(jitter_scale >= 0.0 && jitter_scale <= 1.0)) {
        throw std::invalid_argument("jitter_scale must be in [0, 1]");
    }
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
        throw std::invalid_argument("train_fraction must be in (0, 1)");
    }
}

IdentityDataset generate_synthetic(const SynthIdentitySpec& spec) {
    spec.validate();
    const int s = spec.image_size;
    const int base_grid = std::clamp(s / 8, 2, 16);
    const int noise_grid = std::clamp(s / 4, 2, 32);

    IdentityDataset ds;
    ds.image_size = static_cast<std::size_t>(s);
    Rng root(spec.seed);
    for (int id = 0; id < spec.num_identities; ++id) {
        Rng id_rng = root.fork(static_cast<std::uint64_t>(id));
        std::vector<double> base(static_cast<std::size_t>(base_grid) * base_grid);
        Tensor base_field({3, static_cast<std::size_t>(s), static_cast<std::size_t>(s)});
        for (int c = 0; c < 3; ++c) {
            for (auto& v : base) v = id_rng.uniform();
            upsample_grid(base, base_grid, s, c, base_field);
        }
        for (int k = 0; k < spec.images_per_identity; ++k) {
            Rng img_rng = id_rng.fork(1000 + static_cast<std::uint64_t>(k));
            Tensor px = base_field;
            if (spec.jitter_scale > 0.0) {
                std::vector<double> noise(static_cast<std::size_t>(noise_grid) * noise_grid);
                Tensor noise_field(
                    {3, static_cast<std::size_t>(s), static_cast<std::size_t>(s)});
                for (int c = 0; c < 3; ++c) {
                    for (auto& v : noise) v = img_rng.normal();
                    upsample_grid(noise, noise_grid, s, c, noise_field);
                }
                px.axpy(spec.jitter_scale, noise_field);
            }
            px = clip_unit(px);
            DatasetEntry e;
            e.image = Image(std::move(px));
            e.identity = identity_name(id);
            e.file = e.identity + "/" + image_name(k);
            ds.entries.push_back(std::move(e));
        }
    }
    ds = split(ds, spec.train_fraction, mix_seed(spec.seed, 0x5917));
    ds.validate();
    return ds;
}

IdentityDataset split(const IdentityDataset& ds, double train_fraction, std::uint64_t seed) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
        throw std::invalid_argument("train_fraction must be in (0, 1)");
    }
    IdentityDataset out = ds;
    out.train_idx.clear();
    out.test_idx.clear();
    Rng rng(seed);
    for (const auto& id : ds.identities()) {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < ds.entries.size(); ++i) {
            if (ds.entries[i].identity == id) idx.push_back(i);
        }
        if (idx.size() < 3) {
            throw std::invalid_argument("identity '" + id + "' has fewer than 3 images");
        }
        // Seeded Fisher-Yates; one fork per identity keeps the shuffle stable
        // under identity insertion order.
        Rng id_rng = rng.fork(std::hash<std::string>{}(id));
        for (std::size_t i = idx.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(
                id_rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
            std::swap(idx[i - 1], idx[j]);
        }
        auto n_train = static_cast<std::size_t>(
            std::floor(static_cast<double>(idx.size()) * train_fraction));
        n_train = std::max<std::size_t>(n_train, 2);
        if (n_train >= idx.size()) n_train = idx.size() - 1;
        for (std::size_t k = 0; k < idx.size(); ++k) {
            (k < n_train ? out.train_idx : out.test_idx).push_back(idx[k]);
        }
    }
    std::sort(out.train_idx.begin(), out.train_idx.end());
    std::sort(out.test_idx.begin(), out.test_idx.end());
    return out;
}

namespace {

IdentityDataset load_with_manifest(const fs::path& root, const json& manifest, int image_size) {
    IdentityDataset ds;
    int target = image_size > 0 ? image_size : manifest.at("image_size").get<int>();
    ds.image_size = static_cast<std::size_t>(target);
    const auto& ids = manifest.at("identities");
    for (auto it = ids.begin(); it != ids.end(); ++it) {
        const std::string id = it.key();
        for (const char* part : {"train", "test"}) {
            for (const auto& name : it.value().at(part)) {
                fs::path p = root / id / name.get<std::string>();
                cv::Mat m = cv::imread(p.string(), cv::IMREAD_COLOR);
                if (m.empty()) {
                    ++ds.load_warnings;
                    continue;
                }
                DatasetEntry e;
                e.image = resize_image(mat_to_image(m), target);
                e.identity = id;
                e.file = id + "/" + name.get<std::string>();
                std::size_t pos = ds.entries.size();
                ds.entries.push_back(std::move(e));
                (std::strcmp(part, "train") == 0 ? ds.train_idx : ds.test_idx).push_back(pos);
            }
        }
    }
    return ds;
}

}  // namespace

IdentityDataset load_directory(const fs::path& root, int image_size, int min_images) {
    if (!fs::is_directory(root)) {
        throw std::invalid_argument("dataset root does not exist: " + root.string());
    }
    fs::path manifest_path = root / kManifestName;
    if (fs::exists(manifest_path)) {
        std::ifstream in(manifest_path);
        json manifest = json::parse(in);
        IdentityDataset ds = load_with_manifest(root, manifest, image_size);
        if (ds.entries.empty()) {
            throw std::invalid_argument("dataset root has no decodable images: " + root.string());
        }
        ds.validate();
        return ds;
    }

    std::vector<std::string> ids;
    for (const auto& d : fs::directory_iterator(root)) {
        if (d.is_directory()) ids.push_back(d.path().filename().string());
    }
    std::sort(ids.begin(), ids.end());

    IdentityDataset ds;
    int native = 0;
    for (const auto& id : ids) {
        std::vector<fs::path> files;
        for (const auto& f : fs::directory_iterator(root / id)) {
            if (f.is_regular_file()) files.push_back(f.path());
        }
        std::sort(files.begin(), files.end());
        std::vector<DatasetEntry> batch;
        for (const auto& p : files) {
            cv::Mat m = cv::imread(p.string(), cv::IMREAD_COLOR);
            if (m.empty()) {
                ++ds.load_warnings;
                continue;
            }
            if (image_size <= 0) {
                if (native == 0) native = m.rows;
                if (m.rows != m.cols || m.rows != native) {
                    throw std::invalid_argument(
                        "mixed image sizes; pass an explicit image size");
                }
            }
            DatasetEntry e;
            e.image = mat_to_image(m);
            if (image_size > 0) e.image = resize_image(e.image, image_size);
            e.identity = id;
            e.file = id + "/" + p.filename().string();
            batch.push_back(std::move(e));
        }
        if (batch.size() < static_cast<std::size_t>(min_images)) {
            if (!batch.empty()) ++ds.load_warnings;
            continue;
        }
        for (auto& e : batch) ds.entries.push_back(std::move(e));
    }
    if (ds.entries.empty()) {
        throw std::invalid_argument("dataset root has no decodable images: " + root.string());
    }
    ds.image_size = ds.entries.front().image.height();
    IdentityDataset out = split(ds, 0.7, 0);
    out.validate();
    return out;
}

namespace {

json manifest_for(const IdentityDataset& ds, const std::string& provenance_json) {
    json ids = json::object();
    for (const auto& id : ds.identities()) {
        json train = json::array();
        json test = json::array();
        for (std::size_t i : ds.train_of(id)) {
            train.push_back(fs::path(ds.entries[i].file).filename().string());
        }
        for (std::size_t i : ds.test_of(id)) {
            test.push_back(fs::path(ds.entries[i].file).filename().string());
        }
        ids[id] = {{"train", train}, {"test", test}};
    }
    json manifest = {
        {"format", "decloak-dataset"},
        {"version", 1},
        {"image_size", ds.image_size},
        {"load_warnings", ds.load_warnings},
        {"identities", ids},
    };
    if (!provenance_json.empty()) {
        manifest["provenance"] = json::parse(provenance_json);
    }
    return manifest;
}

void write_manifest(const json& manifest, const fs::path& root) {
    std::ofstream out(root / kManifestName, std::ios::binary);
    out << manifest.dump(2) << "\n";
    if (!out) throw std::runtime_error("failed to write manifest in " + root.string());
}

void assign_missing_file_names(IdentityDataset& ds) {
    std::map<std::string, int> counters;
    for (auto& e : ds.entries) {
        if (e.file.empty()) {
            e.file = e.identity + "/" + image_name(counters[e.identity]++);
        }
    }
}

}  // namespace

void export_dataset(const IdentityDataset& ds, const fs::path& root,
                    const std::string& provenance_json) {
    ds.validate();
    IdentityDataset named = ds;
    assign_missing_file_names(named);
    fs::create_directories(root);
    for (const auto& id : named.identities()) fs::create_directories(root / id);
    for (const auto& e : named.entries) write_png(e.image, root / e.file);
    write_manifest(manifest_for(named, provenance_json), root);
}

void export_cloaked_dataset(const IdentityDataset& cloaked, const IdentityDataset& natural,
                            const fs::path& natural_root, const fs::path& out_root,
                            double epsilon, const std::string& provenance_json) {
    if (cloaked.entries.size() != natural.entries.size()) {
        throw std::invalid_argument("cloaked/natural datasets differ in size");
    }
    if (!(epsilon > 0.0)) throw std::invalid_argument("epsilon must be positive");
    const int byte_budget = static_cast<int>(std::floor(255.0 * epsilon));
    fs::create_directories(out_root);
    for (const auto& id : cloaked.identities()) fs::create_directories(out_root / id);
    for (std::size_t i = 0; i < cloaked.entries.size(); ++i) {
        const auto& ce = cloaked.entries[i];
        const auto& ne = natural.entries[i];
        if (ce.file != ne.file || ce.file.empty()) {
            throw std::invalid_argument("cloaked/natural file lists do not match");
        }
        if (ce.image.px == ne.image.px) {
            fs::copy_file(natural_root / ne.file, out_root / ce.file,
                          fs::copy_options::overwrite_existing);
            continue;
        }
        // Quantize the natural image back to bytes, then clamp the cloak's
        // byte delta so the exported file respects the pixel budget exactly.
        const std::size_t h = ce.image.height();
        const std::size_t w = ce.image.width();
        cv::Mat bgr(static_cast<int>(h), static_cast<int>(w), CV_8UC3);
        for (std::size_t y = 0; y < h; ++y) {
            auto* row = bgr.ptr<cv::Vec3b>(static_cast<int>(y));
            for (std::size_t x = 0; x < w; ++x) {
                for (int c = 0; c < 3; ++c) {
                    auto nat = static_cast<int>(std::lround(255.0 * ne.image.at(c, y, x)));
                    auto delta = static_cast<int>(
                        std::lround(255.0 * (ce.image.at(c, y, x) - ne.image.at(c, y, x))));
                    delta = std::clamp(delta, -byte_budget, byte_budget);
                    int v = std::clamp(nat + delta, 0, 255);
                    row[x][2 - c] = static_cast<unsigned char>(v);
                }
            }
        }
        if (!cv::imwrite((out_root / ce.file).string(), bgr,
                         {cv::IMWRITE_PNG_COMPRESSION, 6})) {
            throw std::runtime_error("failed to write image: " + (out_root / ce.file).string());
        }
    }
    write_manifest(manifest_for(cloaked, provenance_json), out_root);
}

}  // namespace decloak
