// Copyright (c) 2026 decloak contributors
// SPDX-License-Identifier: Apache-2.0

#include "decloak/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>
#include <utility>
#include <vector>

#include <json.hpp>

namespace decloak {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr char kMagic[8] = {'D', 'C', 'L', 'K', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

void put_u64(std::ostream& out, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 8);
}

void put_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint64_t get_u64(std::istream& in) {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

std::uint32_t get_u32(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

void put_doubles(std::ostream& out, const double* p, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        std::uint64_t bits;
        std::memcpy(&bits, &p[i], 8);
        put_u64(out, bits);
    }
}

void get_doubles(std::istream& in, double* p, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        std::uint64_t bits = get_u64(in);
        std::memcpy(&p[i], &bits, 8);
    }
}

using NamedTensor = std::pair<std::string, const Tensor*>;

void write_checkpoint(const fs::path& path, json header,
                      const std::vector<NamedTensor>& tensors) {
    json table = json::array();
    for (const auto& [name, t] : tensors) {
        table.push_back({{"name", name}, {"shape", t->shape()}});
    }
    header["tensors"] = table;
    const std::string text = header.dump();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
    out.write(kMagic, sizeof(kMagic));
    put_u32(out, kVersion);
    put_u64(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, t] : tensors) put_doubles(out, t->data(), t->size());
    if (!out) throw std::runtime_error("failed writing " + path.string());
}

json read_header(std::istream& in, const fs::path& path) {
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw std::runtime_error("not a checkpoint file: " + path.string());
    }
    std::uint32_t version = get_u32(in);
    if (version != kVersion) {
        throw std::runtime_error("unsupported checkpoint version in " + path.string());
    }
    std::uint64_t len = get_u64(in);
    std::string text(len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(len));
    if (!in) throw std::runtime_error("truncated checkpoint: " + path.string());
    return json::parse(text);
}

/// Reads tensors in table order into the destinations mapped by name.
void read_tensors(std::istream& in, const json& header,
                  const std::vector<std::pair<std::string, Tensor*>>& dests,
                  const fs::path& path) {
    std::vector<std::pair<std::string, Tensor*>> remaining = dests;
    for (const auto& row : header.at("tensors")) {
        const std::string name = row.at("name").get<std::string>();
        std::vector<std::size_t> shape = row.at("shape").get<std::vector<std::size_t>>();
        Tensor* dst = nullptr;
        for (auto it = remaining.begin(); it != remaining.end(); ++it) {
            if (it->first == name) {
                dst = it->second;
                remaining.erase(it);
                break;
            }
        }
        if (!dst) throw std::runtime_error("unexpected tensor '" + name + "' in " + path.string());
        *dst = Tensor(shape, 0.0);
        get_doubles(in, dst->data(), dst->size());
    }
    if (!remaining.empty()) {
        throw std::runtime_error("missing tensor '" + remaining.front().first + "' in " +
                                 path.string());
    }
    if (!in) throw std::runtime_error("truncated checkpoint: " + path.string());
}

json extractor_config_json(const ExtractorConfig& cfg) {
    return json{{"image_size", cfg.image_size},     {"channels", cfg.channels},
                {"embed_dim", cfg.embed_dim},       {"epochs", cfg.epochs},
                {"learning_rate", cfg.learning_rate}, {"batch_size", cfg.batch_size},
                {"seed", cfg.seed}};
}

ExtractorConfig extractor_config_from_json(const json& j) {
    ExtractorConfig cfg;
    cfg.image_size = j.at("image_size").get<int>();
    cfg.channels = j.at("channels").get<std::vector<int>>();
    cfg.embed_dim = j.at("embed_dim").get<int>();
    cfg.epochs = j.at("epochs").get<int>();
    cfg.learning_rate = j.at("learning_rate").get<double>();
    cfg.batch_size = j.at("batch_size").get<int>();
    cfg.seed = j.at("seed").get<std::uint64_t>();
    return cfg;
}

json extractor_header(const ExtractorModel& m, const std::string& kind) {
    return json{{"kind", kind},
                {"config", extractor_config_json(m.cfg)},
                {"labels", m.labels},
                {"dataset_fingerprint", m.dataset_fingerprint},
                {"final_train_accuracy", m.final_train_accuracy}};
}

std::vector<NamedTensor> extractor_tensors(const ExtractorModel& m, const std::string& prefix) {
    std::vector<NamedTensor> out;
    for (std::size_t i = 0; i < m.convs.size(); ++i) {
        out.emplace_back(prefix + "conv" + std::to_string(i) + ".W", &m.convs[i].W);
        out.emplace_back(prefix + "conv" + std::to_string(i) + ".b", &m.convs[i].b);
    }
    out.emplace_back(prefix + "embed_head.W", &m.embed_head.W);
    out.emplace_back(prefix + "embed_head.b", &m.embed_head.b);
    out.emplace_back(prefix + "class_head.W", &m.class_head.W);
    out.emplace_back(prefix + "class_head.b", &m.class_head.b);
    return out;
}

/// Rebuilds layer geometry from the config; tensor loads overwrite weights.
ExtractorModel extractor_from_header(const json& header) {
    ExtractorModel m;
    m.cfg = extractor_config_from_json(header.at("config"));
    m.labels = header.at("labels").get<std::vector<std::string>>();
    m.dataset_fingerprint = header.at("dataset_fingerprint").get<std::uint64_t>();
    m.final_train_accuracy = header.at("final_train_accuracy").get<double>();
    int in_ch = 3;
    for (int out_ch : m.cfg.channels) {
        m.convs.emplace_back(in_ch, out_ch, 3, 1, 1);
        in_ch = out_ch;
    }
    m.embed_head = nn::Linear(in_ch, m.cfg.embed_dim);
    m.class_head = nn::Linear(m.cfg.embed_dim, static_cast<int>(std::max<std::size_t>(
                                                   m.labels.size(), 2)));
    return m;
}

std::vector<std::pair<std::string, Tensor*>> extractor_dests(ExtractorModel& m,
                                                             const std::string& prefix) {
    std::vector<std::pair<std::string, Tensor*>> out;
    for (std::size_t i = 0; i < m.convs.size(); ++i) {
        out.emplace_back(prefix + "conv" + std::to_string(i) + ".W", &m.convs[i].W);
        out.emplace_back(prefix + "conv" + std::to_string(i) + ".b", &m.convs[i].b);
    }
    out.emplace_back(prefix + "embed_head.W", &m.embed_head.W);
    out.emplace_back(prefix + "embed_head.b", &m.embed_head.b);
    out.emplace_back(prefix + "class_head.W", &m.class_head.W);
    out.emplace_back(prefix + "class_head.b", &m.class_head.b);
    return out;
}

json purifier_header(const PurifierModel& m) {
    json log = json::array();
    for (const auto& r : m.train_log) {
        log.push_back({{"epoch", r.epoch},
                       {"image_loss", r.image_loss},
                       {"feature_loss", r.feature_loss},
                       {"total_loss", r.total_loss}});
    }
    return json{{"kind", "purifier"},
                {"config",
                 {{"image_size", m.cfg.image_size},
                  {"channels", m.cfg.channels},
                  {"depth", m.cfg.depth},
                  {"skip_interval", m.cfg.skip_interval},
                  {"seed", m.cfg.seed}}},
                {"dataset_fingerprint", m.dataset_fingerprint},
                {"train_log", log}};
}

PurifierModel purifier_from_header(const json& header) {
    const json& c = header.at("config");
    PurifierConfig cfg;
    cfg.image_size = c.at("image_size").get<int>();
    cfg.channels = c.at("channels").get<int>();
    cfg.depth = c.at("depth").get<int>();
    cfg.skip_interval = c.at("skip_interval").get<int>();
    cfg.seed = c.at("seed").get<std::uint64_t>();
    PurifierModel m = build_purifier(cfg);
    m.dataset_fingerprint = header.at("dataset_fingerprint").get<std::uint64_t>();
    for (const auto& r : header.at("train_log")) {
        PurifierTrainRecord rec;
        rec.epoch = r.at("epoch").get<int>();
        rec.image_loss = r.at("image_loss").get<double>();
        rec.feature_loss = r.at("feature_loss").get<double>();
        rec.total_loss = r.at("total_loss").get<double>();
        m.train_log.push_back(rec);
    }
    return m;
}

std::string expect_kind(const json& header, const std::string& kind, const fs::path& path) {
    std::string actual = header.at("kind").get<std::string>();
    if (actual != kind) {
        throw std::runtime_error("checkpoint " + path.string() + " holds a '" + actual +
                                 "' model, expected '" + kind + "'");
    }
    return actual;
}

void sync_linear_dims(nn::Linear& l) {
    l.out_dim = static_cast<int>(l.W.dim(0));
    l.in_dim = static_cast<int>(l.W.dim(1));
}

}  // namespace

void save_extractor(const ExtractorModel& m, const fs::path& path,
                    const std::string& provenance_json) {
    json header = extractor_header(m, "extractor");
    if (!provenance_json.empty()) header["provenance"] = json::parse(provenance_json);
    write_checkpoint(path, std::move(header), extractor_tensors(m, ""));
}

ExtractorModel load_extractor(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path.string());
    json header = read_header(in, path);
    expect_kind(header, "extractor", path);
    ExtractorModel m = extractor_from_header(header);
    read_tensors(in, header, extractor_dests(m, ""), path);
    sync_linear_dims(m.embed_head);
    sync_linear_dims(m.class_head);
    return m;
}

void save_purifier(const PurifierModel& m, const fs::path& path,
                   const std::string& provenance_json) {
    json header = purifier_header(m);
    if (!provenance_json.empty()) header["provenance"] = json::parse(provenance_json);
    std::vector<NamedTensor> tensors;
    for (std::size_t i = 0; i < m.convs.size(); ++i) {
        tensors.emplace_back("conv" + std::to_string(i) + ".W", &m.convs[i].W);
        tensors.emplace_back("conv" + std::to_string(i) + ".b", &m.convs[i].b);
    }
    for (std::size_t j = 0; j < m.deconvs.size(); ++j) {
        tensors.emplace_back("deconv" + std::to_string(j) + ".W", &m.deconvs[j].W);
        tensors.emplace_back("deconv" + std::to_string(j) + ".b", &m.deconvs[j].b);
    }
    write_checkpoint(path, std::move(header), tensors);
}

PurifierModel load_purifier(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path.string());
    json header = read_header(in, path);
    expect_kind(header, "purifier", path);
    PurifierModel m = purifier_from_header(header);
    std::vector<std::pair<std::string, Tensor*>> dests;
    for (std::size_t i = 0; i < m.convs.size(); ++i) {
        dests.emplace_back("conv" + std::to_string(i) + ".W", &m.convs[i].W);
        dests.emplace_back("conv" + std::to_string(i) + ".b", &m.convs[i].b);
    }
    for (std::size_t j = 0; j < m.deconvs.size(); ++j) {
        dests.emplace_back("deconv" + std::to_string(j) + ".W", &m.deconvs[j].W);
        dests.emplace_back("deconv" + std::to_string(j) + ".b", &m.deconvs[j].b);
    }
    read_tensors(in, header, dests, path);
    return m;
}

void save_recognizer(const RecognitionModel& m, const fs::path& path,
                     const std::string& provenance_json) {
    json header{{"kind", "recognizer"},
                {"recognizer_kind", to_string(m.kind)},
                {"labels", m.labels},
                {"ref_labels", m.ref_labels},
                {"backbone", extractor_header(m.backbone, "extractor")}};
    if (!provenance_json.empty()) header["provenance"] = json::parse(provenance_json);

    std::vector<NamedTensor> tensors = extractor_tensors(m.backbone, "backbone.");
    Tensor refs;
    if (m.kind == RecognitionKind::one_nn) {
        if (m.ref_embeddings.empty()) throw std::invalid_argument("1nn model has no references");
        refs = Tensor({m.ref_embeddings.size(), m.ref_embeddings.front().size()}, 0.0);
        for (std::size_t i = 0; i < m.ref_embeddings.size(); ++i) {
            for (std::size_t k = 0; k < m.ref_embeddings[i].size(); ++k) {
                refs[i * refs.dim(1) + k] = m.ref_embeddings[i][k];
            }
        }
        tensors.emplace_back("refs", &refs);
    } else {
        tensors.emplace_back("head.W", &m.head.W);
        tensors.emplace_back("head.b", &m.head.b);
    }
    write_checkpoint(path, std::move(header), tensors);
}

RecognitionModel load_recognizer(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path.string());
    json header = read_header(in, path);
    expect_kind(header, "recognizer", path);

    RecognitionModel m;
    m.kind = recognition_from_string(header.at("recognizer_kind").get<std::string>());
    m.labels = header.at("labels").get<std::vector<std::string>>();
    m.ref_labels = header.at("ref_labels").get<std::vector<std::string>>();
    m.backbone = extractor_from_header(header.at("backbone"));

    auto dests = extractor_dests(m.backbone, "backbone.");
    Tensor refs;
    if (m.kind == RecognitionKind::one_nn) {
        dests.emplace_back("refs", &refs);
    } else {
        m.head = nn::Linear(m.backbone.cfg.embed_dim, static_cast<int>(m.labels.size()));
        dests.emplace_back("head.W", &m.head.W);
        dests.emplace_back("head.b", &m.head.b);
    }
    read_tensors(in, header, dests, path);
    sync_linear_dims(m.backbone.embed_head);
    sync_linear_dims(m.backbone.class_head);
    if (m.kind == RecognitionKind::one_nn) {
        m.ref_embeddings.assign(refs.dim(0), std::vector<double>(refs.dim(1), 0.0));
        for (std::size_t i = 0; i < refs.dim(0); ++i) {
            for (std::size_t k = 0; k < refs.dim(1); ++k) {
                m.ref_embeddings[i][k] = refs[i * refs.dim(1) + k];
            }
        }
    } else {
        sync_linear_dims(m.head);
    }
    return m;
}

std::string checkpoint_kind(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path.string());
    return read_header(in, path).at("kind").get<std::string>();
}

}  // namespace decloak
