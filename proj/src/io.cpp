#include "vdt/io.hpp"

#include "vdt/bytes.hpp"
#include "vdt/error.hpp"

#include <json.hpp>

#include <atomic>
#include <fstream>
#include <sstream>

#include <unistd.h>

namespace vdt {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

struct EmbHeader {
    std::uint64_t rows = 0;
    std::uint64_t dim = 0;
};

EmbHeader decode_header(std::string_view bytes) {
    if (bytes.size() < kEmbMagic.size() || bytes.substr(0, kEmbMagic.size()) != kEmbMagic) {
        throw Error(ErrorCode::BadMagic, "not an embedding file (expected magic \"VDTE\")");
    }
    if (bytes.size() < kEmbHeaderBytes) {
        throw Error(ErrorCode::TruncatedPayload, "header needs " + std::to_string(kEmbHeaderBytes) +
                                                     " bytes, file has " + std::to_string(bytes.size()));
    }
    const auto version = bytes::get_le<std::uint32_t>(bytes, 4);
    if (version != kEmbVersion) {
        throw Error(ErrorCode::UnsupportedVersion, "embedding file version " + std::to_string(version));
    }
    EmbHeader h;
    h.rows = bytes::get_le<std::uint64_t>(bytes, 8);
    h.dim = bytes::get_le<std::uint64_t>(bytes, 16);
    const auto dtype = static_cast<std::uint8_t>(bytes[24]);
    if (dtype != kDtypeReal32) {
        throw Error(ErrorCode::UnsupportedDtype, "dtype tag " + std::to_string(dtype));
    }
    return h;
}

std::string read_prefix(const fs::path& path, std::size_t count) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(ErrorCode::MissingFile, path.string());
    }
    std::string buf(count, '\0');
    in.read(buf.data(), static_cast<std::streamsize>(count));
    buf.resize(static_cast<std::size_t>(in.gcount()));
    return buf;
}

std::atomic<unsigned> temp_counter{0};

std::vector<std::string> string_list(const ordered_json& j, const char* key) {
    std::vector<std::string> out;
    if (j.contains(key)) {
        for (const auto& v : j.at(key)) {
            out.push_back(v.get<std::string>());
        }
    }
    return out;
}

} // namespace

std::string encode_emb(const EmbeddingMatrix& m) {
    std::string out;
    out.reserve(kEmbHeaderBytes + m.values().size() * 4);
    out.append(kEmbMagic);
    bytes::put_le<std::uint32_t>(out, kEmbVersion);
    bytes::put_le<std::uint64_t>(out, m.rows());
    bytes::put_le<std::uint64_t>(out, m.dim());
    bytes::put_le<std::uint8_t>(out, kDtypeReal32);
    for (float v : m.values()) {
        bytes::put_f32(out, v);
    }
    return out;
}

EmbeddingMatrix decode_emb(std::string_view bytes) {
    const auto h = decode_header(bytes);
    if (h.rows == 0 || h.dim == 0) {
        throw Error(ErrorCode::EmptyInput, "embedding file declares an empty matrix");
    }
    const std::uint64_t count = h.rows * h.dim;
    if (count / h.dim != h.rows || count > (bytes.size() - kEmbHeaderBytes) / 4) {
        throw Error(ErrorCode::TruncatedPayload, "header declares " + std::to_string(h.rows) + "x" +
                                                     std::to_string(h.dim) + " but payload has " +
                                                     std::to_string(bytes.size() - kEmbHeaderBytes) + " bytes");
    }
    if (bytes.size() - kEmbHeaderBytes != count * 4) {
        throw Error(ErrorCode::TruncatedPayload, "trailing bytes after payload");
    }
    std::vector<float> values(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        values[i] = bytes::get_f32(bytes, kEmbHeaderBytes + 4 * i);
    }
    return EmbeddingMatrix(h.rows, h.dim, std::move(values));
}

void write_emb(const fs::path& path, const EmbeddingMatrix& m) { write_file_atomic(path, encode_emb(m)); }

EmbeddingMatrix read_emb(const fs::path& path) { return decode_emb(read_file(path)); }

void write_file_atomic(const fs::path& path, std::string_view contents) {
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    fs::path tmp = path;
    tmp += ".tmp." + std::to_string(::getpid()) + "." + std::to_string(temp_counter++);
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw Error(ErrorCode::IoError, "cannot open " + tmp.string() + " for writing");
        }
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        out.flush();
        if (!out) {
            std::error_code ec;
            fs::remove(tmp, ec);
            throw Error(ErrorCode::IoError, "short write to " + tmp.string());
        }
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp, ec);
        throw Error(ErrorCode::IoError, "cannot rename onto " + path.string());
    }
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(ErrorCode::MissingFile, path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<int> read_labels(const fs::path& path) {
    std::istringstream in(read_file(path));
    std::vector<int> labels;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        try {
            std::size_t used = 0;
            labels.push_back(std::stoi(line, &used));
        } catch (const std::exception&) {
            throw Error(ErrorCode::InvalidArgument, path.string() + ":" + std::to_string(lineno) + ": not an integer");
        }
    }
    return labels;
}

void write_labels(const fs::path& path, std::span<const int> labels) {
    std::string out;
    for (int l : labels) {
        out += std::to_string(l);
        out += '\n';
    }
    write_file_atomic(path, out);
}

// ---- manifest ----

DatasetManifest DatasetManifest::parse(std::string_view json_text, const fs::path& base_dir) {
    ordered_json j;
    try {
        j = ordered_json::parse(json_text);
    } catch (const nlohmann::json::parse_error& e) {
        throw Error(ErrorCode::InvalidArgument, std::string("manifest is not valid JSON: ") + e.what());
    }
    DatasetManifest m;
    m.base_dir = base_dir;
    try {
        m.dataset_id = j.value("dataset_id", std::string{});
        m.class_names = string_list(j, "class_names");
        if (j.contains("features")) {
            for (const auto& [name, entry] : j.at("features").items()) {
                m.features[name] = FeatureFiles{entry.at("embeddings").get<std::string>(),
                                                entry.at("labels").get<std::string>()};
            }
        }
        if (j.contains("sentences")) {
            for (const auto& entry : j.at("sentences")) {
                ClassSentenceFiles s;
                s.class_name = entry.at("class").get<std::string>();
                s.embeddings = entry.at("embeddings").get<std::string>();
                s.texts = string_list(entry, "texts");
                s.attributes = string_list(entry, "attributes");
                m.sentences.push_back(std::move(s));
            }
        }
        m.attribute_schema = string_list(j, "attribute_schema");
        if (j.contains("split") && !j.at("split").is_null()) {
            m.split = fs::path(j.at("split").get<std::string>());
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::InvalidArgument, std::string("malformed manifest: ") + e.what());
    }
    if (m.class_names.empty()) {
        throw Error(ErrorCode::EmptyInput, "manifest lists no classes");
    }
    return m;
}

DatasetManifest DatasetManifest::load(const fs::path& path) {
    return parse(read_file(path), path.has_parent_path() ? path.parent_path() : fs::path("."));
}

std::string DatasetManifest::to_json() const {
    ordered_json j;
    j["dataset_id"] = dataset_id;
    j["class_names"] = class_names;
    ordered_json feats = ordered_json::object();
    for (const auto& [name, files] : features) {
        feats[name] = {{"embeddings", files.embeddings.generic_string()}, {"labels", files.labels.generic_string()}};
    }
    j["features"] = feats;
    ordered_json sents = ordered_json::array();
    for (const auto& s : sentences) {
        ordered_json e;
        e["class"] = s.class_name;
        e["embeddings"] = s.embeddings.generic_string();
        e["texts"] = s.texts;
        if (!s.attributes.empty()) {
            e["attributes"] = s.attributes;
        }
        sents.push_back(std::move(e));
    }
    j["sentences"] = sents;
    if (!attribute_schema.empty()) {
        j["attribute_schema"] = attribute_schema;
    }
    if (split) {
        j["split"] = split->generic_string();
    }
    return j.dump(2) + "\n";
}

void DatasetManifest::save(const fs::path& path) const { write_file_atomic(path, to_json()); }

fs::path DatasetManifest::resolve(const fs::path& p) const { return p.is_absolute() ? p : base_dir / p; }

void DatasetManifest::validate() const {
    std::optional<std::uint64_t> dim;
    auto check_dim = [&](const fs::path& file) -> EmbHeader {
        const fs::path full = resolve(file);
        if (!fs::exists(full)) {
            throw Error(ErrorCode::MissingFile, full.string());
        }
        const auto h = decode_header(read_prefix(full, kEmbHeaderBytes));
        if (dim && *dim != h.dim) {
            throw Error(ErrorCode::DimMismatch, full.string() + " has dim " + std::to_string(h.dim) +
                                                    ", expected " + std::to_string(*dim));
        }
        dim = h.dim;
        return h;
    };
    for (const auto& [name, files] : features) {
        const auto h = check_dim(files.embeddings);
        const fs::path labels = resolve(files.labels);
        if (!fs::exists(labels)) {
            throw Error(ErrorCode::MissingFile, labels.string());
        }
        if (read_labels(labels).size() != h.rows) {
            throw Error(ErrorCode::DimMismatch, "split '" + name + "': label count != feature rows");
        }
    }
    if (!sentences.empty() && sentences.size() != class_names.size()) {
        throw Error(ErrorCode::DimMismatch, "manifest has " + std::to_string(sentences.size()) +
                                                " sentence entries for " + std::to_string(class_names.size()) +
                                                " classes");
    }
    for (std::size_t k = 0; k < sentences.size(); ++k) {
        const auto& s = sentences[k];
        if (s.class_name != class_names[k]) {
            throw Error(ErrorCode::ClassCoverage, "sentence entry " + std::to_string(k) + " is '" + s.class_name +
                                                      "', expected '" + class_names[k] + "'");
        }
        const auto h = check_dim(s.embeddings);
        if (s.texts.size() != h.rows) {
            throw Error(ErrorCode::DimMismatch, "class '" + s.class_name + "': " + std::to_string(s.texts.size()) +
                                                    " texts for " + std::to_string(h.rows) + " embeddings");
        }
    }
    if (split && !fs::exists(resolve(*split))) {
        throw Error(ErrorCode::MissingFile, resolve(*split).string());
    }
}

SentenceBank load_bank(const DatasetManifest& manifest) {
    manifest.validate();
    if (manifest.sentences.empty()) {
        throw Error(ErrorCode::EmptyInput, "manifest has no sentence embeddings");
    }
    std::vector<SentenceBlock> blocks;
    blocks.reserve(manifest.sentences.size());
    for (const auto& s : manifest.sentences) {
        auto emb = read_emb(manifest.resolve(s.embeddings));
        // per-class names win; otherwise the dataset schema when it lines up
        auto attrs = s.attributes;
        if (attrs.empty() && manifest.attribute_schema.size() == emb.rows()) {
            attrs = manifest.attribute_schema;
        }
        blocks.push_back(SentenceBlock{s.texts, std::move(emb), std::move(attrs)});
    }
    return SentenceBank(manifest.class_names, std::move(blocks));
}

LabeledFeatures load_features(const DatasetManifest& manifest, const std::string& split) {
    const auto it = manifest.features.find(split);
    if (it == manifest.features.end()) {
        throw Error(ErrorCode::MissingFile, "manifest has no '" + split + "' feature split");
    }
    LabeledFeatures data{read_emb(manifest.resolve(it->second.embeddings)),
                         read_labels(manifest.resolve(it->second.labels)), manifest.class_names};
    data.validate();
    return data;
}

} // namespace vdt
