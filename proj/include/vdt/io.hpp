#pragma once

// Embedding interchange files and dataset manifests.
//
// EmbFile layout (all integers little-endian):
//   offset  0  magic "VDTE"            4 bytes
//   offset  4  version                 u32 (= 1)
//   offset  8  rows                    u64
//   offset 16  dim                     u64
//   offset 24  dtype tag               u8  (1 = real32)
//   offset 25  payload                 rows * dim real32, row-major

#include "vdt/core.hpp"
#include "vdt/ensemble.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace vdt {

inline constexpr std::string_view kEmbMagic = "VDTE";
inline constexpr std::uint32_t kEmbVersion = 1;
inline constexpr std::uint8_t kDtypeReal32 = 1;
inline constexpr std::size_t kEmbHeaderBytes = 25;

std::string encode_emb(const EmbeddingMatrix& m);
EmbeddingMatrix decode_emb(std::string_view bytes);

void write_emb(const std::filesystem::path& path, const EmbeddingMatrix& m);
EmbeddingMatrix read_emb(const std::filesystem::path& path);

// Writes to a sibling temporary and renames over the target.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);
std::string read_file(const std::filesystem::path& path);

// One integer label per line.
std::vector<int> read_labels(const std::filesystem::path& path);
void write_labels(const std::filesystem::path& path, std::span<const int> labels);

struct FeatureFiles {
    std::filesystem::path embeddings;
    std::filesystem::path labels;
};

struct ClassSentenceFiles {
    std::string class_name;
    std::filesystem::path embeddings;
    std::vector<std::string> texts;
    std::vector<std::string> attributes;
};

// JSON manifest tying a dataset's embedding files together. Relative paths
// are resolved against the manifest's directory.
struct DatasetManifest {
    std::string dataset_id;
    std::vector<std::string> class_names;
    std::map<std::string, FeatureFiles> features; // keyed by split name, e.g. "train", "test"
    std::vector<ClassSentenceFiles> sentences;    // manifest class order
    std::vector<std::string> attribute_schema;
    std::optional<std::filesystem::path> split;   // base/new split file
    std::filesystem::path base_dir;

    static DatasetManifest load(const std::filesystem::path& path);
    static DatasetManifest parse(std::string_view json_text, const std::filesystem::path& base_dir);
    [[nodiscard]] std::string to_json() const;
    void save(const std::filesystem::path& path) const;

    [[nodiscard]] std::filesystem::path resolve(const std::filesystem::path& p) const;

    // Referenced files exist and dims agree across them.
    void validate() const;
};

SentenceBank load_bank(const DatasetManifest& manifest);

// Features and labels of one named split; class names from the manifest.
LabeledFeatures load_features(const DatasetManifest& manifest, const std::string& split);

} // namespace vdt
