#pragma once

#include "vdt/adapters.hpp"
#include "vdt/core.hpp"
#include "vdt/ensemble.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace vdt {

struct SplitManifest {
    std::vector<std::string> base_classes;
    std::vector<std::string> new_classes;

    // Disjoint and non-empty.
    void validate() const;

    [[nodiscard]] std::string to_json() const;
    static SplitManifest parse(std::string_view json_text);
    static SplitManifest load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;
};

// Seeded equal partition (ceil(K/2) base classes); class order is preserved
// inside each half. Datasets with a bundled fixed split (CUB: the first 150
// classes in label order are base, the last 50 new) ignore the seed.
SplitManifest split_base_new(const std::vector<std::string>& class_names, const std::string& dataset_id,
                             std::uint64_t seed);

// True when dataset_id names a dataset with a bundled split.
bool has_fixed_split(const std::string& dataset_id);

double harmonic_mean(double a, double b);

struct BaseToNewResult {
    double base_acc = 0.0;
    double new_acc = 0.0;
    double harmonic = 0.0;
};

// The same frozen attention parameters build classifiers for both halves.
BaseToNewResult evaluate_base_to_new(const SelfAttentionParams& p, double beta, const SentenceBank& bank_base,
                                     const SentenceBank& bank_new, const LabeledFeatures& test_base,
                                     const LabeledFeatures& test_new, double tau = kDefaultTau);

// Rows whose class is in class_names, relabeled to that list's order.
LabeledFeatures select_classes(const LabeledFeatures& data, const std::vector<std::string>& class_names);

struct AttributeScore {
    std::string attribute;
    double score = 0.0;
};

struct AttentionReport {
    std::vector<AttributeScore> ranked; // descending score, ties by schema order
    std::vector<std::string> top;
    std::vector<std::string> bottom;
    std::string aggregation;
};

// Attention mass received by each attribute slot, averaged over heads,
// query positions and classes. Requires a common attribute schema.
AttentionReport attention_report(const SelfAttentionParams& p, const SentenceBank& bank, std::size_t top_n);

// Aligned Base / New / H columns in percent.
std::string format_base_to_new_table(const std::vector<std::pair<std::string, BaseToNewResult>>& rows);
std::string format_attention_table(const AttentionReport& report);

} // namespace vdt
