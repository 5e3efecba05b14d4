#include "vdt/evaluation.hpp"

#include "vdt/error.hpp"
#include "vdt/io.hpp"
#include "vdt/random.hpp"
#include "vdt/training.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <set>
#include <unordered_map>

namespace vdt {

namespace {

std::string lowercase(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

struct FixedSplit {
    const char* id;
    std::size_t classes;
    std::size_t base;
};

// Label-order splits shipped with the toolkit.
constexpr FixedSplit kFixedSplits[] = {
    {"cub", 200, 150},
    {"cub200", 200, 150},
    {"cub_200_2011", 200, 150},
};

const FixedSplit* find_fixed_split(const std::string& dataset_id) {
    const std::string id = lowercase(dataset_id);
    for (const auto& s : kFixedSplits) {
        if (id == s.id) {
            return &s;
        }
    }
    return nullptr;
}

} // namespace

void SplitManifest::validate() const {
    if (base_classes.empty() || new_classes.empty()) {
        throw Error(ErrorCode::TooFewClasses, "base and new splits must both be non-empty");
    }
    std::set<std::string> seen(base_classes.begin(), base_classes.end());
    if (seen.size() != base_classes.size()) {
        throw Error(ErrorCode::InvalidArgument, "duplicate base class");
    }
    for (const auto& c : new_classes) {
        if (!seen.insert(c).second) {
            throw Error(ErrorCode::InvalidArgument, "class '" + c + "' appears twice across the split");
        }
    }
}

std::string SplitManifest::to_json() const {
    nlohmann::ordered_json j;
    j["base"] = base_classes;
    j["new"] = new_classes;
    return j.dump(2) + "\n";
}

SplitManifest SplitManifest::parse(std::string_view json_text) {
    SplitManifest m;
    try {
        const auto j = nlohmann::json::parse(json_text);
        m.base_classes = j.at("base").get<std::vector<std::string>>();
        m.new_classes = j.at("new").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::InvalidArgument, std::string("malformed split manifest: ") + e.what());
    }
    m.validate();
    return m;
}

SplitManifest SplitManifest::load(const std::filesystem::path& path) { return parse(read_file(path)); }

void SplitManifest::save(const std::filesystem::path& path) const { write_file_atomic(path, to_json()); }

bool has_fixed_split(const std::string& dataset_id) { return find_fixed_split(dataset_id) != nullptr; }

SplitManifest split_base_new(const std::vector<std::string>& class_names, const std::string& dataset_id,
                             std::uint64_t seed) {
    const std::size_t k = class_names.size();
    if (k < 2) {
        throw Error(ErrorCode::TooFewClasses, "base/new split needs at least 2 classes, got " + std::to_string(k));
    }
    std::vector<bool> is_base(k, false);
    if (const auto* fixed = find_fixed_split(dataset_id)) {
        if (k != fixed->classes) {
            throw Error(ErrorCode::InvalidArgument, "dataset '" + dataset_id + "' expects " +
                                                        std::to_string(fixed->classes) + " classes, got " +
                                                        std::to_string(k));
        }
        for (std::size_t i = 0; i < fixed->base; ++i) {
            is_base[i] = true;
        }
    } else {
        std::vector<std::size_t> order(k);
        for (std::size_t i = 0; i < k; ++i) {
            order[i] = i;
        }
        Rng rng(seed);
        rng.shuffle(order);
        for (std::size_t i = 0; i < (k + 1) / 2; ++i) {
            is_base[order[i]] = true;
        }
    }
    SplitManifest m;
    for (std::size_t i = 0; i < k; ++i) {
        (is_base[i] ? m.base_classes : m.new_classes).push_back(class_names[i]);
    }
    m.validate();
    return m;
}

double harmonic_mean(double a, double b) {
    if (a < 0.0 || b < 0.0) {
        throw Error(ErrorCode::NegativeInput, "harmonic mean of negative values");
    }
    if (a + b == 0.0) {
        return 0.0;
    }
    return 2.0 * a * b / (a + b);
}

LabeledFeatures select_classes(const LabeledFeatures& data, const std::vector<std::string>& class_names) {
    data.validate();
    std::unordered_map<std::string, int> wanted;
    for (std::size_t i = 0; i < class_names.size(); ++i) {
        wanted.emplace(class_names[i], static_cast<int>(i));
    }
    std::vector<int> remap(data.num_classes(), -1);
    std::size_t found = 0;
    for (std::size_t k = 0; k < data.num_classes(); ++k) {
        if (const auto it = wanted.find(data.class_names[k]); it != wanted.end()) {
            remap[k] = it->second;
            ++found;
        }
    }
    if (found != class_names.size()) {
        throw Error(ErrorCode::ClassCoverage, "requested classes are not all present in the data");
    }
    std::vector<float> values;
    std::vector<int> labels;
    for (std::size_t i = 0; i < data.labels.size(); ++i) {
        const int target = remap[static_cast<std::size_t>(data.labels[i])];
        if (target < 0) {
            continue;
        }
        const auto r = data.features.row(i);
        values.insert(values.end(), r.begin(), r.end());
        labels.push_back(target);
    }
    if (labels.empty()) {
        throw Error(ErrorCode::EmptyInput, "no rows belong to the requested classes");
    }
    return LabeledFeatures{EmbeddingMatrix(labels.size(), data.features.dim(), std::move(values)), std::move(labels),
                           class_names};
}

BaseToNewResult evaluate_base_to_new(const SelfAttentionParams& p, double beta, const SentenceBank& bank_base,
                                     const SentenceBank& bank_new, const LabeledFeatures& test_base,
                                     const LabeledFeatures& test_new, double tau) {
    if (bank_base.classes() != test_base.num_classes() || bank_new.classes() != test_new.num_classes()) {
        throw Error(ErrorCode::ClassCoverage, "sentence banks and test sets cover different class counts");
    }
    BaseToNewResult r;
    r.base_acc = zero_shot_eval(test_base, adapted_classifier(p, align_bank(bank_base, test_base.class_names), beta), tau);
    r.new_acc = zero_shot_eval(test_new, adapted_classifier(p, align_bank(bank_new, test_new.class_names), beta), tau);
    r.harmonic = harmonic_mean(r.base_acc, r.new_acc);
    return r;
}

AttentionReport attention_report(const SelfAttentionParams& p, const SentenceBank& bank, std::size_t top_n) {
    p.validate();
    if (bank.classes() == 0) {
        throw Error(ErrorCode::EmptyInput, "sentence bank has no classes");
    }
    const auto& schema = bank.block(0).attribute_names;
    if (schema.empty()) {
        throw Error(ErrorCode::RaggedAttributeSchema, "sentence bank carries no attribute names");
    }
    for (std::size_t k = 0; k < bank.classes(); ++k) {
        const auto& b = bank.block(k);
        if (b.size() != schema.size() || b.attribute_names != schema) {
            throw Error(ErrorCode::RaggedAttributeSchema,
                        "class '" + bank.class_names()[k] + "' does not follow the common attribute schema");
        }
    }
    const std::size_t m = schema.size();
    std::vector<double> received(m, 0.0);
    for (const auto& block : bank.blocks()) {
        const auto trace = attention_trace(p, detail::unit_sentences(block));
        for (const auto& a : trace.head_attn) {
            for (Eigen::Index i = 0; i < a.rows(); ++i) {
                for (std::size_t j = 0; j < m; ++j) {
                    received[j] += a(i, static_cast<Eigen::Index>(j));
                }
            }
        }
    }
    const double denom = static_cast<double>(bank.classes() * p.heads * m);
    AttentionReport report;
    report.aggregation = "mean attention received per attribute slot, over query positions, heads and classes";
    for (std::size_t j = 0; j < m; ++j) {
        report.ranked.push_back({schema[j], received[j] / denom});
    }
    std::stable_sort(report.ranked.begin(), report.ranked.end(),
                     [](const AttributeScore& a, const AttributeScore& b) { return a.score > b.score; });
    const std::size_t n = std::min(top_n, m);
    for (std::size_t i = 0; i < n; ++i) {
        report.top.push_back(report.ranked[i].attribute);
        report.bottom.push_back(report.ranked[m - 1 - i].attribute);
    }
    return report;
}

std::string format_base_to_new_table(const std::vector<std::pair<std::string, BaseToNewResult>>& rows) {
    std::size_t width = 6;
    for (const auto& [name, _] : rows) {
        width = std::max(width, name.size());
    }
    std::string out;
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%-*s  %7s  %7s  %7s\n", static_cast<int>(width), "Method", "Base", "New", "H");
    out += buf;
    for (const auto& [name, r] : rows) {
        std::snprintf(buf, sizeof(buf), "%-*s  %7.2f  %7.2f  %7.2f\n", static_cast<int>(width), name.c_str(),
                      100.0 * r.base_acc, 100.0 * r.new_acc, 100.0 * r.harmonic);
        out += buf;
    }
    return out;
}

std::string format_attention_table(const AttentionReport& report) {
    std::size_t width = 9;
    for (const auto& a : report.ranked) {
        width = std::max(width, a.attribute.size());
    }
    std::string out;
    char buf[512];
    std::snprintf(buf, sizeof(buf), "%4s  %-*s  %9s\n", "rank", static_cast<int>(width), "attribute", "score");
    out += buf;
    for (std::size_t i = 0; i < report.ranked.size(); ++i) {
        const auto& a = report.ranked[i];
        const bool top = std::find(report.top.begin(), report.top.end(), a.attribute) != report.top.end();
        const bool bottom = std::find(report.bottom.begin(), report.bottom.end(), a.attribute) != report.bottom.end();
        std::snprintf(buf, sizeof(buf), "%4zu  %-*s  %9.6f%s\n", i + 1, static_cast<int>(width), a.attribute.c_str(),
                      a.score, top ? "  [top]" : (bottom ? "  [bottom]" : ""));
        out += buf;
    }
    return out;
}

} // namespace vdt
