#include "vdt/ensemble.hpp"

#include "vdt/error.hpp"

#include <cmath>

namespace vdt {

SentenceBank::SentenceBank(std::vector<std::string> class_names, std::vector<SentenceBlock> blocks)
    : class_names_(std::move(class_names)), blocks_(std::move(blocks)) {
    if (blocks_.empty()) {
        throw Error(ErrorCode::EmptyInput, "sentence bank has no classes");
    }
    if (class_names_.size() != blocks_.size()) {
        throw Error(ErrorCode::DimMismatch, std::to_string(class_names_.size()) + " class names for " +
                                                std::to_string(blocks_.size()) + " sentence blocks");
    }
    const std::size_t d = blocks_.front().embeddings.dim();
    for (std::size_t k = 0; k < blocks_.size(); ++k) {
        const auto& b = blocks_[k];
        if (b.embeddings.empty()) {
            throw Error(ErrorCode::EmptyClass, "class '" + class_names_[k] + "' has no sentences");
        }
        if (b.embeddings.dim() != d) {
            throw Error(ErrorCode::DimMismatch, "class '" + class_names_[k] + "' has dim " +
                                                    std::to_string(b.embeddings.dim()) + ", expected " +
                                                    std::to_string(d));
        }
        if (b.sentence_texts.size() != b.embeddings.rows()) {
            throw Error(ErrorCode::DimMismatch, "class '" + class_names_[k] + "' has " +
                                                    std::to_string(b.sentence_texts.size()) + " texts for " +
                                                    std::to_string(b.embeddings.rows()) + " embeddings");
        }
        if (!b.attribute_names.empty() && b.attribute_names.size() != b.embeddings.rows()) {
            throw Error(ErrorCode::DimMismatch, "class '" + class_names_[k] + "' attribute names misaligned");
        }
    }
}

SentenceBank SentenceBank::subset(const std::vector<std::size_t>& class_indices) const {
    std::vector<std::string> names;
    std::vector<SentenceBlock> blocks;
    names.reserve(class_indices.size());
    blocks.reserve(class_indices.size());
    for (std::size_t k : class_indices) {
        names.push_back(class_names_.at(k));
        blocks.push_back(blocks_.at(k));
    }
    return SentenceBank(std::move(names), std::move(blocks));
}

SentenceBank single_prompt_bank(const std::vector<std::string>& class_names, const EmbeddingMatrix& prompts) {
    if (prompts.rows() != class_names.size()) {
        throw Error(ErrorCode::DimMismatch, "one prompt embedding per class required");
    }
    std::vector<SentenceBlock> blocks;
    blocks.reserve(class_names.size());
    for (std::size_t k = 0; k < class_names.size(); ++k) {
        const auto r = prompts.row(k);
        blocks.push_back(SentenceBlock{{"A photo of " + class_names[k] + "."},
                                       EmbeddingMatrix(1, prompts.dim(), std::vector<float>(r.begin(), r.end())),
                                       {}});
    }
    return SentenceBank(class_names, std::move(blocks));
}

namespace detail {

RealMatrix unit_sentences(const SentenceBlock& block) { return l2_normalize_rows(block.embeddings.to_real()); }

RealVector mean_of_rows(const RealMatrix& m) {
    RealVector out = RealVector::Zero(m.cols());
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            out(j) += m(i, j);
        }
    }
    return out / static_cast<double>(m.rows());
}

RealVector unit(const RealVector& v) {
    double sq = 0.0;
    for (Eigen::Index j = 0; j < v.size(); ++j) {
        sq += v(j) * v(j);
    }
    const double norm = std::sqrt(sq);
    if (!(norm >= kZeroNormThreshold)) {
        throw Error(ErrorCode::ZeroRow, "prototype has norm " + std::to_string(norm));
    }
    return v / norm;
}

ClassifierWeights stack_prototypes(const std::vector<RealVector>& rows) {
    if (rows.empty()) {
        throw Error(ErrorCode::EmptyInput, "no prototypes");
    }
    RealMatrix m(static_cast<Eigen::Index>(rows.size()), rows.front().size());
    for (std::size_t k = 0; k < rows.size(); ++k) {
        m.row(static_cast<Eigen::Index>(k)) = rows[k].transpose();
    }
    return ClassifierWeights::from_real(m, true);
}

} // namespace detail

ClassifierWeights mean_prototype(const SentenceBank& bank) {
    if (bank.classes() == 0) {
        throw Error(ErrorCode::EmptyInput, "sentence bank has no classes");
    }
    std::vector<RealVector> rows;
    rows.reserve(bank.classes());
    for (const auto& block : bank.blocks()) {
        rows.push_back(detail::unit(detail::mean_of_rows(detail::unit_sentences(block))));
    }
    return detail::stack_prototypes(rows);
}

RealMatrix score_ensemble_probs(const LabeledFeatures& data, const SentenceBank& bank, double tau) {
    if (!(tau > 0.0)) {
        throw Error(ErrorCode::NonPositiveTau, "tau must be positive");
    }
    if (data.features.empty() || bank.classes() == 0) {
        throw Error(ErrorCode::EmptyInput, "score ensemble needs features and classes");
    }
    if (data.features.dim() != bank.dim()) {
        throw Error(ErrorCode::DimMismatch, "feature dim " + std::to_string(data.features.dim()) +
                                                " != sentence dim " + std::to_string(bank.dim()));
    }
    const RealMatrix f = l2_normalize_rows(data.features.to_real());
    RealMatrix scores(f.rows(), static_cast<Eigen::Index>(bank.classes()));
    for (std::size_t k = 0; k < bank.classes(); ++k) {
        const RealMatrix s = detail::unit_sentences(bank.block(k));
        for (Eigen::Index n = 0; n < f.rows(); ++n) {
            double total = 0.0;
            for (Eigen::Index m = 0; m < s.rows(); ++m) {
                double dot = 0.0;
                for (Eigen::Index d = 0; d < s.cols(); ++d) {
                    dot += f(n, d) * s(m, d);
                }
                total += dot;
            }
            scores(n, static_cast<Eigen::Index>(k)) = total / static_cast<double>(s.rows()) / tau;
        }
    }
    return softmax_rows(scores);
}

double zero_shot_eval(const LabeledFeatures& data, const ClassifierWeights& w, double tau) {
    data.validate();
    if (w.classes() != data.num_classes()) {
        throw Error(ErrorCode::DimMismatch, "classifier has " + std::to_string(w.classes()) +
                                                " classes, data has " + std::to_string(data.num_classes()));
    }
    const auto scores = logits(l2_normalize(data.features), w, tau);
    return accuracy(predict(scores), data.labels);
}

double score_ensemble_eval(const LabeledFeatures& data, const SentenceBank& bank, double tau) {
    data.validate();
    if (bank.classes() != data.num_classes()) {
        throw Error(ErrorCode::DimMismatch, "bank has " + std::to_string(bank.classes()) +
                                                " classes, data has " + std::to_string(data.num_classes()));
    }
    return accuracy(predict(score_ensemble_probs(data, bank, tau)), data.labels);
}

} // namespace vdt
