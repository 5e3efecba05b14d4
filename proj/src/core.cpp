#include "vdt/core.hpp"

#include "vdt/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace vdt {

namespace {

void require_finite(std::span<const float> values) {
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (!std::isfinite(values[i])) {
            throw Error(ErrorCode::NonFinite, "non-finite value at flat index " + std::to_string(i));
        }
    }
}

std::vector<float> to_float_values(const RealMatrix& m) {
    std::vector<float> values(static_cast<std::size_t>(m.size()));
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            values[static_cast<std::size_t>(i * m.cols() + j)] = static_cast<float>(m(i, j));
        }
    }
    return values;
}

RealMatrix to_real_matrix(std::span<const float> values, std::size_t rows, std::size_t cols) {
    RealMatrix out(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (std::size_t i = 0; i < rows * cols; ++i) {
        out.data()[i] = static_cast<double>(values[i]);
    }
    return out;
}

} // namespace

EmbeddingMatrix::EmbeddingMatrix(std::size_t rows, std::size_t dim, std::vector<float> values)
    : rows_(rows), dim_(dim), values_(std::move(values)) {
    if (rows_ == 0 || dim_ == 0) {
        throw Error(ErrorCode::EmptyInput, "embedding matrix needs rows >= 1 and dim >= 1");
    }
    if (values_.size() != rows_ * dim_) {
        throw Error(ErrorCode::DimMismatch, "expected " + std::to_string(rows_ * dim_) + " values, got " +
                                                std::to_string(values_.size()));
    }
    require_finite(values_);
}

EmbeddingMatrix EmbeddingMatrix::from_real(const RealMatrix& m) {
    return EmbeddingMatrix(static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols()),
                           to_float_values(m));
}

RealMatrix EmbeddingMatrix::to_real() const { return to_real_matrix(values_, rows_, dim_); }

ClassifierWeights::ClassifierWeights(std::size_t classes, std::size_t dim, std::vector<float> values,
                                     bool normalized)
    : classes_(classes), dim_(dim), values_(std::move(values)), normalized_(normalized) {
    if (classes_ == 0 || dim_ == 0) {
        throw Error(ErrorCode::EmptyInput, "classifier needs at least one class and dim >= 1");
    }
    if (values_.size() != classes_ * dim_) {
        throw Error(ErrorCode::DimMismatch, "expected " + std::to_string(classes_ * dim_) + " values, got " +
                                                std::to_string(values_.size()));
    }
    require_finite(values_);
    if (normalized_) {
        for (std::size_t k = 0; k < classes_; ++k) {
            double sq = 0.0;
            for (float v : row(k)) {
                sq += static_cast<double>(v) * static_cast<double>(v);
            }
            if (std::abs(std::sqrt(sq) - 1.0) > 1e-5) {
                throw Error(ErrorCode::InvalidArgument,
                            "row " + std::to_string(k) + " flagged normalized but has norm " +
                                std::to_string(std::sqrt(sq)));
            }
        }
    }
}

ClassifierWeights ClassifierWeights::from_real(const RealMatrix& m, bool normalized) {
    return ClassifierWeights(static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols()),
                             to_float_values(m), normalized);
}

RealMatrix ClassifierWeights::to_real() const { return to_real_matrix(values_, classes_, dim_); }

void LabeledFeatures::validate() const {
    if (features.empty()) {
        throw Error(ErrorCode::EmptyInput, "no feature rows");
    }
    if (labels.size() != features.rows()) {
        throw Error(ErrorCode::DimMismatch, "labels length " + std::to_string(labels.size()) +
                                                " != feature rows " + std::to_string(features.rows()));
    }
    const auto k = static_cast<int>(class_names.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= k) {
            throw Error(ErrorCode::LabelOutOfRange,
                        "label " + std::to_string(labels[i]) + " at row " + std::to_string(i));
        }
    }
}

RealMatrix l2_normalize_rows(const RealMatrix& m) {
    RealMatrix out(m.rows(), m.cols());
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        double sq = 0.0;
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            sq += m(i, j) * m(i, j);
        }
        const double norm = std::sqrt(sq);
        if (!(norm >= kZeroNormThreshold)) {
            throw Error(ErrorCode::ZeroRow, "row " + std::to_string(i) + " has norm " + std::to_string(norm));
        }
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            out(i, j) = m(i, j) / norm;
        }
    }
    return out;
}

EmbeddingMatrix l2_normalize(const EmbeddingMatrix& m) {
    if (m.empty()) {
        throw Error(ErrorCode::EmptyInput, "cannot normalize an empty matrix");
    }
    return EmbeddingMatrix::from_real(l2_normalize_rows(m.to_real()));
}

RealMatrix logits(const EmbeddingMatrix& f, const ClassifierWeights& w, double tau) {
    if (!(tau > 0.0)) {
        throw Error(ErrorCode::NonPositiveTau, "tau must be positive, got " + std::to_string(tau));
    }
    if (f.empty() || w.classes() == 0) {
        throw Error(ErrorCode::EmptyInput, "logits need at least one feature row and one class");
    }
    if (f.dim() != w.dim()) {
        throw Error(ErrorCode::DimMismatch,
                    "feature dim " + std::to_string(f.dim()) + " != classifier dim " + std::to_string(w.dim()));
    }
    RealMatrix out(static_cast<Eigen::Index>(f.rows()), static_cast<Eigen::Index>(w.classes()));
    for (std::size_t n = 0; n < f.rows(); ++n) {
        const auto fr = f.row(n);
        for (std::size_t k = 0; k < w.classes(); ++k) {
            const auto wr = w.row(k);
            double dot = 0.0;
            for (std::size_t d = 0; d < fr.size(); ++d) {
                dot += static_cast<double>(fr[d]) * static_cast<double>(wr[d]);
            }
            out(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k)) = dot / tau;
        }
    }
    return out;
}

std::vector<double> softmax(std::span<const double> scores) {
    if (scores.empty()) {
        return {};
    }
    const double peak = *std::max_element(scores.begin(), scores.end());
    std::vector<double> out(scores.size());
    double total = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        out[i] = std::exp(scores[i] - peak);
        total += out[i];
    }
    for (double& v : out) {
        v /= total;
    }
    return out;
}

std::vector<double> log_softmax(std::span<const double> scores) {
    if (scores.empty()) {
        return {};
    }
    const double peak = *std::max_element(scores.begin(), scores.end());
    double total = 0.0;
    for (double s : scores) {
        total += std::exp(s - peak);
    }
    const double log_z = peak + std::log(total);
    std::vector<double> out(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) {
        out[i] = scores[i] - log_z;
    }
    return out;
}

RealMatrix softmax_rows(const RealMatrix& scores) {
    RealMatrix out(scores.rows(), scores.cols());
    for (Eigen::Index i = 0; i < scores.rows(); ++i) {
        const auto p = softmax(std::span<const double>(scores.row(i).data(), static_cast<std::size_t>(scores.cols())));
        for (Eigen::Index j = 0; j < scores.cols(); ++j) {
            out(i, j) = p[static_cast<std::size_t>(j)];
        }
    }
    return out;
}

std::vector<int> predict(const RealMatrix& scores) {
    if (scores.cols() == 0) {
        throw Error(ErrorCode::EmptyRow, "cannot take argmax of an empty row");
    }
    std::vector<int> out(static_cast<std::size_t>(scores.rows()));
    for (Eigen::Index i = 0; i < scores.rows(); ++i) {
        Eigen::Index best = 0;
        for (Eigen::Index j = 1; j < scores.cols(); ++j) {
            if (scores(i, j) > scores(i, best)) {
                best = j;
            }
        }
        out[static_cast<std::size_t>(i)] = static_cast<int>(best);
    }
    return out;
}

double accuracy(std::span<const int> predicted, std::span<const int> labels) {
    if (predicted.size() != labels.size()) {
        throw Error(ErrorCode::DimMismatch, "prediction and label counts differ");
    }
    if (labels.empty()) {
        throw Error(ErrorCode::EmptyInput, "accuracy over zero rows");
    }
    std::size_t hits = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        hits += predicted[i] == labels[i] ? 1 : 0;
    }
    return static_cast<double>(hits) / static_cast<double>(labels.size());
}

} // namespace vdt
