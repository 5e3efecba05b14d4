#pragma once

// Dense embedding primitives shared by every other module. Storage is
// real32; every reduction (dot products, norms, means) accumulates in real64.

#include <Eigen/Core>

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace vdt {

using RealMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RealVector = Eigen::VectorXd;

// Logit scale 100, the pretrained encoder's convention.
inline constexpr double kDefaultTau = 0.01;

// Rows whose norm falls below this are rejected by normalization.
inline constexpr double kZeroNormThreshold = 1e-12;

// Row-major rows x dim matrix of finite real32 values (image features or
// sentence embeddings). A default-constructed matrix is empty and rejected
// by every operation.
class EmbeddingMatrix {
  public:
    EmbeddingMatrix() = default;
    EmbeddingMatrix(std::size_t rows, std::size_t dim, std::vector<float> values);

    static EmbeddingMatrix from_real(const RealMatrix& m);

    [[nodiscard]] std::size_t rows() const noexcept { return rows_; }
    [[nodiscard]] std::size_t dim() const noexcept { return dim_; }
    [[nodiscard]] bool empty() const noexcept { return rows_ == 0; }
    [[nodiscard]] std::span<const float> values() const noexcept { return values_; }
    [[nodiscard]] std::span<const float> row(std::size_t i) const {
        return std::span<const float>(values_).subspan(i * dim_, dim_);
    }
    [[nodiscard]] float at(std::size_t i, std::size_t j) const { return values_[i * dim_ + j]; }

    [[nodiscard]] RealMatrix to_real() const;

    friend bool operator==(const EmbeddingMatrix&, const EmbeddingMatrix&) = default;

  private:
    std::size_t rows_ = 0;
    std::size_t dim_ = 0;
    std::vector<float> values_;
};

// K x D classification prototypes, one row per class.
class ClassifierWeights {
  public:
    ClassifierWeights() = default;
    ClassifierWeights(std::size_t classes, std::size_t dim, std::vector<float> values, bool normalized);

    static ClassifierWeights from_real(const RealMatrix& m, bool normalized);

    [[nodiscard]] std::size_t classes() const noexcept { return classes_; }
    [[nodiscard]] std::size_t dim() const noexcept { return dim_; }
    [[nodiscard]] bool normalized() const noexcept { return normalized_; }
    [[nodiscard]] std::span<const float> values() const noexcept { return values_; }
    [[nodiscard]] std::span<const float> row(std::size_t k) const {
        return std::span<const float>(values_).subspan(k * dim_, dim_);
    }

    [[nodiscard]] RealMatrix to_real() const;

    friend bool operator==(const ClassifierWeights&, const ClassifierWeights&) = default;

  private:
    std::size_t classes_ = 0;
    std::size_t dim_ = 0;
    std::vector<float> values_;
    bool normalized_ = false;
};

struct LabeledFeatures {
    EmbeddingMatrix features;
    std::vector<int> labels;
    std::vector<std::string> class_names;

    [[nodiscard]] std::size_t num_classes() const noexcept { return class_names.size(); }

    // Throws DimMismatch / LabelOutOfRange when the invariants do not hold.
    void validate() const;
};

EmbeddingMatrix l2_normalize(const EmbeddingMatrix& m);

// Real64 variant used on internal paths that must not round to real32.
RealMatrix l2_normalize_rows(const RealMatrix& m);

// (n, k) = f_n . w_k / tau. Neither input is renormalized here.
RealMatrix logits(const EmbeddingMatrix& f, const ClassifierWeights& w, double tau = kDefaultTau);

// Max-subtracted softmax of a single score row.
std::vector<double> softmax(std::span<const double> scores);
RealMatrix softmax_rows(const RealMatrix& scores);

// Stabilized log-softmax of a single row.
std::vector<double> log_softmax(std::span<const double> scores);

// Row-wise argmax, ties to the lowest class index.
std::vector<int> predict(const RealMatrix& scores);

// Fraction of positions where predicted == labels.
double accuracy(std::span<const int> predicted, std::span<const int> labels);

} // namespace vdt
