#pragma once

// Zero-shot classifiers built from per-class sentence ensembles.

#include "vdt/core.hpp"

#include <string>
#include <vector>

namespace vdt {

struct SentenceBlock {
    std::vector<std::string> sentence_texts;
    EmbeddingMatrix embeddings;
    // Either empty or one name per sentence.
    std::vector<std::string> attribute_names;

    [[nodiscard]] std::size_t size() const noexcept { return embeddings.rows(); }
};

// Per-class sentence embeddings. Classes may hold different sentence counts.
class SentenceBank {
  public:
    SentenceBank() = default;
    SentenceBank(std::vector<std::string> class_names, std::vector<SentenceBlock> blocks);

    [[nodiscard]] std::size_t classes() const noexcept { return blocks_.size(); }
    [[nodiscard]] std::size_t dim() const noexcept { return blocks_.empty() ? 0 : blocks_.front().embeddings.dim(); }
    [[nodiscard]] const std::vector<std::string>& class_names() const noexcept { return class_names_; }
    [[nodiscard]] const SentenceBlock& block(std::size_t k) const { return blocks_.at(k); }
    [[nodiscard]] const std::vector<SentenceBlock>& blocks() const noexcept { return blocks_; }

    // Bank restricted to the given classes, in the given order.
    [[nodiscard]] SentenceBank subset(const std::vector<std::size_t>& class_indices) const;

  private:
    std::vector<std::string> class_names_;
    std::vector<SentenceBlock> blocks_;
};

// One prompt per class ("A photo of {classname}."), i.e. the default-template
// classifier expressed as a bank with a single sentence per class.
SentenceBank single_prompt_bank(const std::vector<std::string>& class_names, const EmbeddingMatrix& prompts);

// Normalize each sentence, average per class, renormalize.
ClassifierWeights mean_prototype(const SentenceBank& bank);

// Per image: average the cosine similarity against each of a class's
// sentences, then softmax over classes of score / tau.
RealMatrix score_ensemble_probs(const LabeledFeatures& data, const SentenceBank& bank, double tau = kDefaultTau);

// Accuracy of cosine classification of data against w.
double zero_shot_eval(const LabeledFeatures& data, const ClassifierWeights& w, double tau = kDefaultTau);

// Accuracy of the score-space ensemble.
double score_ensemble_eval(const LabeledFeatures& data, const SentenceBank& bank, double tau = kDefaultTau);

namespace detail {

// Rows of the block, L2-normalized in real64.
RealMatrix unit_sentences(const SentenceBlock& block);

// Arithmetic mean of the rows, summed in row order.
RealVector mean_of_rows(const RealMatrix& m);

// Divides by the Euclidean norm; throws ZeroRow on a null vector.
RealVector unit(const RealVector& v);

// Stacks unit prototypes into a normalized ClassifierWeights.
ClassifierWeights stack_prototypes(const std::vector<RealVector>& rows);

} // namespace detail

} // namespace vdt
