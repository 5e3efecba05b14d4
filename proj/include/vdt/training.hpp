#pragma once

#include "vdt/adapters.hpp"
#include "vdt/core.hpp"
#include "vdt/ensemble.hpp"

#include <chrono>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

namespace vdt {

struct TrainConfig {
    std::size_t shots = 16;
    std::size_t epochs = 50;
    double learning_rate = 1e-3;
    std::size_t batch_size = 0; // 0 = full batch
    std::vector<double> beta_grid = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
    std::uint64_t seed = 0;
    double weight_decay = 0.0;
    double beta = 0.5; // residual ratio for a single train_adapter run
    double tau = kDefaultTau;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-8;
    std::size_t heads = 1;
    double init_scale = 1.0;
    AttentionInit init = AttentionInit::IdentityResidual;

    void validate() const;
    [[nodiscard]] AdapterConfig adapter_config() const;
};

struct TrainReport {
    std::vector<double> loss_history; // mean loss per epoch, measured before that epoch's updates
    double final_beta = 0.0;
    double train_accuracy = 0.0;
    std::chrono::duration<double> wall_clock{0.0};
};

struct TrainResult {
    SelfAttentionParams params;
    TrainReport report;
};

struct BetaSearchResult {
    double best_beta = 0.0;
    std::vector<std::pair<double, double>> accuracies; // (beta, train accuracy) in grid order
    SelfAttentionParams params;                        // trained at best_beta
    TrainReport report;
};

// Up to `shots` rows per class, drawn uniformly without replacement.
// Output rows are grouped by class; within a class they keep input order.
LabeledFeatures sample_few_shot(const LabeledFeatures& data, std::size_t shots, std::uint64_t seed);

// Mean of -log p[label] over rows of a probability matrix.
double cross_entropy(const RealMatrix& probs, std::span<const int> labels);

// Same objective evaluated from logits through a stabilized log-softmax.
double cross_entropy_from_logits(const RealMatrix& logits, std::span<const int> labels);

// Loss of the full adapter pipeline (adapted prototypes, cosine logits,
// cross-entropy) and, optionally, its parameter gradients.
struct PipelineResult {
    double loss = 0.0;
    RealMatrix logits;
    AdapterGradients grads;
};

PipelineResult pipeline_loss(const SelfAttentionParams& p, const SentenceBank& bank, double beta,
                             const RealMatrix& unit_features, std::span<const int> labels, double tau,
                             bool with_gradients);

// Adam with optional L2 weight decay, one moment pair per parameter tensor.
class Adam {
  public:
    Adam(double learning_rate, double beta1, double beta2, double epsilon, double weight_decay);

    void step(std::vector<ParamView> params, const std::vector<ConstParamView>& grads);

    [[nodiscard]] std::size_t steps() const noexcept { return step_; }

  private:
    double lr_, beta1_, beta2_, eps_, weight_decay_;
    std::size_t step_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

// Trains only the attention parameters; the bank and features stay frozen.
// Classes are matched by name; few_shot.class_names must all appear in bank.
TrainResult train_adapter(const TrainConfig& cfg, const LabeledFeatures& few_shot, const SentenceBank& bank);

// Trains once per grid value and keeps the beta with the best few-shot
// training accuracy; ties go to the smaller beta, then to the earlier entry.
BetaSearchResult tune_beta(const TrainConfig& cfg, const LabeledFeatures& few_shot, const SentenceBank& bank);

// Accuracy of the adapted classifier on data (classes matched by name).
double adapted_accuracy(const SelfAttentionParams& p, const SentenceBank& bank, double beta,
                        const LabeledFeatures& data, double tau);

// Bank restricted and reordered to the given class names.
SentenceBank align_bank(const SentenceBank& bank, const std::vector<std::string>& class_names);

} // namespace vdt
