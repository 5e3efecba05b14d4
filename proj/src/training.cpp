#include "vdt/training.hpp"

#include "vdt/error.hpp"
#include "vdt/random.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_map>

namespace vdt {

void TrainConfig::validate() const {
    if (shots == 0) {
        throw Error(ErrorCode::InvalidArgument, "shots must be >= 1");
    }
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
        throw Error(ErrorCode::InvalidArgument, "learning_rate must be finite and non-negative");
    }
    for (double b : beta_grid) {
        if (!(b >= 0.0 && b <= 1.0)) {
            throw Error(ErrorCode::InvalidArgument, "beta grid values must lie in [0, 1]");
        }
    }
    if (!(beta >= 0.0 && beta <= 1.0)) {
        throw Error(ErrorCode::InvalidArgument, "beta must lie in [0, 1]");
    }
    if (!(tau > 0.0)) {
        throw Error(ErrorCode::NonPositiveTau, "tau must be positive");
    }
    if (!(weight_decay >= 0.0)) {
        throw Error(ErrorCode::InvalidArgument, "weight_decay must be non-negative");
    }
    adapter_config().validate();
}

AdapterConfig TrainConfig::adapter_config() const {
    AdapterConfig a;
    a.beta = beta;
    a.heads = heads;
    a.seed = seed;
    a.init_scale = init_scale;
    a.init = init;
    return a;
}

LabeledFeatures sample_few_shot(const LabeledFeatures& data, std::size_t shots, std::uint64_t seed) {
    data.validate();
    if (shots == 0) {
        throw Error(ErrorCode::InvalidArgument, "shots must be >= 1");
    }
    const std::size_t classes = data.num_classes();
    std::vector<std::vector<std::size_t>> by_class(classes);
    for (std::size_t i = 0; i < data.labels.size(); ++i) {
        by_class[static_cast<std::size_t>(data.labels[i])].push_back(i);
    }
    Rng rng(seed);
    std::vector<std::size_t> picked;
    for (std::size_t k = 0; k < classes; ++k) {
        auto& rows = by_class[k];
        if (rows.empty()) {
            throw Error(ErrorCode::EmptyClass, "class " + std::to_string(k) + " ('" + data.class_names[k] +
                                                   "') has no examples");
        }
        const std::size_t take = std::min(shots, rows.size());
        // Partial Fisher-Yates: the first `take` slots become the sample.
        for (std::size_t i = 0; i < take; ++i) {
            std::swap(rows[i], rows[i + rng.below(rows.size() - i)]);
        }
        std::vector<std::size_t> chosen(rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(take));
        std::sort(chosen.begin(), chosen.end());
        picked.insert(picked.end(), chosen.begin(), chosen.end());
    }
    const std::size_t d = data.features.dim();
    std::vector<float> values;
    values.reserve(picked.size() * d);
    std::vector<int> labels;
    labels.reserve(picked.size());
    for (std::size_t i : picked) {
        const auto r = data.features.row(i);
        values.insert(values.end(), r.begin(), r.end());
        labels.push_back(data.labels[i]);
    }
    return LabeledFeatures{EmbeddingMatrix(picked.size(), d, std::move(values)), std::move(labels), data.class_names};
}

namespace {

void check_labels(Eigen::Index rows, Eigen::Index cols, std::span<const int> labels) {
    if (static_cast<std::size_t>(rows) != labels.size()) {
        throw Error(ErrorCode::DimMismatch, "row count != label count");
    }
    if (rows == 0) {
        throw Error(ErrorCode::EmptyInput, "cross-entropy over zero rows");
    }
    for (int l : labels) {
        if (l < 0 || l >= cols) {
            throw Error(ErrorCode::LabelOutOfRange, "label " + std::to_string(l));
        }
    }
}

} // namespace

double cross_entropy(const RealMatrix& probs, std::span<const int> labels) {
    check_labels(probs.rows(), probs.cols(), labels);
    double total = 0.0;
    for (Eigen::Index n = 0; n < probs.rows(); ++n) {
        total -= std::log(probs(n, labels[static_cast<std::size_t>(n)]));
    }
    return total / static_cast<double>(probs.rows());
}

double cross_entropy_from_logits(const RealMatrix& logits, std::span<const int> labels) {
    check_labels(logits.rows(), logits.cols(), labels);
    double total = 0.0;
    for (Eigen::Index n = 0; n < logits.rows(); ++n) {
        const auto ls = log_softmax(std::span<const double>(logits.row(n).data(), static_cast<std::size_t>(logits.cols())));
        total -= ls[static_cast<std::size_t>(labels[static_cast<std::size_t>(n)])];
    }
    return total / static_cast<double>(logits.rows());
}

PipelineResult pipeline_loss(const SelfAttentionParams& p, const SentenceBank& bank, double beta,
                             const RealMatrix& unit_features, std::span<const int> labels, double tau,
                             bool with_gradients) {
    if (!(tau > 0.0)) {
        throw Error(ErrorCode::NonPositiveTau, "tau must be positive");
    }
    auto fwd = adapted_forward(p, bank, beta);
    if (unit_features.cols() != fwd.prototypes.cols()) {
        throw Error(ErrorCode::DimMismatch, "feature dim does not match bank dim");
    }
    PipelineResult out;
    out.logits = (unit_features * fwd.prototypes.transpose()) / tau;
    out.loss = cross_entropy_from_logits(out.logits, labels);
    if (with_gradients) {
        const auto n = static_cast<double>(unit_features.rows());
        RealMatrix d_logits = softmax_rows(out.logits);
        for (Eigen::Index i = 0; i < d_logits.rows(); ++i) {
            d_logits(i, labels[static_cast<std::size_t>(i)]) -= 1.0;
        }
        d_logits /= n;
        const RealMatrix d_protos = (d_logits.transpose() * unit_features) / tau;
        out.grads = backward(p, fwd.tape, d_protos);
    }
    return out;
}

Adam::Adam(double learning_rate, double beta1, double beta2, double epsilon, double weight_decay)
    : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(epsilon), weight_decay_(weight_decay) {}

void Adam::step(std::vector<ParamView> params, const std::vector<ConstParamView>& grads) {
    if (params.size() != grads.size()) {
        throw Error(ErrorCode::DimMismatch, "parameter and gradient tensor counts differ");
    }
    if (m_.empty()) {
        for (const auto& p : params) {
            m_.emplace_back(p.values.size(), 0.0);
            v_.emplace_back(p.values.size(), 0.0);
        }
    }
    ++step_;
    const double bias1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
    const double bias2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
    for (std::size_t t = 0; t < params.size(); ++t) {
        auto values = params[t].values;
        const auto g = grads[t].values;
        if (g.size() != values.size() || m_[t].size() != values.size()) {
            throw Error(ErrorCode::DimMismatch, "tensor '" + params[t].name + "' changed shape");
        }
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double grad = g[i] + weight_decay_ * values[i];
            m_[t][i] = beta1_ * m_[t][i] + (1.0 - beta1_) * grad;
            v_[t][i] = beta2_ * v_[t][i] + (1.0 - beta2_) * grad * grad;
            const double m_hat = m_[t][i] / bias1;
            const double v_hat = v_[t][i] / bias2;
            values[i] -= lr_ * m_hat / (std::sqrt(v_hat) + eps_);
        }
    }
}

SentenceBank align_bank(const SentenceBank& bank, const std::vector<std::string>& class_names) {
    std::unordered_map<std::string, std::size_t> index;
    for (std::size_t k = 0; k < bank.classes(); ++k) {
        index.emplace(bank.class_names()[k], k);
    }
    std::vector<std::size_t> order;
    order.reserve(class_names.size());
    for (const auto& name : class_names) {
        const auto it = index.find(name);
        if (it == index.end()) {
            throw Error(ErrorCode::ClassCoverage, "class '" + name + "' missing from the sentence bank");
        }
        order.push_back(it->second);
    }
    return bank.subset(order);
}

double adapted_accuracy(const SelfAttentionParams& p, const SentenceBank& bank, double beta,
                        const LabeledFeatures& data, double tau) {
    return zero_shot_eval(data, adapted_classifier(p, align_bank(bank, data.class_names), beta), tau);
}

namespace {

std::string diagnostic_dump(std::size_t epoch, std::size_t step, double loss, const SelfAttentionParams& p) {
    std::ostringstream out;
    out << "loss " << loss << " at epoch " << epoch << ", step " << step << "; parameter norms:";
    for (const auto& t : p.tensors()) {
        double sq = 0.0;
        for (double v : t.values) {
            sq += v * v;
        }
        out << ' ' << t.name << '=' << std::sqrt(sq);
    }
    return out.str();
}

} // namespace

TrainResult train_adapter(const TrainConfig& cfg, const LabeledFeatures& few_shot, const SentenceBank& bank) {
    const auto started = std::chrono::steady_clock::now();
    cfg.validate();
    few_shot.validate();
    const SentenceBank aligned = align_bank(bank, few_shot.class_names);
    const RealMatrix features = l2_normalize_rows(few_shot.features.to_real());
    const auto rows = static_cast<std::size_t>(features.rows());

    TrainResult result;
    result.params = SelfAttentionParams::initialize(aligned.dim(), cfg.adapter_config());
    Adam optimizer(cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon, cfg.weight_decay);

    const std::size_t batch = (cfg.batch_size == 0 || cfg.batch_size >= rows) ? rows : cfg.batch_size;
    std::vector<std::size_t> order(rows);
    for (std::size_t i = 0; i < rows; ++i) {
        order[i] = i;
    }
    Rng rng(cfg.seed ^ 0x9E3779B97F4A7C15ULL);

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        if (batch < rows) {
            rng.shuffle(order);
        }
        double epoch_loss = 0.0;
        std::size_t step = 0;
        for (std::size_t start = 0; start < rows; start += batch, ++step) {
            const std::size_t count = std::min(batch, rows - start);
            RealMatrix x(static_cast<Eigen::Index>(count), features.cols());
            std::vector<int> labels(count);
            for (std::size_t i = 0; i < count; ++i) {
                x.row(static_cast<Eigen::Index>(i)) = features.row(static_cast<Eigen::Index>(order[start + i]));
                labels[i] = few_shot.labels[order[start + i]];
            }
            auto res = pipeline_loss(result.params, aligned, cfg.beta, x, labels, cfg.tau, true);
            if (!std::isfinite(res.loss)) {
                throw Error(ErrorCode::NonFiniteLoss, diagnostic_dump(epoch, step, res.loss, result.params));
            }
            epoch_loss += res.loss * static_cast<double>(count);
            const auto& g = res.grads.params;
            optimizer.step(result.params.tensors(), g.tensors());
        }
        result.report.loss_history.push_back(epoch_loss / static_cast<double>(rows));
    }

    result.report.final_beta = cfg.beta;
    result.report.train_accuracy = adapted_accuracy(result.params, aligned, cfg.beta, few_shot, cfg.tau);
    result.report.wall_clock = std::chrono::steady_clock::now() - started;
    return result;
}

BetaSearchResult tune_beta(const TrainConfig& cfg, const LabeledFeatures& few_shot, const SentenceBank& bank) {
    if (cfg.beta_grid.empty()) {
        throw Error(ErrorCode::InvalidArgument, "beta grid is empty");
    }
    BetaSearchResult best;
    bool have_best = false;
    double best_accuracy = -1.0;
    for (double beta : cfg.beta_grid) {
        TrainConfig point = cfg;
        point.beta = beta;
        auto trained = train_adapter(point, few_shot, bank);
        const double acc = trained.report.train_accuracy;
        best.accuracies.emplace_back(beta, acc);
        const bool better = acc > best_accuracy || (acc == best_accuracy && beta < best.best_beta);
        if (!have_best || better) {
            have_best = true;
            best_accuracy = acc;
            best.best_beta = beta;
            best.params = std::move(trained.params);
            best.report = std::move(trained.report);
        }
    }
    return best;
}

} // namespace vdt
