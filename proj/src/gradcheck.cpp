#include "vdt/gradcheck.hpp"

#include "vdt/random.hpp"
#include "vdt/training.hpp"

#include <algorithm>
#include <cmath>

namespace vdt {

double relative_error(std::span<const double> analytic, std::span<const double> numeric, double floor) {
    double diff = 0.0, na = 0.0, nn = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
        na += analytic[i] * analytic[i];
        nn += numeric[i] * numeric[i];
    }
    return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), floor});
}

namespace {

struct Instance {
    SentenceBank bank;
    RealMatrix features;
    std::vector<int> labels;
    SelfAttentionParams params;
};

Instance random_instance(std::uint64_t seed, const GradCheckOptions& o) {
    Rng rng(seed);
    const auto d = static_cast<Eigen::Index>(o.dim);
    std::vector<std::string> names;
    std::vector<SentenceBlock> blocks;
    for (std::size_t k = 0; k < o.classes; ++k) {
        std::vector<float> values(o.sentences * o.dim);
        for (float& v : values) {
            v = static_cast<float>(rng.normal());
        }
        names.push_back("class" + std::to_string(k));
        blocks.push_back(SentenceBlock{std::vector<std::string>(o.sentences, "s"),
                                       EmbeddingMatrix(o.sentences, o.dim, std::move(values)),
                                       {}});
    }
    Instance inst{SentenceBank(std::move(names), std::move(blocks)), {}, {}, {}};

    const auto n = static_cast<Eigen::Index>(o.classes * o.images_per_class);
    RealMatrix f(n, d);
    for (Eigen::Index i = 0; i < f.size(); ++i) {
        f.data()[i] = rng.normal();
    }
    inst.features = l2_normalize_rows(f);
    for (Eigen::Index i = 0; i < n; ++i) {
        inst.labels.push_back(static_cast<int>(static_cast<std::size_t>(i) % o.classes));
    }

    AdapterConfig cfg;
    cfg.heads = o.heads;
    cfg.seed = seed + 1;
    cfg.init = AttentionInit::Uniform;
    cfg.init_scale = 2.0;
    inst.params = SelfAttentionParams::initialize(o.dim, cfg);
    for (auto* b : {&inst.params.b_q, &inst.params.b_k, &inst.params.b_v, &inst.params.b_o}) {
        for (Eigen::Index i = 0; i < b->size(); ++i) {
            (*b)(i) = rng.uniform(-0.5, 0.5);
        }
    }
    return inst;
}

} // namespace

GradCheckResult gradient_check(std::uint64_t seed, const GradCheckOptions& opts) {
    auto inst = random_instance(seed, opts);
    const auto analytic = pipeline_loss(inst.params, inst.bank, opts.beta, inst.features, inst.labels, opts.tau, true);
    auto loss_at = [&](const SelfAttentionParams& p, double beta) {
        return pipeline_loss(p, inst.bank, beta, inst.features, inst.labels, opts.tau, false).loss;
    };

    GradCheckResult result;
    result.seed = seed;
    const auto grads = analytic.grads.params.tensors();
    auto views = inst.params.tensors();
    for (std::size_t t = 0; t < views.size(); ++t) {
        auto values = views[t].values;
        std::vector<double> numeric(values.size());
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double saved = values[i];
            values[i] = saved + opts.epsilon;
            const double up = loss_at(inst.params, opts.beta);
            values[i] = saved - opts.epsilon;
            const double down = loss_at(inst.params, opts.beta);
            values[i] = saved;
            numeric[i] = (up - down) / (2.0 * opts.epsilon);
        }
        result.tensors.push_back({views[t].name, relative_error(grads[t].values, numeric)});
    }

    // Residual ratio.
    const double up = loss_at(inst.params, std::min(1.0, opts.beta + opts.epsilon));
    const double down = loss_at(inst.params, std::max(0.0, opts.beta - opts.epsilon));
    const double span = std::min(1.0, opts.beta + opts.epsilon) - std::max(0.0, opts.beta - opts.epsilon);
    const double numeric_beta = (up - down) / span;
    const double analytic_beta = analytic.grads.beta;
    result.beta_rel_err =
        relative_error(std::span<const double>(&analytic_beta, 1), std::span<const double>(&numeric_beta, 1));

    for (const auto& t : result.tensors) {
        result.max_rel_err = std::max(result.max_rel_err, t.rel_err);
    }
    result.pass = result.max_rel_err < opts.tolerance;
    return result;
}

} // namespace vdt
