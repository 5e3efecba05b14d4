#include "vdt/adapters.hpp"

#include "vdt/error.hpp"
#include "vdt/random.hpp"

#include <cmath>

namespace vdt {

namespace {

void require_shape(const RealMatrix& m, Eigen::Index rows, Eigen::Index cols, const char* name) {
    if (m.rows() != rows || m.cols() != cols) {
        throw Error(ErrorCode::DimMismatch, std::string(name) + " has shape " + std::to_string(m.rows()) + "x" +
                                                std::to_string(m.cols()) + ", expected " + std::to_string(rows) +
                                                "x" + std::to_string(cols));
    }
}

void require_size(const RealVector& v, Eigen::Index size, const char* name) {
    if (v.size() != size) {
        throw Error(ErrorCode::DimMismatch, std::string(name) + " has length " + std::to_string(v.size()) +
                                                ", expected " + std::to_string(size));
    }
}

void require_finite(std::span<const double> values, const std::string& name) {
    for (double v : values) {
        if (!std::isfinite(v)) {
            throw Error(ErrorCode::NonFinite, name + " contains a non-finite value");
        }
    }
}

std::span<double> flat(RealMatrix& m) { return {m.data(), static_cast<std::size_t>(m.size())}; }
std::span<double> flat(RealVector& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }
std::span<const double> flat(const RealMatrix& m) { return {m.data(), static_cast<std::size_t>(m.size())}; }
std::span<const double> flat(const RealVector& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }

std::vector<std::size_t> shape_of(const RealMatrix& m) {
    return {static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())};
}
std::vector<std::size_t> shape_of(const RealVector& v) { return {static_cast<std::size_t>(v.size())}; }

RealMatrix uniform_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double bound) {
    RealMatrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        m.data()[i] = rng.uniform(-bound, bound);
    }
    return m;
}

RealMatrix affine(const RealMatrix& x, const RealMatrix& w, const RealVector& b) {
    RealMatrix out = x * w;
    out.rowwise() += b.transpose();
    return out;
}

RealVector column_sums(const RealMatrix& m) {
    RealVector out = RealVector::Zero(m.cols());
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        out += m.row(i).transpose();
    }
    return out;
}

// Gradient through v -> v / |v| given the output gradient g.
RealVector unit_backward(const RealVector& unit_v, double norm, const RealVector& g) {
    return (g - unit_v * unit_v.dot(g)) / norm;
}

} // namespace

void AdapterConfig::validate() const {
    if (!(beta >= 0.0 && beta <= 1.0)) {
        throw Error(ErrorCode::InvalidArgument, "beta must lie in [0, 1]");
    }
    if (!(alpha >= 0.0 && alpha <= 1.0)) {
        throw Error(ErrorCode::InvalidArgument, "alpha must lie in [0, 1]");
    }
    if (heads == 0) {
        throw Error(ErrorCode::InvalidArgument, "heads must be >= 1");
    }
    if (!(init_scale >= 0.0)) {
        throw Error(ErrorCode::InvalidArgument, "init_scale must be non-negative");
    }
}

// ---- SelfAttentionParams ----

void SelfAttentionParams::validate() const {
    const auto d = w_q.rows();
    if (d == 0) {
        throw Error(ErrorCode::EmptyInput, "attention parameters have zero dimension");
    }
    if (heads == 0 || static_cast<std::size_t>(d) % heads != 0) {
        throw Error(ErrorCode::InvalidArgument,
                    "dim " + std::to_string(d) + " not divisible by heads " + std::to_string(heads));
    }
    require_shape(w_q, d, d, "w_q");
    require_shape(w_k, d, d, "w_k");
    require_shape(w_v, d, d, "w_v");
    require_shape(w_o, d, d, "w_o");
    require_size(b_q, d, "b_q");
    require_size(b_k, d, "b_k");
    require_size(b_v, d, "b_v");
    require_size(b_o, d, "b_o");
    for (const auto& t : tensors()) {
        require_finite(t.values, t.name);
    }
}

std::vector<ParamView> SelfAttentionParams::tensors() {
    return {{"w_q", flat(w_q)}, {"b_q", flat(b_q)}, {"w_k", flat(w_k)}, {"b_k", flat(b_k)},
            {"w_v", flat(w_v)}, {"b_v", flat(b_v)}, {"w_o", flat(w_o)}, {"b_o", flat(b_o)}};
}

std::vector<ConstParamView> SelfAttentionParams::tensors() const {
    return {{"w_q", flat(w_q), shape_of(w_q)}, {"b_q", flat(b_q), shape_of(b_q)},
            {"w_k", flat(w_k), shape_of(w_k)}, {"b_k", flat(b_k), shape_of(b_k)},
            {"w_v", flat(w_v), shape_of(w_v)}, {"b_v", flat(b_v), shape_of(b_v)},
            {"w_o", flat(w_o), shape_of(w_o)}, {"b_o", flat(b_o), shape_of(b_o)}};
}

SelfAttentionParams SelfAttentionParams::zeros(std::size_t dim, std::size_t heads) {
    const auto d = static_cast<Eigen::Index>(dim);
    SelfAttentionParams p;
    p.w_q = p.w_k = p.w_v = p.w_o = RealMatrix::Zero(d, d);
    p.b_q = p.b_k = p.b_v = p.b_o = RealVector::Zero(d);
    p.heads = heads;
    return p;
}

SelfAttentionParams SelfAttentionParams::mean_pooling(std::size_t dim, std::size_t heads) {
    auto p = zeros(dim, heads);
    p.w_v = p.w_o = RealMatrix::Identity(p.w_v.rows(), p.w_v.cols());
    return p;
}

SelfAttentionParams SelfAttentionParams::initialize(std::size_t dim, const AdapterConfig& cfg) {
    cfg.validate();
    auto p = zeros(dim, cfg.heads);
    const auto d = static_cast<Eigen::Index>(dim);
    const double bound = cfg.init_scale / std::sqrt(static_cast<double>(dim));
    Rng rng(cfg.seed);
    p.w_q = uniform_matrix(rng, d, d, bound);
    p.w_k = uniform_matrix(rng, d, d, bound);
    p.w_v = uniform_matrix(rng, d, d, bound);
    p.w_o = uniform_matrix(rng, d, d, bound);
    if (cfg.init == AttentionInit::IdentityResidual) {
        // Shrink the value/output perturbation so the start stays near mean pooling.
        p.w_v = RealMatrix::Identity(d, d) + p.w_v / std::sqrt(static_cast<double>(dim));
        p.w_o = RealMatrix::Identity(d, d) + p.w_o / std::sqrt(static_cast<double>(dim));
    }
    p.validate();
    return p;
}

// ---- attention ----

AttentionTrace attention_trace(const SelfAttentionParams& p, const RealMatrix& x) {
    const auto d = static_cast<Eigen::Index>(p.dim());
    if (x.rows() == 0) {
        throw Error(ErrorCode::EmptyInput, "attention over zero tokens");
    }
    if (x.cols() != d) {
        throw Error(ErrorCode::DimMismatch,
                    "token dim " + std::to_string(x.cols()) + " != adapter dim " + std::to_string(d));
    }
    const auto heads = static_cast<Eigen::Index>(p.heads);
    const Eigen::Index head_dim = d / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));

    AttentionTrace t;
    t.x = x;
    t.q = affine(x, p.w_q, p.b_q);
    t.k = affine(x, p.w_k, p.b_k);
    t.v = affine(x, p.w_v, p.b_v);
    t.concat.resize(x.rows(), d);
    t.head_attn.reserve(p.heads);
    for (Eigen::Index h = 0; h < heads; ++h) {
        const auto cols = Eigen::seqN(h * head_dim, head_dim);
        const RealMatrix scores = (t.q(Eigen::all, cols) * t.k(Eigen::all, cols).transpose()) * scale;
        RealMatrix attn = softmax_rows(scores);
        t.concat(Eigen::all, cols) = attn * t.v(Eigen::all, cols);
        t.head_attn.push_back(std::move(attn));
    }
    t.outputs = affine(t.concat, p.w_o, p.b_o);
    return t;
}

AttentionOutput attention_forward(const SelfAttentionParams& p, const RealMatrix& x) {
    p.validate();
    auto t = attention_trace(p, x);
    RealMatrix attn = RealMatrix::Zero(x.rows(), x.rows());
    for (const auto& a : t.head_attn) {
        attn += a;
    }
    attn /= static_cast<double>(t.head_attn.size());
    return {std::move(t.outputs), std::move(attn)};
}

AttentionOutput attention_forward(const SelfAttentionParams& p, const EmbeddingMatrix& x) {
    if (x.empty()) {
        throw Error(ErrorCode::EmptyInput, "attention over zero tokens");
    }
    return attention_forward(p, x.to_real());
}

AdaptedForward adapted_forward(const SelfAttentionParams& p, const SentenceBank& bank, double beta) {
    p.validate();
    if (bank.classes() == 0) {
        throw Error(ErrorCode::EmptyInput, "sentence bank has no classes");
    }
    if (bank.dim() != p.dim()) {
        throw Error(ErrorCode::DimMismatch,
                    "bank dim " + std::to_string(bank.dim()) + " != adapter dim " + std::to_string(p.dim()));
    }
    if (!(beta >= 0.0 && beta <= 1.0)) {
        throw Error(ErrorCode::InvalidArgument, "beta must lie in [0, 1]");
    }
    AdaptedForward out;
    out.tape.beta = beta;
    out.tape.records.reserve(bank.classes());
    out.prototypes.resize(static_cast<Eigen::Index>(bank.classes()), static_cast<Eigen::Index>(bank.dim()));
    for (std::size_t k = 0; k < bank.classes(); ++k) {
        AdapterTape::ClassRecord rec;
        const RealMatrix x = detail::unit_sentences(bank.block(k));
        rec.attention = attention_trace(p, x);
        rec.w_avg = detail::mean_of_rows(x);
        rec.w_amean = detail::mean_of_rows(rec.attention.outputs);
        rec.blended = beta * rec.w_amean + (1.0 - beta) * rec.w_avg;
        const RealVector proto = detail::unit(rec.blended);
        rec.blended_norm = rec.blended.norm();
        out.prototypes.row(static_cast<Eigen::Index>(k)) = proto.transpose();
        out.tape.records.push_back(std::move(rec));
    }
    return out;
}

ClassifierWeights adapted_classifier(const SelfAttentionParams& p, const SentenceBank& bank, double beta) {
    const auto fwd = adapted_forward(p, bank, beta);
    std::vector<RealVector> rows;
    rows.reserve(fwd.tape.records.size());
    for (const auto& rec : fwd.tape.records) {
        rows.push_back(detail::unit(rec.blended));
    }
    return detail::stack_prototypes(rows);
}

AdapterGradients backward(const SelfAttentionParams& p, const AdapterTape& tape, const RealMatrix& upstream) {
    if (!tape.has_trace()) {
        throw Error(ErrorCode::NoForwardTrace, "backward called without a forward trace");
    }
    const auto d = static_cast<Eigen::Index>(p.dim());
    const auto classes = static_cast<Eigen::Index>(tape.records.size());
    if (upstream.rows() != classes || upstream.cols() != d) {
        throw Error(ErrorCode::DimMismatch, "upstream gradient must be " + std::to_string(classes) + "x" +
                                                std::to_string(d));
    }
    const auto heads = static_cast<Eigen::Index>(p.heads);
    const Eigen::Index head_dim = d / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
    const double beta = tape.beta;

    AdapterGradients g;
    g.params = SelfAttentionParams::zeros(p.dim(), p.heads);
    g.blended = RealMatrix::Zero(classes, d);

    for (Eigen::Index k = 0; k < classes; ++k) {
        const auto& rec = tape.records[static_cast<std::size_t>(k)];
        const auto& t = rec.attention;
        const RealVector proto = rec.blended / rec.blended_norm;
        const RealVector d_blended = unit_backward(proto, rec.blended_norm, upstream.row(k).transpose());
        g.blended.row(k) = d_blended.transpose();
        g.beta += d_blended.dot(rec.w_amean - rec.w_avg);
        if (beta == 0.0) {
            continue;
        }

        // W_a-mean averages the M output rows.
        const auto tokens = t.x.rows();
        const RealVector d_amean = beta * d_blended;
        RealMatrix d_out(tokens, d);
        d_out.rowwise() = d_amean.transpose() / static_cast<double>(tokens);

        g.params.w_o.noalias() += t.concat.transpose() * d_out;
        g.params.b_o += column_sums(d_out);
        const RealMatrix d_concat = d_out * p.w_o.transpose();

        RealMatrix d_q(tokens, d), d_k(tokens, d), d_v(tokens, d);
        for (Eigen::Index h = 0; h < heads; ++h) {
            const auto cols = Eigen::seqN(h * head_dim, head_dim);
            const RealMatrix& a = t.head_attn[static_cast<std::size_t>(h)];
            const RealMatrix d_head = d_concat(Eigen::all, cols);
            const RealMatrix d_attn = d_head * t.v(Eigen::all, cols).transpose();
            d_v(Eigen::all, cols) = a.transpose() * d_head;
            // Softmax Jacobian, row by row.
            RealMatrix d_scores = a.cwiseProduct(d_attn);
            const RealVector row_dot = d_scores.rowwise().sum();
            d_scores = a.cwiseProduct(d_attn.colwise() - row_dot) * scale;
            d_q(Eigen::all, cols) = d_scores * t.k(Eigen::all, cols);
            d_k(Eigen::all, cols) = d_scores.transpose() * t.q(Eigen::all, cols);
        }
        g.params.w_q.noalias() += t.x.transpose() * d_q;
        g.params.b_q += column_sums(d_q);
        g.params.w_k.noalias() += t.x.transpose() * d_k;
        g.params.b_k += column_sums(d_k);
        g.params.w_v.noalias() += t.x.transpose() * d_v;
        g.params.b_v += column_sums(d_v);
    }
    return g;
}

// ---- MLP adapter ----

void MlpAdapterParams::validate() const {
    const auto d = w1.rows();
    if (d == 0) {
        throw Error(ErrorCode::EmptyInput, "MLP adapter has zero dimension");
    }
    if (reduction == 0 || static_cast<std::size_t>(d) % reduction != 0) {
        throw Error(ErrorCode::InvalidArgument,
                    "reduction " + std::to_string(reduction) + " does not divide dim " + std::to_string(d));
    }
    const auto hidden = d / static_cast<Eigen::Index>(reduction);
    require_shape(w1, d, hidden, "w1");
    require_size(b1, hidden, "b1");
    require_shape(w2, hidden, d, "w2");
    require_size(b2, d, "b2");
    for (const auto& t : tensors()) {
        require_finite(t.values, t.name);
    }
}

std::vector<ParamView> MlpAdapterParams::tensors() {
    return {{"w1", flat(w1)}, {"b1", flat(b1)}, {"w2", flat(w2)}, {"b2", flat(b2)}};
}

std::vector<ConstParamView> MlpAdapterParams::tensors() const {
    return {{"w1", flat(w1), shape_of(w1)},
            {"b1", flat(b1), shape_of(b1)},
            {"w2", flat(w2), shape_of(w2)},
            {"b2", flat(b2), shape_of(b2)}};
}

MlpAdapterParams MlpAdapterParams::zeros(std::size_t dim, std::size_t reduction) {
    if (reduction == 0 || dim % reduction != 0) {
        throw Error(ErrorCode::InvalidArgument, "reduction must divide dim");
    }
    const auto d = static_cast<Eigen::Index>(dim);
    const auto h = static_cast<Eigen::Index>(dim / reduction);
    MlpAdapterParams p;
    p.w1 = RealMatrix::Zero(d, h);
    p.b1 = RealVector::Zero(h);
    p.w2 = RealMatrix::Zero(h, d);
    p.b2 = RealVector::Zero(d);
    p.reduction = reduction;
    return p;
}

MlpAdapterParams MlpAdapterParams::initialize(std::size_t dim, std::size_t reduction, std::uint64_t seed,
                                              double init_scale) {
    auto p = zeros(dim, reduction);
    Rng rng(seed);
    p.w1 = uniform_matrix(rng, p.w1.rows(), p.w1.cols(), init_scale / std::sqrt(static_cast<double>(p.w1.rows())));
    p.w2 = uniform_matrix(rng, p.w2.rows(), p.w2.cols(), init_scale / std::sqrt(static_cast<double>(p.w2.rows())));
    return p;
}

MlpForward mlp_forward(const MlpAdapterParams& p, const RealMatrix& x, double ratio) {
    p.validate();
    if (x.rows() == 0) {
        throw Error(ErrorCode::EmptyInput, "MLP adapter over zero rows");
    }
    if (x.cols() != static_cast<Eigen::Index>(p.dim())) {
        throw Error(ErrorCode::DimMismatch,
                    "input dim " + std::to_string(x.cols()) + " != adapter dim " + std::to_string(p.dim()));
    }
    if (!(ratio >= 0.0 && ratio <= 1.0)) {
        throw Error(ErrorCode::InvalidArgument, "residual ratio must lie in [0, 1]");
    }
    MlpForward out;
    auto& t = out.tape;
    t.ratio = ratio;
    t.input = x;
    t.hidden_pre = affine(x, p.w1, p.b1);
    t.hidden = t.hidden_pre.cwiseMax(0.0);
    const RealMatrix adapted = affine(t.hidden, p.w2, p.b2);
    t.blended = ratio * adapted + (1.0 - ratio) * x;
    t.norms.resize(x.rows());
    out.outputs.resize(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const RealVector u = detail::unit(t.blended.row(i).transpose());
        t.norms(i) = t.blended.row(i).norm();
        out.outputs.row(i) = u.transpose();
    }
    return out;
}

MlpGradients backward(const MlpAdapterParams& p, const MlpTape& tape, const RealMatrix& upstream) {
    if (!tape.has_trace()) {
        throw Error(ErrorCode::NoForwardTrace, "backward called without a forward trace");
    }
    if (upstream.rows() != tape.input.rows() || upstream.cols() != tape.input.cols()) {
        throw Error(ErrorCode::DimMismatch, "upstream gradient shape does not match the forward batch");
    }
    RealMatrix d_adapted(upstream.rows(), upstream.cols());
    for (Eigen::Index i = 0; i < upstream.rows(); ++i) {
        const RealVector u = tape.blended.row(i).transpose() / tape.norms(i);
        d_adapted.row(i) = tape.ratio * unit_backward(u, tape.norms(i), upstream.row(i).transpose()).transpose();
    }
    MlpGradients g{MlpAdapterParams::zeros(p.dim(), p.reduction)};
    g.params.w2 = tape.hidden.transpose() * d_adapted;
    g.params.b2 = column_sums(d_adapted);
    RealMatrix d_hidden = d_adapted * p.w2.transpose();
    d_hidden = d_hidden.cwiseProduct((tape.hidden_pre.array() > 0.0).cast<double>().matrix());
    g.params.w1 = tape.input.transpose() * d_hidden;
    g.params.b1 = column_sums(d_hidden);
    return g;
}

EmbeddingMatrix mlp_adapter_visual(const MlpAdapterParams& p, const EmbeddingMatrix& f, double alpha) {
    if (f.empty()) {
        throw Error(ErrorCode::EmptyInput, "no feature rows");
    }
    return EmbeddingMatrix::from_real(mlp_forward(p, f.to_real(), alpha).outputs);
}

ClassifierWeights mlp_adapter_text(const MlpAdapterParams& p, const ClassifierWeights& w, double beta) {
    if (w.classes() == 0) {
        throw Error(ErrorCode::EmptyInput, "no classifier rows");
    }
    return ClassifierWeights::from_real(mlp_forward(p, w.to_real(), beta).outputs, true);
}

} // namespace vdt
