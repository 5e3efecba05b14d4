#pragma once

// Residual self-attention adapter over per-class sentence embeddings, and
// the bottleneck MLP adapter baseline. Parameters and all adapter math are
// real64; only the produced classifiers are stored as real32.

#include "vdt/core.hpp"
#include "vdt/ensemble.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace vdt {

enum class AttentionInit {
    // W_q, W_k small uniform; W_v, W_o identity plus small uniform noise.
    // Starts near uniform attention over the sentence mean.
    IdentityResidual,
    // Every weight uniform in +-init_scale/sqrt(D).
    Uniform,
};

struct AdapterConfig {
    double beta = 0.5;
    double alpha = 0.5;
    std::size_t heads = 1;
    std::uint64_t seed = 0;
    double init_scale = 1.0;
    AttentionInit init = AttentionInit::IdentityResidual;

    void validate() const;
};

// Mutable view of one named parameter tensor, flat row-major.
struct ParamView {
    std::string name;
    std::span<double> values;
};

struct ConstParamView {
    std::string name;
    std::span<const double> values;
    std::vector<std::size_t> shape;
};

// Rows are transformed as x * W + b.
struct SelfAttentionParams {
    RealMatrix w_q, w_k, w_v, w_o;
    RealVector b_q, b_k, b_v, b_o;
    std::size_t heads = 1;

    [[nodiscard]] std::size_t dim() const noexcept { return static_cast<std::size_t>(w_q.rows()); }
    void validate() const;

    // Declared order: w_q, b_q, w_k, b_k, w_v, b_v, w_o, b_o.
    std::vector<ParamView> tensors();
    [[nodiscard]] std::vector<ConstParamView> tensors() const;

    static SelfAttentionParams zeros(std::size_t dim, std::size_t heads = 1);
    // W_q = W_k = 0, W_v = W_o = I, zero biases: uniform attention, each output row is the input mean.
    static SelfAttentionParams mean_pooling(std::size_t dim, std::size_t heads = 1);
    static SelfAttentionParams initialize(std::size_t dim, const AdapterConfig& cfg);
};

struct AttentionOutput {
    RealMatrix outputs; // M x D
    RealMatrix attn;    // M x M, averaged over heads
};

// Everything the backward pass needs from one attention application.
struct AttentionTrace {
    RealMatrix x, q, k, v;
    std::vector<RealMatrix> head_attn;
    RealMatrix concat;
    RealMatrix outputs;
};

AttentionTrace attention_trace(const SelfAttentionParams& p, const RealMatrix& x);
AttentionOutput attention_forward(const SelfAttentionParams& p, const RealMatrix& x);
AttentionOutput attention_forward(const SelfAttentionParams& p, const EmbeddingMatrix& x);

// Forward record for adapted_classifier over a whole bank.
struct AdapterTape {
    struct ClassRecord {
        AttentionTrace attention;
        RealVector w_avg;   // mean of unit sentences
        RealVector w_amean; // mean of attention outputs
        RealVector blended; // beta * w_amean + (1 - beta) * w_avg
        double blended_norm = 0.0;
    };

    double beta = 0.0;
    std::vector<ClassRecord> records;

    [[nodiscard]] bool has_trace() const noexcept { return !records.empty(); }
};

struct AdaptedForward {
    RealMatrix prototypes; // K x D, unit rows
    AdapterTape tape;
};

AdaptedForward adapted_forward(const SelfAttentionParams& p, const SentenceBank& bank, double beta);

// W* = beta * mean(attention outputs) + (1 - beta) * mean(unit sentences), per
// class, renormalized. beta = 0 reproduces mean_prototype bit for bit.
ClassifierWeights adapted_classifier(const SelfAttentionParams& p, const SentenceBank& bank, double beta);

struct AdapterGradients {
    SelfAttentionParams params;
    double beta = 0.0;
    // dL/dW* before renormalization, K x D.
    RealMatrix blended;
};

// Gradients given dL/d(prototypes), the K x D unit rows returned by adapted_forward.
AdapterGradients backward(const SelfAttentionParams& p, const AdapterTape& tape, const RealMatrix& upstream);

// ---- bottleneck MLP adapter ----

struct MlpAdapterParams {
    RealMatrix w1; // D x D/r
    RealVector b1;
    RealMatrix w2; // D/r x D
    RealVector b2;
    std::size_t reduction = 4;

    [[nodiscard]] std::size_t dim() const noexcept { return static_cast<std::size_t>(w1.rows()); }
    void validate() const;

    // Declared order: w1, b1, w2, b2.
    std::vector<ParamView> tensors();
    [[nodiscard]] std::vector<ConstParamView> tensors() const;

    static MlpAdapterParams zeros(std::size_t dim, std::size_t reduction = 4);
    static MlpAdapterParams initialize(std::size_t dim, std::size_t reduction, std::uint64_t seed,
                                       double init_scale = 1.0);
};

struct MlpTape {
    double ratio = 0.0;
    RealMatrix input, hidden_pre, hidden, blended;
    RealVector norms;

    [[nodiscard]] bool has_trace() const noexcept { return input.rows() > 0; }
};

struct MlpForward {
    RealMatrix outputs; // unit rows
    MlpTape tape;
};

struct MlpGradients {
    MlpAdapterParams params;
};

// ratio * A(x) + (1 - ratio) * x per row, renormalized; A = linear, ReLU, linear.
MlpForward mlp_forward(const MlpAdapterParams& p, const RealMatrix& x, double ratio);
MlpGradients backward(const MlpAdapterParams& p, const MlpTape& tape, const RealMatrix& upstream);

// Image-side adapter.
EmbeddingMatrix mlp_adapter_visual(const MlpAdapterParams& p, const EmbeddingMatrix& f, double alpha);
// Text-side adapter applied to classifier rows.
ClassifierWeights mlp_adapter_text(const MlpAdapterParams& p, const ClassifierWeights& w, double beta);

// ---- checkpoint ----

struct CheckpointInfo {
    std::uint64_t seed = 0;
    double beta = 0.0;
    double tau = kDefaultTau;
};

// Header: "VDTC", u32 version, u64 header length, JSON header; then the
// tensors as little-endian real32 in declared order.
void save_checkpoint(const std::filesystem::path& path, const SelfAttentionParams& p, const CheckpointInfo& info);
SelfAttentionParams load_checkpoint(const std::filesystem::path& path, CheckpointInfo* info = nullptr);

} // namespace vdt
