#pragma once

// Central finite-difference check of the analytic adapter gradients on a
// random instance. Only the forward pass is reused; derivatives come from
// perturbing every parameter entry in turn.

#include "vdt/core.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace vdt {

struct GradCheckOptions {
    std::size_t classes = 3;
    std::size_t sentences = 4;
    std::size_t dim = 16;
    std::size_t images_per_class = 4;
    std::size_t heads = 1;
    double epsilon = 1e-3;
    double beta = 0.5;
    double tau = kDefaultTau;
    double tolerance = 1e-4;
};

struct TensorGradError {
    std::string name;
    double rel_err = 0.0;
};

struct GradCheckResult {
    std::uint64_t seed = 0;
    std::vector<TensorGradError> tensors; // attention parameter tensors, declared order
    double max_rel_err = 0.0;             // over the attention tensors
    double beta_rel_err = 0.0;            // diagnostic; beta is a fixed hyperparameter
    bool pass = false;
};

// |a - b| / max(|a|, |b|, floor) in the Euclidean norm. The floor turns the
// measure absolute for tensors whose true gradient vanishes (the key bias:
// softmax is invariant to a shift shared by every key).
double relative_error(std::span<const double> analytic, std::span<const double> numeric, double floor = 1e-6);

GradCheckResult gradient_check(std::uint64_t seed, const GradCheckOptions& opts = {});

} // namespace vdt
