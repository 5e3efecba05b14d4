#pragma once

// Seeded synthetic few-shot benchmark: Gaussian image clouds around random
// class centres, and per-class sentence banks mixing informative sentences
// (near the class centre) with distractor sentences (random directions,
// optionally leaning towards one look-alike class per class).
// Informative and distractor sentences each carry a shared marker direction,
// so the attention adapter can learn which slots to trust and carry that
// over to unseen classes.

#include "vdt/core.hpp"
#include "vdt/ensemble.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace vdt {

struct SyntheticConfig {
    std::size_t classes = 10;
    std::size_t dim = 32;
    std::size_t informative = 3;
    std::size_t noise = 5;
    std::size_t train_per_class = 16;
    std::size_t test_per_class = 50;
    double image_noise = 0.5;    // isotropic noise norm relative to the unit centre
    double sentence_noise = 0.3; // jitter on informative sentences
    double marker = 3.0;         // weight of the shared slot markers
    double confusion = 0.8;      // share of each distractor pointing at the look-alike class centre
    std::uint64_t seed = 0;
};

struct SyntheticBenchmark {
    std::vector<std::string> class_names;
    std::vector<std::string> attribute_names; // informative slots first, then distractors
    SentenceBank bank;
    LabeledFeatures train;
    LabeledFeatures test;
};

SyntheticBenchmark make_synthetic(const SyntheticConfig& cfg);

} // namespace vdt
