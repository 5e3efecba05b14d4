#include "vdt/synthetic.hpp"

#include "vdt/error.hpp"
#include "vdt/random.hpp"

#include <cmath>

namespace vdt {

namespace {

RealVector gaussian_direction(Rng& rng, Eigen::Index dim) {
    RealVector v(dim);
    for (Eigen::Index i = 0; i < dim; ++i) {
        v(i) = rng.normal();
    }
    return v / v.norm();
}

// Isotropic Gaussian with expected squared norm scale^2.
RealVector gaussian_noise(Rng& rng, Eigen::Index dim, double scale) {
    RealVector v(dim);
    for (Eigen::Index i = 0; i < dim; ++i) {
        v(i) = rng.normal() * scale / std::sqrt(static_cast<double>(dim));
    }
    return v;
}

void append_row(std::vector<float>& out, const RealVector& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        out.push_back(static_cast<float>(v(i)));
    }
}

LabeledFeatures sample_images(Rng& rng, const std::vector<RealVector>& centres, std::size_t per_class,
                              double noise, const std::vector<std::string>& names) {
    const auto dim = centres.front().size();
    std::vector<float> values;
    std::vector<int> labels;
    for (std::size_t k = 0; k < centres.size(); ++k) {
        for (std::size_t i = 0; i < per_class; ++i) {
            RealVector f = centres[k] + gaussian_noise(rng, dim, noise);
            append_row(values, f / f.norm());
            labels.push_back(static_cast<int>(k));
        }
    }
    return LabeledFeatures{EmbeddingMatrix(labels.size(), static_cast<std::size_t>(dim), std::move(values)),
                           std::move(labels), names};
}

} // namespace

SyntheticBenchmark make_synthetic(const SyntheticConfig& cfg) {
    if (cfg.classes < 1 || cfg.dim < 2 || cfg.informative + cfg.noise == 0 || cfg.train_per_class == 0 ||
        cfg.test_per_class == 0) {
        throw Error(ErrorCode::InvalidArgument, "degenerate synthetic configuration");
    }
    Rng rng(cfg.seed);
    const auto dim = static_cast<Eigen::Index>(cfg.dim);

    SyntheticBenchmark out;
    for (std::size_t k = 0; k < cfg.classes; ++k) {
        out.class_names.push_back("class_" + std::to_string(k));
    }
    for (std::size_t m = 0; m < cfg.informative; ++m) {
        out.attribute_names.push_back("informative_" + std::to_string(m));
    }
    for (std::size_t m = 0; m < cfg.noise; ++m) {
        out.attribute_names.push_back("distractor_" + std::to_string(m));
    }

    const RealVector informative_marker = gaussian_direction(rng, dim);
    const RealVector distractor_marker = gaussian_direction(rng, dim);
    std::vector<RealVector> centres;
    for (std::size_t k = 0; k < cfg.classes; ++k) {
        centres.push_back(gaussian_direction(rng, dim));
    }

    std::vector<SentenceBlock> blocks;
    const std::size_t per_class = cfg.informative + cfg.noise;
    for (std::size_t k = 0; k < cfg.classes; ++k) {
        std::vector<float> values;
        std::vector<std::string> texts;
        const std::size_t look_alike = cfg.classes > 1 ? (k + 1 + rng.below(cfg.classes - 1)) % cfg.classes : k;
        for (std::size_t m = 0; m < cfg.informative; ++m) {
            append_row(values, centres[k] + cfg.marker * informative_marker +
                                   gaussian_noise(rng, dim, cfg.sentence_noise));
            texts.push_back(out.class_names[k] + " " + out.attribute_names[m]);
        }
        for (std::size_t m = 0; m < cfg.noise; ++m) {
            RealVector d = gaussian_direction(rng, dim);
            if (look_alike != k && cfg.confusion > 0.0) {
                d = (1.0 - cfg.confusion) * d + cfg.confusion * centres[look_alike];
                d /= d.norm();
            }
            append_row(values, d + cfg.marker * distractor_marker);
            texts.push_back(out.class_names[k] + " " + out.attribute_names[cfg.informative + m]);
        }
        blocks.push_back(SentenceBlock{std::move(texts), EmbeddingMatrix(per_class, cfg.dim, std::move(values)),
                                       out.attribute_names});
    }
    out.bank = SentenceBank(out.class_names, std::move(blocks));
    out.train = sample_images(rng, centres, cfg.train_per_class, cfg.image_noise, out.class_names);
    out.test = sample_images(rng, centres, cfg.test_per_class, cfg.image_noise, out.class_names);
    return out;
}

} // namespace vdt
