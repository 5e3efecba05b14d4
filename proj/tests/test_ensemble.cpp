#include "oracle.hpp"

#include "vdt/ensemble.hpp"
#include "vdt/error.hpp"

#include <doctest.h>

#include <algorithm>

using namespace vdt;

namespace {

SentenceBlock block(std::size_t m, std::size_t dim, std::vector<float> v) {
    SentenceBlock b;
    for (std::size_t i = 0; i < m; ++i) {
        b.sentence_texts.push_back("s" + std::to_string(i));
    }
    b.embeddings = EmbeddingMatrix(m, dim, std::move(v));
    return b;
}

// Tight clouds around orthogonal axes; every point is closer to its own axis.
LabeledFeatures separable_clouds(Rng& rng, std::size_t classes, std::size_t dim, std::size_t per_class) {
    LabeledFeatures d;
    std::vector<float> v;
    for (std::size_t k = 0; k < classes; ++k) {
        d.class_names.push_back("c" + std::to_string(k));
        for (std::size_t i = 0; i < per_class; ++i) {
            for (std::size_t j = 0; j < dim; ++j) {
                v.push_back(static_cast<float>((j == k ? 1.0 : 0.0) + 0.05 * rng.normal()));
            }
            d.labels.push_back(static_cast<int>(k));
        }
    }
    d.features = EmbeddingMatrix(classes * per_class, dim, std::move(v));
    return d;
}

} // namespace

TEST_CASE("sentence bank validation") {
    CHECK_THROWS_AS(SentenceBank({}, {}), Error);
    auto b = block(2, 2, {1, 0, 0, 1});
    b.sentence_texts.pop_back();
    try {
        SentenceBank({"a"}, {b});
        FAIL("expected DimMismatch");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::DimMismatch);
    }
    try {
        SentenceBank({"a", "b"}, {block(1, 2, {1, 0}), block(1, 3, {1, 0, 0})});
        FAIL("expected DimMismatch");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::DimMismatch);
    }
}

TEST_CASE("mean_prototype of two orthogonal sentences") {
    const SentenceBank bank({"a"}, {block(2, 2, {1, 0, 0, 1})});
    const auto w = mean_prototype(bank);
    CHECK(w.normalized());
    CHECK(w.row(0)[0] == doctest::Approx(0.70710678).epsilon(1e-7));
    CHECK(w.row(0)[1] == doctest::Approx(0.70710678).epsilon(1e-7));
}

TEST_CASE("mean_prototype single sentence equals normalized sentence") {
    const SentenceBank bank({"a"}, {block(1, 2, {3, 4})});
    const auto w = mean_prototype(bank);
    CHECK(w.row(0)[0] == doctest::Approx(0.6).epsilon(1e-7));
    CHECK(w.row(0)[1] == doctest::Approx(0.8).epsilon(1e-7));
}

TEST_CASE("mean_prototype with M=1 everywhere equals normalized stacked sentences") {
    Rng rng(2);
    const auto bank = oracle::random_bank(rng, 5, 1, 6, false);
    std::vector<float> stacked;
    for (const auto& b : bank.blocks()) {
        stacked.insert(stacked.end(), b.embeddings.values().begin(), b.embeddings.values().end());
    }
    const auto n = l2_normalize(EmbeddingMatrix(5, 6, stacked));
    const auto w = mean_prototype(bank);
    for (std::size_t k = 0; k < 5; ++k) {
        for (std::size_t j = 0; j < 6; ++j) {
            CHECK(w.row(k)[j] == doctest::Approx(n.at(k, j)).epsilon(1e-6));
        }
    }
}

TEST_CASE("mean_prototype matches the per-class loop oracle") {
    Rng rng(4);
    const auto bank = oracle::random_bank(rng, 3, 4, 8, false);
    const auto got = oracle::from(mean_prototype(bank));
    const auto want = oracle::mean_prototype(oracle::classes_of(bank));
    CHECK(oracle::max_abs_diff(got, want) < 1e-6);
}

TEST_CASE("mean_prototype ignores sentence order and duplicates") {
    Rng rng(6);
    const auto bank = oracle::random_bank(rng, 4, 5, 8, true);
    std::vector<SentenceBlock> permuted, doubled;
    for (const auto& b : bank.blocks()) {
        const auto m = b.size();
        const auto dim = b.embeddings.dim();
        std::vector<std::size_t> order(m);
        for (std::size_t i = 0; i < m; ++i) {
            order[i] = i;
        }
        std::reverse(order.begin(), order.end());
        std::vector<float> pv, dv;
        for (std::size_t i : order) {
            pv.insert(pv.end(), b.embeddings.row(i).begin(), b.embeddings.row(i).end());
        }
        dv.insert(dv.end(), b.embeddings.values().begin(), b.embeddings.values().end());
        dv.insert(dv.end(), b.embeddings.values().begin(), b.embeddings.values().end());
        permuted.push_back(block(m, dim, pv));
        doubled.push_back(block(2 * m, dim, dv));
    }
    const auto base = oracle::from(mean_prototype(bank));
    CHECK(oracle::max_abs_diff(oracle::from(mean_prototype(SentenceBank(bank.class_names(), permuted))), base) < 1e-6);
    CHECK(oracle::max_abs_diff(oracle::from(mean_prototype(SentenceBank(bank.class_names(), doubled))), base) < 1e-6);
}

TEST_CASE("mean_prototype propagates ZeroRow") {
    const SentenceBank bank({"a"}, {block(1, 2, {0, 0})});
    try {
        mean_prototype(bank);
        FAIL("expected ZeroRow");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::ZeroRow);
    }
}

TEST_CASE("opposite sentences cancel to a zero prototype") {
    const SentenceBank bank({"a"}, {block(2, 2, {1, 0, -1, 0})});
    CHECK_THROWS_AS(mean_prototype(bank), Error);
}

TEST_CASE("score ensemble matches the double-loop oracle") {
    Rng rng(8);
    for (int t = 0; t < 10; ++t) {
        const std::size_t k = 2 + rng.below(5);
        const std::size_t dim = 2 + rng.below(15);
        const auto bank = oracle::random_bank(rng, k, 5, dim, true);
        const auto data = oracle::random_features(rng, 7, dim, k);
        const auto got = oracle::from(score_ensemble_probs(data, bank, 0.05));
        const auto want = oracle::score_probs(oracle::from(data.features), oracle::classes_of(bank), 0.05);
        CHECK(oracle::max_abs_diff(got, want) < 1e-5);
    }
}

TEST_CASE("score ensemble with one sentence per class agrees with the prototype path") {
    Rng rng(9);
    const auto bank = oracle::random_bank(rng, 4, 1, 6, false);
    const auto data = oracle::random_features(rng, 20, 6, 4);
    const auto probs = score_ensemble_probs(data, bank, 0.01);
    const auto l = logits(l2_normalize(data.features), mean_prototype(bank), 0.01);
    CHECK(predict(probs) == predict(l));
}

TEST_CASE("score ensemble counts a duplicated sentence once") {
    Rng rng(10);
    const auto bank = oracle::random_bank(rng, 2, 1, 4, false);
    const auto& b0 = bank.block(0);
    std::vector<float> twice(b0.embeddings.values().begin(), b0.embeddings.values().end());
    twice.insert(twice.end(), b0.embeddings.values().begin(), b0.embeddings.values().end());
    const SentenceBank dup(bank.class_names(), {block(2, 4, twice), bank.block(1)});
    const auto data = oracle::random_features(rng, 5, 4, 2);
    const RealMatrix a = score_ensemble_probs(data, bank, 0.1);
    const RealMatrix b = score_ensemble_probs(data, dup, 0.1);
    CHECK((a - b).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("score ensemble dim mismatch") {
    Rng rng(12);
    const auto bank = oracle::random_bank(rng, 2, 2, 4);
    const auto data = oracle::random_features(rng, 3, 5, 2);
    try {
        score_ensemble_probs(data, bank, 0.01);
        FAIL("expected DimMismatch");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::DimMismatch);
    }
}

TEST_CASE("zero-shot on separable clouds with mean prototypes is perfect") {
    Rng rng(13);
    const auto data = separable_clouds(rng, 4, 8, 25);
    // prototypes: per-class mean of the cloud, as single-sentence blocks
    std::vector<SentenceBlock> blocks;
    const auto f = oracle::from(data.features);
    for (std::size_t k = 0; k < 4; ++k) {
        std::vector<float> mean(8, 0.f);
        for (std::size_t i = 0; i < f.size(); ++i) {
            if (data.labels[i] == static_cast<int>(k)) {
                for (std::size_t j = 0; j < 8; ++j) {
                    mean[j] += static_cast<float>(f[i][j] / 25.0);
                }
            }
        }
        blocks.push_back(block(1, 8, mean));
    }
    const SentenceBank bank(data.class_names, blocks);
    CHECK(zero_shot_eval(data, mean_prototype(bank), 0.01) == 1.0);
    CHECK(score_ensemble_eval(data, bank, 0.01) == 1.0);
}

TEST_CASE("identical prototypes fall back to class 0") {
    Rng rng(14);
    auto data = oracle::random_features(rng, 12, 3, 3);
    data.labels = {0, 0, 0, 0, 0, 1, 1, 1, 2, 2, 2, 2};
    const ClassifierWeights w(3, 3, {1, 0, 0, 1, 0, 0, 1, 0, 0}, true);
    CHECK(zero_shot_eval(data, w, 0.01) == doctest::Approx(5.0 / 12.0));
}

TEST_CASE("zero-shot accuracy is unchanged by rescaling prototypes before normalization") {
    Rng rng(15);
    const auto bank = oracle::random_bank(rng, 5, 3, 8);
    const auto data = oracle::random_features(rng, 40, 8, 5);
    std::vector<SentenceBlock> scaled;
    for (const auto& b : bank.blocks()) {
        auto sb = b;
        sb.embeddings = EmbeddingMatrix::from_real(b.embeddings.to_real() * 4.0);
        scaled.push_back(sb);
    }
    CHECK(zero_shot_eval(data, mean_prototype(bank)) ==
          zero_shot_eval(data, mean_prototype(SentenceBank(bank.class_names(), scaled))));
}

TEST_CASE("zero_shot_eval class count mismatch") {
    Rng rng(16);
    const auto data = oracle::random_features(rng, 6, 4, 3);
    const auto bank = oracle::random_bank(rng, 2, 2, 4);
    try {
        zero_shot_eval(data, mean_prototype(bank));
        FAIL("expected DimMismatch");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::DimMismatch);
    }
}

TEST_CASE("single_prompt_bank and subset") {
    const EmbeddingMatrix prompts(3, 2, {1, 0, 0, 1, 1, 1});
    const auto bank = single_prompt_bank({"a", "b", "c"}, prompts);
    CHECK(bank.classes() == 3);
    CHECK(bank.block(2).size() == 1);
    const auto sub = bank.subset({2, 0});
    CHECK(sub.class_names() == std::vector<std::string>{"c", "a"});
    CHECK(sub.block(1).embeddings == bank.block(0).embeddings);
}
