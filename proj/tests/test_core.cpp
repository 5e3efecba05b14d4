#include "oracle.hpp"

#include "vdt/core.hpp"
#include "vdt/error.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>
#include <numbers>

using namespace vdt;

namespace {

ClassifierWeights basis2() { return ClassifierWeights(2, 2, {1.f, 0.f, 0.f, 1.f}, true); }

ErrorCode code_of(auto&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("expected vdt::Error");
    return ErrorCode::IoError;
}

} // namespace

TEST_CASE("embedding matrix rejects bad construction") {
    CHECK(code_of([] { EmbeddingMatrix(0, 2, {}); }) == ErrorCode::EmptyInput);
    CHECK(code_of([] { EmbeddingMatrix(1, 0, {}); }) == ErrorCode::EmptyInput);
    CHECK(code_of([] { EmbeddingMatrix(2, 2, {1.f, 2.f, 3.f}); }) == ErrorCode::DimMismatch);
    CHECK(code_of([] { EmbeddingMatrix(1, 2, {1.f, std::numeric_limits<float>::quiet_NaN()}); }) ==
          ErrorCode::NonFinite);
    CHECK(code_of([] { EmbeddingMatrix(1, 2, {std::numeric_limits<float>::infinity(), 0.f}); }) ==
          ErrorCode::NonFinite);
}

TEST_CASE("classifier weights check the normalized flag") {
    CHECK_NOTHROW(ClassifierWeights(1, 2, {0.6f, 0.8f}, true));
    CHECK(code_of([] { ClassifierWeights(1, 2, {1.f, 1.f}, true); }) == ErrorCode::InvalidArgument);
    CHECK_NOTHROW(ClassifierWeights(1, 2, {1.f, 1.f}, false));
}

TEST_CASE("labeled features validate labels") {
    LabeledFeatures d{EmbeddingMatrix(2, 1, {1.f, 2.f}), {0, 2}, {"a", "b"}};
    CHECK(code_of([&] { d.validate(); }) == ErrorCode::LabelOutOfRange);
    d.labels = {0};
    CHECK(code_of([&] { d.validate(); }) == ErrorCode::DimMismatch);
    d.labels = {0, -1};
    CHECK(code_of([&] { d.validate(); }) == ErrorCode::LabelOutOfRange);
    d.labels = {1, 0};
    CHECK_NOTHROW(d.validate());
}

TEST_CASE("l2_normalize 3-4-5") {
    const auto n = l2_normalize(EmbeddingMatrix(1, 2, {3.f, 4.f}));
    CHECK(n.at(0, 0) == doctest::Approx(0.6).epsilon(1e-7));
    CHECK(n.at(0, 1) == doctest::Approx(0.8).epsilon(1e-7));
}

TEST_CASE("l2_normalize leaves unit rows unchanged") {
    const EmbeddingMatrix m(2, 2, {1.f, 0.f, 0.f, 1.f});
    CHECK(l2_normalize(m) == m);
}

TEST_CASE("l2_normalize zero row") {
    const EmbeddingMatrix m(2, 2, {1.f, 0.f, 0.f, 0.f});
    CHECK(code_of([&] { l2_normalize(m); }) == ErrorCode::ZeroRow);
}

TEST_CASE("l2_normalize random rows have unit norm and keep direction; idempotent") {
    Rng rng(11);
    const auto m = oracle::random_matrix(rng, 5, 8);
    const auto n = l2_normalize(m);
    const auto raw = oracle::from(m);
    const auto un = oracle::from(n);
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK(std::sqrt(oracle::dot(un[i], un[i])) == doctest::Approx(1.0).epsilon(1e-6));
        const auto u = oracle::unit(raw[i]);
        for (std::size_t j = 0; j < 8; ++j) {
            CHECK(un[i][j] == doctest::Approx(u[j]).epsilon(1e-6));
        }
    }
    const auto nn = oracle::from(l2_normalize(n));
    CHECK(oracle::max_abs_diff(nn, un) < 1e-6);
}

TEST_CASE("logits orthonormal basis and tau scaling") {
    const EmbeddingMatrix f(1, 2, {1.f, 0.f});
    auto l = logits(f, basis2(), 1.0);
    CHECK(l(0, 0) == 1.0);
    CHECK(l(0, 1) == 0.0);
    l = logits(f, basis2(), 0.5);
    CHECK(l(0, 0) == 2.0);
    CHECK(l(0, 1) == 0.0);
}

TEST_CASE("logits errors") {
    const EmbeddingMatrix f(1, 3, {1.f, 0.f, 0.f});
    CHECK(code_of([&] { logits(f, basis2(), 1.0); }) == ErrorCode::DimMismatch);
    const EmbeddingMatrix g(1, 2, {1.f, 0.f});
    CHECK(code_of([&] { logits(g, basis2(), 0.0); }) == ErrorCode::NonPositiveTau);
    CHECK(code_of([&] { logits(g, basis2(), -1.0); }) == ErrorCode::NonPositiveTau);
}

TEST_CASE("logits match the double-loop oracle") {
    Rng rng(3);
    const auto f = l2_normalize(oracle::random_matrix(rng, 4, 3));
    const auto w = ClassifierWeights::from_real(l2_normalize(oracle::random_matrix(rng, 6, 3)).to_real(), true);
    const auto got = oracle::from(logits(f, w, 0.01));
    const auto want = oracle::logits(oracle::from(f), oracle::from(w), 0.01);
    CHECK(oracle::max_abs_diff(got, want) < 1e-5);
}

TEST_CASE("logits are linear in the feature scale") {
    Rng rng(5);
    const auto f = oracle::random_matrix(rng, 3, 4);
    const auto w = ClassifierWeights::from_real(oracle::random_matrix(rng, 2, 4).to_real(), false);
    const auto scaled = EmbeddingMatrix::from_real(f.to_real() * 2.0);
    const RealMatrix a = logits(scaled, w, 0.1);
    const RealMatrix b = 2.0 * logits(f, w, 0.1);
    CHECK((a - b).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("softmax examples") {
    auto p = softmax(std::vector<double>{0.0, 0.0});
    CHECK(p[0] == doctest::Approx(0.5));
    CHECK(p[1] == doctest::Approx(0.5));
    p = softmax(std::vector<double>{std::log(2.0), 0.0});
    CHECK(p[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(p[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    const auto big = softmax(std::vector<double>{1000.0, 999.0});
    const auto small = softmax(std::vector<double>{1.0, 0.0});
    CHECK(std::isfinite(big[0]));
    CHECK(big[0] == doctest::Approx(small[0]).epsilon(1e-12));
    CHECK(big[1] == doctest::Approx(small[1]).epsilon(1e-12));
}

TEST_CASE("log_softmax agrees with log of softmax and survives extreme inputs") {
    const std::vector<double> s{3.0, -1.0, 0.5};
    const auto p = softmax(s);
    const auto lp = log_softmax(s);
    for (std::size_t i = 0; i < s.size(); ++i) {
        CHECK(lp[i] == doctest::Approx(std::log(p[i])).epsilon(1e-12));
    }
    const auto extreme = log_softmax(std::vector<double>{0.0, -5000.0});
    CHECK(extreme[1] == doctest::Approx(-5000.0));
}

TEST_CASE("softmax rows sum to one on random inputs") {
    Rng rng(17);
    for (int t = 0; t < 200; ++t) {
        std::vector<double> s(1 + rng.below(20));
        for (auto& x : s) {
            x = rng.uniform(-300.0, 300.0);
        }
        double sum = 0.0;
        for (double x : softmax(s)) {
            CHECK(x >= 0.0);
            sum += x;
        }
        CHECK(std::abs(sum - 1.0) < 1e-6);
    }
}

TEST_CASE("predict argmax and tie break") {
    RealMatrix m(1, 2);
    m << 0.2, 0.8;
    CHECK(predict(m) == std::vector<int>{1});
    m << 0.5, 0.5;
    CHECK(predict(m) == std::vector<int>{0});
    CHECK(code_of([] { predict(RealMatrix(2, 0)); }) == ErrorCode::EmptyRow);
}

TEST_CASE("predict is invariant to softmax and positive scaling") {
    Rng rng(23);
    RealMatrix l(30, 7);
    for (Eigen::Index i = 0; i < l.size(); ++i) {
        l.data()[i] = rng.normal();
    }
    CHECK(predict(l) == predict(softmax_rows(l)));
    CHECK(predict(l) == predict(RealMatrix(l * 37.5)));
}

TEST_CASE("accuracy") {
    CHECK(accuracy(std::vector<int>{0, 1, 1, 2}, std::vector<int>{0, 1, 0, 2}) == 0.75);
    CHECK(code_of([] { accuracy(std::vector<int>{0}, std::vector<int>{0, 1}); }) == ErrorCode::DimMismatch);
}
