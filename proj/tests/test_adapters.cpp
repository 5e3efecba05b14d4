#include "oracle.hpp"

#include "vdt/adapters.hpp"
#include "vdt/error.hpp"
#include "vdt/io.hpp"

#include <doctest.h>

#include <algorithm>
#include <filesystem>

using namespace vdt;
namespace fs = std::filesystem;

namespace {

std::vector<std::pair<std::string, std::vector<double*>>> entries(oracle::Params& p) {
    auto mat = [](oracle::Mat& m) {
        std::vector<double*> out;
        for (auto& row : m) {
            for (double& x : row) {
                out.push_back(&x);
            }
        }
        return out;
    };
    auto vec = [](oracle::Vec& v) {
        std::vector<double*> out;
        for (double& x : v) {
            out.push_back(&x);
        }
        return out;
    };
    return {{"w_q", mat(p.wq)}, {"b_q", vec(p.bq)}, {"w_k", mat(p.wk)}, {"b_k", vec(p.bk)},
            {"w_v", mat(p.wv)}, {"b_v", vec(p.bv)}, {"w_o", mat(p.wo)}, {"b_o", vec(p.bo)}};
}

double weighted_sum(const oracle::Mat& a, const RealMatrix& g) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        for (std::size_t j = 0; j < a[i].size(); ++j) {
            s += a[i][j] * g(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
        }
    }
    return s;
}

double rel_err(const std::vector<double>& a, const std::vector<double>& b) {
    double diff = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff += (a[i] - b[i]) * (a[i] - b[i]);
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), 1e-6});
}

bool abs_less(double a, double b) { return std::abs(a) < std::abs(b); }

RealMatrix random_real(Rng& rng, Eigen::Index r, Eigen::Index c) {
    RealMatrix m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        m.data()[i] = rng.normal();
    }
    return m;
}

SentenceBank permute_sentences(const SentenceBank& bank, Rng& rng) {
    std::vector<SentenceBlock> blocks;
    for (const auto& b : bank.blocks()) {
        std::vector<std::size_t> order(b.size());
        for (std::size_t i = 0; i < order.size(); ++i) {
            order[i] = i;
        }
        rng.shuffle(order);
        SentenceBlock nb;
        std::vector<float> v;
        for (std::size_t i : order) {
            nb.sentence_texts.push_back(b.sentence_texts[i]);
            v.insert(v.end(), b.embeddings.row(i).begin(), b.embeddings.row(i).end());
        }
        nb.embeddings = EmbeddingMatrix(b.size(), b.embeddings.dim(), v);
        blocks.push_back(nb);
    }
    return SentenceBank(bank.class_names(), blocks);
}

fs::path temp_path(const std::string& name) {
    const auto dir = fs::temp_directory_path() / "vdt_tests";
    fs::create_directories(dir);
    return dir / name;
}

} // namespace

TEST_CASE("adapter config validation") {
    AdapterConfig c;
    CHECK_NOTHROW(c.validate());
    c.beta = 1.5;
    CHECK_THROWS_AS(c.validate(), Error);
    c = {};
    c.alpha = -0.1;
    CHECK_THROWS_AS(c.validate(), Error);
    c = {};
    c.heads = 0;
    CHECK_THROWS_AS(c.validate(), Error);
}

TEST_CASE("heads must divide dim") {
    AdapterConfig c;
    c.heads = 3;
    CHECK_THROWS_AS(SelfAttentionParams::initialize(8, c), Error);
    c.heads = 4;
    CHECK(SelfAttentionParams::initialize(8, c).heads == 4);
}

TEST_CASE("initialization is seeded") {
    AdapterConfig c;
    c.seed = 42;
    const auto a = SelfAttentionParams::initialize(16, c);
    const auto b = SelfAttentionParams::initialize(16, c);
    CHECK(a.w_q == b.w_q);
    CHECK(a.w_o == b.w_o);
    c.seed = 43;
    CHECK(SelfAttentionParams::initialize(16, c).w_q != a.w_q);
    c.init = AttentionInit::Uniform;
    const auto u = SelfAttentionParams::initialize(16, c);
    CHECK(u.w_v.cwiseAbs().maxCoeff() <= 1.0 / 4.0 + 1e-12);
    CHECK(u.b_q.isZero());
}

TEST_CASE("zero-logit attention averages the tokens") {
    Rng rng(1);
    const auto x = oracle::random_matrix(rng, 4, 6).to_real();
    const auto out = attention_forward(SelfAttentionParams::mean_pooling(6), x);
    for (Eigen::Index i = 0; i < 4; ++i) {
        for (Eigen::Index j = 0; j < 4; ++j) {
            CHECK(out.attn(i, j) == doctest::Approx(0.25).epsilon(1e-12));
        }
        CHECK((out.outputs.row(i) - x.colwise().mean()).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("single token attends to itself") {
    Rng rng(2);
    const auto p = oracle::random_params(rng, 5);
    const auto x = oracle::random_matrix(rng, 1, 5).to_real();
    const auto out = attention_forward(p, x);
    CHECK(out.attn(0, 0) == 1.0);
    const RealMatrix want = ((x * p.w_v).rowwise() + p.b_v.transpose()) * p.w_o;
    const RealMatrix want_b = want.rowwise() + p.b_o.transpose();
    CHECK((out.outputs - want_b).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("attention matches the reference implementation") {
    Rng rng(3);
    for (std::size_t heads : {1u, 2u, 4u}) {
        const auto p = oracle::random_params(rng, 8, heads);
        const auto x = oracle::random_matrix(rng, 5, 8);
        const auto got = attention_forward(p, x);
        const auto want = oracle::attention(oracle::from(p), oracle::from(x));
        CHECK(oracle::max_abs_diff(oracle::from(got.outputs), want.outputs) < 1e-5);
        CHECK(oracle::max_abs_diff(oracle::from(got.attn), want.attn) < 1e-6);
    }
}

TEST_CASE("attention rows sum to one") {
    Rng rng(4);
    for (int t = 0; t < 50; ++t) {
        const std::size_t m = 1 + rng.below(8);
        const auto p = oracle::random_params(rng, 8, 1, 2.0);
        const auto out = attention_forward(p, oracle::random_matrix(rng, m, 8));
        for (Eigen::Index i = 0; i < out.attn.rows(); ++i) {
            CHECK(std::abs(out.attn.row(i).sum() - 1.0) < 1e-6);
        }
    }
}

TEST_CASE("attention dim mismatch") {
    Rng rng(5);
    try {
        attention_forward(SelfAttentionParams::zeros(4), oracle::random_matrix(rng, 2, 5));
        FAIL("expected DimMismatch");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::DimMismatch);
    }
}

TEST_CASE("beta zero reproduces mean_prototype bit for bit") {
    Rng rng(6);
    const auto bank = oracle::random_bank(rng, 5, 6, 12);
    const auto p = oracle::random_params(rng, 12);
    CHECK(adapted_classifier(p, bank, 0.0) == mean_prototype(bank));
}

TEST_CASE("beta one with mean-pooling parameters reproduces mean_prototype") {
    Rng rng(7);
    const auto bank = oracle::random_bank(rng, 4, 5, 8);
    const auto a = oracle::from(adapted_classifier(SelfAttentionParams::mean_pooling(8), bank, 1.0));
    CHECK(oracle::max_abs_diff(a, oracle::from(mean_prototype(bank))) < 1e-6);
}

TEST_CASE("adapted classifier matches the per-class loop oracle") {
    Rng rng(8);
    const auto bank = oracle::random_bank(rng, 3, 5, 8);
    const auto p = oracle::random_params(rng, 8);
    const auto got = oracle::from(adapted_classifier(p, bank, 0.5));
    const auto want = oracle::adapted(oracle::from(p), oracle::classes_of(bank), 0.5);
    CHECK(oracle::max_abs_diff(got, want) < 1e-5);
}

TEST_CASE("adapted classifier ignores sentence order within a class") {
    Rng rng(9);
    const auto bank = oracle::random_bank(rng, 6, 5, 16);
    const auto p = oracle::random_params(rng, 16);
    const auto a = oracle::from(adapted_classifier(p, bank, 0.7));
    const auto b = oracle::from(adapted_classifier(p, permute_sentences(bank, rng), 0.7));
    CHECK(oracle::max_abs_diff(a, b) < 1e-5);
}

TEST_CASE("classes do not interact") {
    Rng rng(10);
    const auto bank = oracle::random_bank(rng, 4, 4, 8);
    const auto p = oracle::random_params(rng, 8);
    auto blocks = bank.blocks();
    blocks[2].embeddings = oracle::random_matrix(rng, blocks[2].size(), 8);
    const auto a = adapted_classifier(p, bank, 0.5);
    const auto b = adapted_classifier(p, SentenceBank(bank.class_names(), blocks), 0.5);
    for (std::size_t k : {0u, 1u, 3u}) {
        const auto ra = a.row(k);
        const auto rb = b.row(k);
        CHECK(std::equal(ra.begin(), ra.end(), rb.begin()));
    }
}

TEST_CASE("backward without a trace") {
    const AdapterTape empty;
    try {
        backward(SelfAttentionParams::zeros(4), empty, RealMatrix::Zero(1, 4));
        FAIL("expected NoForwardTrace");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::NoForwardTrace);
    }
}

TEST_CASE("zero upstream gives zero gradients") {
    Rng rng(11);
    const auto bank = oracle::random_bank(rng, 3, 4, 8);
    const auto p = oracle::random_params(rng, 8);
    const auto fwd = adapted_forward(p, bank, 0.5);
    const auto g = backward(p, fwd.tape, RealMatrix::Zero(3, 8));
    for (const auto& t : g.params.tensors()) {
        for (double x : t.values) {
            CHECK(x == 0.0);
        }
    }
    CHECK(g.beta == 0.0);
}

TEST_CASE("attention gradients match finite differences of the oracle") {
    Rng rng(12);
    for (std::size_t heads : {1u, 2u}) {
        const auto bank = oracle::random_bank(rng, 3, 4, 8);
        const auto p = oracle::random_params(rng, 8, heads);
        const double beta = 0.6;
        const RealMatrix upstream = random_real(rng, 3, 8);
        const auto fwd = adapted_forward(p, bank, beta);
        const auto g = backward(p, fwd.tape, upstream);
        const auto analytic = g.params.tensors();

        const auto classes = oracle::classes_of(bank);
        auto op = oracle::from(p);
        auto views = entries(op);
        const double eps = 1e-5;
        for (std::size_t t = 0; t < views.size(); ++t) {
            std::vector<double> numeric;
            for (double* x : views[t].second) {
                const double keep = *x;
                *x = keep + eps;
                const double up = weighted_sum(oracle::adapted(op, classes, beta), upstream);
                *x = keep - eps;
                const double down = weighted_sum(oracle::adapted(op, classes, beta), upstream);
                *x = keep;
                numeric.push_back((up - down) / (2 * eps));
            }
            const std::vector<double> a(analytic[t].values.begin(), analytic[t].values.end());
            INFO("tensor " << views[t].first << " heads " << heads);
            if (views[t].first == "b_k") {
                // a shift shared by all keys leaves the softmax unchanged
                CHECK(*std::max_element(a.begin(), a.end(), abs_less) < 1e-12);
                CHECK(*std::max_element(numeric.begin(), numeric.end(), abs_less) < 1e-8);
            } else {
                CHECK(rel_err(a, numeric) < 1e-6);
            }
        }
        const double up = weighted_sum(oracle::adapted(op, classes, beta + eps), upstream);
        const double down = weighted_sum(oracle::adapted(op, classes, beta - eps), upstream);
        CHECK(g.beta == doctest::Approx((up - down) / (2 * eps)).epsilon(1e-6));
    }
}

TEST_CASE("beta gradient is the blended gradient projected on the attention shift") {
    Rng rng(13);
    const auto bank = oracle::random_bank(rng, 4, 3, 6);
    const auto p = oracle::random_params(rng, 6);
    const auto fwd = adapted_forward(p, bank, 0.3);
    const auto g = backward(p, fwd.tape, random_real(rng, 4, 6));
    double want = 0.0;
    for (std::size_t k = 0; k < 4; ++k) {
        const auto& r = fwd.tape.records[k];
        want += g.blended.row(static_cast<Eigen::Index>(k)).dot((r.w_amean - r.w_avg).transpose());
    }
    CHECK(g.beta == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("beta zero leaves the attention parameters without gradient") {
    Rng rng(14);
    const auto bank = oracle::random_bank(rng, 3, 4, 8);
    const auto p = oracle::random_params(rng, 8);
    const auto fwd = adapted_forward(p, bank, 0.0);
    const auto g = backward(p, fwd.tape, random_real(rng, 3, 8));
    for (const auto& t : g.params.tensors()) {
        for (double x : t.values) {
            CHECK(x == 0.0);
        }
    }
}

// ---- MLP adapter ----

TEST_CASE("mlp adapter with alpha zero is the identity on unit rows") {
    Rng rng(20);
    const auto f = l2_normalize(oracle::random_matrix(rng, 5, 8));
    const auto p = MlpAdapterParams::initialize(8, 4, 1);
    const auto out = mlp_adapter_visual(p, f, 0.0);
    CHECK(oracle::max_abs_diff(oracle::from(out), oracle::from(f)) < 1e-7);
}

TEST_CASE("mlp adapter with zero weights and alpha one collapses to the bias") {
    Rng rng(21);
    auto p = MlpAdapterParams::zeros(8, 4);
    p.b2 = RealVector::LinSpaced(8, 1.0, 8.0);
    const auto out = mlp_adapter_visual(p, oracle::random_matrix(rng, 3, 8), 1.0);
    const auto want = oracle::unit(oracle::from(p.b2));
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t j = 0; j < 8; ++j) {
            CHECK(out.at(i, j) == doctest::Approx(want[j]).epsilon(1e-6));
        }
    }
}

TEST_CASE("mlp adapter matches the reference loop") {
    Rng rng(22);
    auto p = MlpAdapterParams::initialize(8, 2, 5, 2.0);
    for (auto& t : p.tensors()) {
        for (double& x : t.values) {
            x = rng.normal();
        }
    }
    const auto f = oracle::random_matrix(rng, 6, 8);
    const auto got = oracle::from(mlp_adapter_visual(p, f, 0.4));
    const auto want =
        oracle::mlp(oracle::from(p.w1), oracle::from(p.b1), oracle::from(p.w2), oracle::from(p.b2), oracle::from(f), 0.4);
    CHECK(oracle::max_abs_diff(got, want) < 1e-5);
    const auto w = ClassifierWeights::from_real(f.to_real(), false);
    CHECK(oracle::max_abs_diff(oracle::from(mlp_adapter_text(p, w, 0.4)), want) < 1e-5);
}

TEST_CASE("mlp adapter errors") {
    Rng rng(23);
    CHECK_THROWS_AS(MlpAdapterParams::zeros(8, 3), Error);
    const auto p = MlpAdapterParams::zeros(8, 4);
    CHECK_THROWS_AS(mlp_adapter_visual(p, oracle::random_matrix(rng, 2, 6), 0.5), Error);
    CHECK_THROWS_AS(backward(p, MlpTape{}, RealMatrix::Zero(1, 8)), Error);
}

TEST_CASE("mlp gradients match finite differences of the reference loop") {
    Rng rng(24);
    auto p = MlpAdapterParams::zeros(8, 2);
    for (auto& t : p.tensors()) {
        for (double& x : t.values) {
            x = rng.normal();
        }
    }
    const RealMatrix x = random_real(rng, 5, 8);
    const RealMatrix upstream = random_real(rng, 5, 8);
    const double ratio = 0.7;
    const auto fwd = mlp_forward(p, x, ratio);
    const auto g = backward(p, fwd.tape, upstream);
    const auto analytic = g.params.tensors();

    auto w1 = oracle::from(p.w1), w2 = oracle::from(p.w2);
    auto b1 = oracle::from(p.b1), b2 = oracle::from(p.b2);
    const auto ox = oracle::from(x);
    auto loss = [&] { return weighted_sum(oracle::mlp(w1, b1, w2, b2, ox, ratio), upstream); };
    std::vector<std::vector<double*>> views(4);
    for (auto& r : w1) for (double& v : r) views[0].push_back(&v);
    for (double& v : b1) views[1].push_back(&v);
    for (auto& r : w2) for (double& v : r) views[2].push_back(&v);
    for (double& v : b2) views[3].push_back(&v);
    const double eps = 1e-6;
    for (std::size_t t = 0; t < 4; ++t) {
        std::vector<double> numeric;
        for (double* v : views[t]) {
            const double keep = *v;
            *v = keep + eps;
            const double up = loss();
            *v = keep - eps;
            const double down = loss();
            *v = keep;
            numeric.push_back((up - down) / (2 * eps));
        }
        const std::vector<double> a(analytic[t].values.begin(), analytic[t].values.end());
        INFO("tensor " << analytic[t].name);
        CHECK(rel_err(a, numeric) < 1e-5);
    }
}

// ---- checkpoint ----

TEST_CASE("checkpoint round trip") {
    Rng rng(30);
    const auto p = oracle::random_params(rng, 8, 2);
    const auto path = temp_path("adapter.ckpt");
    save_checkpoint(path, p, CheckpointInfo{77, 0.3, 0.02});
    CheckpointInfo info;
    const auto q = load_checkpoint(path, &info);
    CHECK(info.seed == 77);
    CHECK(info.beta == 0.3);
    CHECK(info.tau == 0.02);
    CHECK(q.heads == 2);
    const auto pt = p.tensors();
    const auto qt = q.tensors();
    REQUIRE(pt.size() == qt.size());
    for (std::size_t t = 0; t < pt.size(); ++t) {
        CHECK(pt[t].name == qt[t].name);
        for (std::size_t i = 0; i < pt[t].values.size(); ++i) {
            CHECK(qt[t].values[i] == static_cast<double>(static_cast<float>(pt[t].values[i])));
        }
    }
    // stored values are already real32, so a second save is byte-identical
    const auto path2 = temp_path("adapter2.ckpt");
    save_checkpoint(path2, q, info);
    CHECK(read_file(path) == read_file(path2));
}

TEST_CASE("checkpoint corruption") {
    Rng rng(31);
    const auto path = temp_path("bad.ckpt");
    save_checkpoint(path, oracle::random_params(rng, 4), CheckpointInfo{});
    const auto good = read_file(path);
    auto expect_code = [&](std::string bytes, ErrorCode code) {
        write_file_atomic(path, bytes);
        try {
            load_checkpoint(path);
            FAIL("expected error");
        } catch (const Error& e) {
            CHECK(e.code() == code);
        }
    };
    auto bad = good;
    bad[0] = 'X';
    expect_code(bad, ErrorCode::BadMagic);
    bad = good;
    bad[4] = 9;
    expect_code(bad, ErrorCode::UnsupportedVersion);
    expect_code(good.substr(0, good.size() - 4), ErrorCode::TruncatedPayload);
    expect_code(good.substr(0, 20), ErrorCode::TruncatedPayload);
}
