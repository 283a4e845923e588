#include <cmath>

#include <gtest/gtest.h>

#include "mpsum/selfcheck.hpp"
#include "mpsum/ssm.hpp"

using namespace mpsum;

TEST(Vocabulary, FirstOccurrenceOrder) {
    const Vocabulary v = build_vocab({"the cat"});
    EXPECT_EQ(v.tokens(), (std::vector<std::string>{"<pad>", "<unk>", "the", "cat"}));
    const Vocabulary w = build_vocab({"a b", "b c"});
    EXPECT_EQ(w.id("a"), 2);
    EXPECT_EQ(w.id("b"), 3);
    EXPECT_EQ(w.id("c"), 4);
    EXPECT_THROW(build_vocab({}), Error);
}

TEST(Vocabulary, TokenizeLooksUpTruncatesAndUsesUnk) {
    const Vocabulary v = build_vocab({"the cat"});
    EXPECT_EQ(tokenize("the cat", v), (std::vector<std::int32_t>{2, 3}));
    EXPECT_EQ(tokenize("the dog", v), (std::vector<std::int32_t>{2, 1}));
    EXPECT_TRUE(tokenize("", v).empty());
    std::string long_text;
    for (int i = 0; i < 200; ++i) long_text += "the ";
    EXPECT_EQ(tokenize(long_text, v).size(), 128u);
    EXPECT_EQ(tokenize(long_text, v, 5).size(), 5u);
}

TEST(Vocabulary, RoundTripsThroughTokenList) {
    const Vocabulary v = build_vocab({"x y z", "y w"});
    EXPECT_EQ(Vocabulary::from_tokens(v.tokens()).tokens(), v.tokens());
    EXPECT_THROW(Vocabulary::from_tokens({"<unk>", "<pad>"}), Error);
}

TEST(Hippo, ClosedFormEntries) {
    EXPECT_EQ(hippo_legs_matrix(1)(0, 0), -1.0);
    const Matrix h = hippo_legs_matrix(3);
    const double expect[3][3] = {{-1, 0, 0}, {-1.7320508, -2, 0}, {-2.2360680, -3.8729833, -3}};
    for (int n = 0; n < 3; ++n)
        for (int k = 0; k < 3; ++k) EXPECT_NEAR(h(n, k), expect[n][k], 5e-8);
    const Matrix h8 = hippo_legs_matrix(8);
    for (std::size_t n = 0; n < 8; ++n) EXPECT_EQ(h8(n, n), -static_cast<double>(n + 1));
    EXPECT_THROW(hippo_legs_matrix(0), Error);
}

TEST(InitParams, DiagonalAFromHippoAndDeterminism) {
    EncoderConfig cfg;
    cfg.d_model = 8;
    cfg.d_state = 4;
    const MambaParams p = init_params(cfg, 10, 5);
    const Matrix h = hippo_legs_matrix(4);
    for (const auto& layer : p.layers)
        for (std::size_t ch = 0; ch < cfg.d_inner(); ++ch)
            for (std::size_t n = 0; n < 4; ++n) EXPECT_EQ(layer.a(ch, n), h(n, n));
    EXPECT_EQ(init_params(cfg, 10, 5).layers[0].w_in, p.layers[0].w_in);
    EXPECT_NE(init_params(cfg, 10, 6).layers[0].w_in, p.layers[0].w_in);
    EXPECT_NEAR(softplus(p.layers[0].b_delta[0]), 0.01, 1e-15);
}

TEST(Discretize, ScalarReference) {
    const Discretized d = discretize(0.1, -1.0, 1.0);
    EXPECT_NEAR(d.a_bar, 0.9048374, 1e-7);
    EXPECT_NEAR(d.b_bar, 0.0951626, 1e-7);
}

TEST(Discretize, BranchesAgreeAtThreshold) {
    for (const double a : {-1.0, -3.0, -16.0}) {
        const double delta = 1e-4 / -a;
        const ZohFactor exact = zoh_factor(delta, a, 1e-6);
        const ZohFactor taylor = zoh_factor(delta, a, 1.0);
        EXPECT_NEAR(exact.phi, taylor.phi, 1e-12);
        EXPECT_NEAR(exact.dphi_ddelta, taylor.dphi_ddelta, 1e-12);
    }
}

TEST(Discretize, SmallDeltaLimit) {
    for (const double delta : {1e-6, 1e-8}) {
        const Discretized d = discretize(delta, -2.0, 3.0);
        EXPECT_NEAR(d.b_bar / delta, 3.0, 3.0 * 1e-6);
        EXPECT_LT(std::abs(d.a_bar), 1.0);
    }
}

TEST(Discretize, DomainChecks) {
    try {
        discretize(0.1, 0.0, 1.0);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::UnstableA);
    }
    EXPECT_THROW(discretize(0.0, -1.0, 1.0), Error);
}

namespace {

ScanInputs scalar_inputs(const std::vector<double>& a_bar, const std::vector<double>& drive, double c) {
    ScanInputs in{1, 1, Matrix(a_bar.size(), 1), Matrix(a_bar.size(), 1), Matrix(a_bar.size(), 1, c)};
    in.a_bar.data = a_bar;
    in.drive.data = drive;
    return in;
}

}  // namespace

TEST(Scan, HandUnroll) {
    const ScanInputs in = scalar_inputs({0.5, 0.5, 0.5}, {1, 1, 1}, 1.0);
    EXPECT_EQ(selective_scan_seq(in).data, (Vector{1.0, 1.5, 1.75}));
    EXPECT_EQ(selective_scan_parallel(in).data, (Vector{1.0, 1.5, 1.75}));
}

TEST(Scan, ZeroDriveGivesZeroOutput) {
    const ScanInputs in = scalar_inputs({0.3, 0.9, 0.1}, {0, 0, 0}, 2.0);
    EXPECT_EQ(selective_scan_seq(in).data, (Vector{0, 0, 0}));
    EXPECT_EQ(selective_scan_parallel(in).data, (Vector{0, 0, 0}));
}

TEST(Scan, GeometricClosedForm) {
    const double a = 0.8, b = 0.3;
    const std::size_t steps = 40;
    const ScanInputs in = scalar_inputs(Vector(steps, a), Vector(steps, b), 1.0);
    const Matrix y = selective_scan_parallel(in);
    for (std::size_t k = 1; k <= steps; ++k)
        EXPECT_NEAR(y(k - 1, 0), b * (1.0 - std::pow(a, static_cast<double>(k))) / (1.0 - a), 1e-14);
}

TEST(Scan, CombineIsAMonoid) {
    RngStream rng = rng_derive(4, "test/monoid");
    for (int i = 0; i < 1000; ++i) {
        const ScanElement x{rng.uniform(), rng.normal()}, y{rng.uniform(), rng.normal()}, z{rng.uniform(), rng.normal()};
        const ScanElement id = combine(ScanElement{}, x);
        EXPECT_EQ(id.a, x.a);
        EXPECT_EQ(id.b, x.b);
        const ScanElement l = combine(combine(x, y), z), r = combine(x, combine(y, z));
        EXPECT_NEAR(l.a, r.a, 1e-12);
        EXPECT_NEAR(l.b, r.b, 1e-12);
    }
}

TEST(Scan, BlellochMatchesNaivePrefixForEveryLength) {
    RngStream rng = rng_derive(5, "test/blelloch");
    for (std::size_t n = 0; n <= 70; ++n) {
        std::vector<ScanElement> e(n);
        for (auto& x : e) x = {rng.uniform(), rng.normal()};
        std::vector<ScanElement> expect = e;
        for (std::size_t i = 1; i < n; ++i) expect[i] = combine(expect[i - 1], e[i]);
        blelloch_inclusive_scan(e);
        for (std::size_t i = 0; i < n; ++i) {
            EXPECT_NEAR(e[i].a, expect[i].a, 1e-12);
            EXPECT_NEAR(e[i].b, expect[i].b, 1e-12);
        }
    }
}

TEST(Scan, ParallelMatchesSequentialOnRandomInputs) {
    RngStream rng = rng_derive(6, "test/scan");
    for (int c = 0; c < 5; ++c) {
        const ScanInputs in = random_scan_inputs(128, 16, 16, rng);
        const Matrix a = selective_scan_seq(in), b = selective_scan_parallel(in);
        for (std::size_t i = 0; i < a.data.size(); ++i) ASSERT_NEAR(a.data[i], b.data[i], 1e-10);
    }
}

TEST(Scan, ShapeMismatchIsRejected) {
    ScanInputs in = scalar_inputs({0.5, 0.5}, {1, 1}, 1.0);
    in.c = Matrix(3, 1);
    EXPECT_THROW(selective_scan_seq(in), Error);
    EXPECT_THROW(selective_scan_parallel(in), Error);
}
