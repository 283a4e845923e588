#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "mpsum/numerics.hpp"

using namespace mpsum;

namespace {

Matrix random_symmetric(std::size_t n, RngStream& rng) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j <= i; ++j) m(i, j) = m(j, i) = rng.normal();
    return m;
}

}  // namespace

TEST(Jacobi, DiagonalInputIsReturnedAsIs) {
    Matrix m(2, 2);
    m(0, 0) = 2.0;
    m(1, 1) = 3.0;
    const auto e = jacobi_eigh(m);
    EXPECT_EQ(e.eigenvalues, (Vector{2.0, 3.0}));
    EXPECT_EQ(e.eigenvectors, Matrix::identity(2));
}

TEST(Jacobi, SwapMatrixHasEigenvaluesPlusMinusOne) {
    Matrix m(2, 2);
    m(0, 1) = m(1, 0) = 1.0;
    const auto e = jacobi_eigh(m);
    EXPECT_NEAR(e.eigenvalues[0], -1.0, 1e-15);
    EXPECT_NEAR(e.eigenvalues[1], 1.0, 1e-15);
    const double r = 1.0 / std::numbers::sqrt2;
    // Up to sign: (1,-1)/√2 then (1,1)/√2.
    EXPECT_NEAR(std::abs(e.eigenvectors(0, 0)), r, 1e-15);
    EXPECT_NEAR(e.eigenvectors(0, 0), -e.eigenvectors(1, 0), 1e-15);
    EXPECT_NEAR(e.eigenvectors(0, 1), e.eigenvectors(1, 1), 1e-15);
}

TEST(Jacobi, RandomSymmetricReconstructsAndIsOrthonormal) {
    RngStream rng = rng_derive(1, "test/jacobi");
    for (std::size_t n : {1u, 3u, 17u, 50u, 64u}) {
        const Matrix m = random_symmetric(n, rng);
        const auto e = jacobi_eigh(m);
        const double fm = frobenius_norm(m);
        Matrix mq = matmul(m, e.eigenvectors);
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t k = 0; k < n; ++k) mq(k, j) -= e.eigenvalues[j] * e.eigenvectors(k, j);
        EXPECT_LE(frobenius_norm(mq), 1e-8 * fm) << "n=" << n;

        Matrix qtq = matmul(transpose(e.eigenvectors), e.eigenvectors);
        for (std::size_t i = 0; i < n; ++i) qtq(i, i) -= 1.0;
        EXPECT_LE(frobenius_norm(qtq), 1e-8);

        Matrix d = matmul(transpose(e.eigenvectors), mq);  // ≈ 0 since mq is the residual
        EXPECT_LE(frobenius_norm(d), 1e-8 * fm);

        double trace = 0.0, sum = 0.0;
        for (std::size_t i = 0; i < n; ++i) trace += m(i, i), sum += e.eigenvalues[i];
        EXPECT_NEAR(trace, sum, 1e-8);
        EXPECT_TRUE(std::is_sorted(e.eigenvalues.begin(), e.eigenvalues.end()));
    }
}

TEST(Jacobi, RejectsBadInput) {
    EXPECT_THROW(jacobi_eigh(Matrix(2, 3)), Error);
    Matrix asym(2, 2);
    asym(0, 1) = 1.0;
    try {
        jacobi_eigh(asym);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::InvalidMatrix);
    }
    Matrix nan(1, 1, std::nan(""));
    EXPECT_THROW(jacobi_eigh(nan), Error);
}

TEST(Jacobi, SweepLimitRaisesNoConvergence) {
    RngStream rng = rng_derive(2, "test/jacobi");
    const Matrix m = random_symmetric(8, rng);
    try {
        jacobi_eigh(m, {.max_sweeps = 1, .tolerance = 1e-12});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::NoConvergence);
    }
}

TEST(Rng, SameSeedAndLabelGiveSameStream) {
    RngStream a = rng_derive(42, "init"), b = rng_derive(42, "init");
    for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, DifferentLabelOrSeedGiveDifferentStreams) {
    auto first100 = [](RngStream s) {
        std::vector<std::uint64_t> v;
        for (int i = 0; i < 100; ++i) v.push_back(s.next_u64());
        return v;
    };
    const auto base = first100(rng_derive(42, "init"));
    const auto other_label = first100(rng_derive(42, "dropout"));
    const auto other_seed = first100(rng_derive(43, "init"));
    for (int i = 0; i < 100; ++i) {
        EXPECT_NE(base[i], other_label[i]);
        EXPECT_NE(base[i], other_seed[i]);
    }
    EXPECT_NE(first100(rng_derive(42, "init").child("a")), first100(rng_derive(42, "init").child("b")));
}

TEST(Rng, UniformAndNormalMoments) {
    RngStream rng = rng_derive(7, "test/moments");
    const int n = 200000;
    double su = 0.0, sn = 0.0, sn2 = 0.0;
    for (int i = 0; i < n; ++i) {
        const double u = rng.uniform();
        ASSERT_GE(u, 0.0);
        ASSERT_LT(u, 1.0);
        su += u;
        const double z = rng.normal();
        sn += z;
        sn2 += z * z;
    }
    // 5-sigma bands of the sample mean / variance estimators.
    EXPECT_NEAR(su / n, 0.5, 5.0 * std::sqrt(1.0 / 12.0 / n));
    EXPECT_NEAR(sn / n, 0.0, 5.0 / std::sqrt(n));
    EXPECT_NEAR(sn2 / n, 1.0, 5.0 * std::sqrt(2.0 / n));
}

TEST(Rng, ShuffleIsAPermutation) {
    RngStream rng = rng_derive(3, "shuffle");
    std::vector<int> v(50);
    std::iota(v.begin(), v.end(), 0);
    auto w = v;
    rng.shuffle(w);
    EXPECT_NE(v, w);
    std::sort(w.begin(), w.end());
    EXPECT_EQ(v, w);
}

TEST(Scalars, HandValues) {
    EXPECT_NEAR(softplus(0.0), std::log(2.0), 1e-15);
    EXPECT_EQ(sigmoid(0.0), 0.5);
    EXPECT_EQ(arcosh(1.0), 0.0);
    EXPECT_EQ(artanh(0.0), 0.0);
    EXPECT_NEAR(artanh(0.5), 0.5 * std::log(3.0), 1e-15);
}

TEST(Scalars, SoftplusIsStableAndBounded) {
    for (double x = -700.0; x <= 700.0; x += 0.37) {
        const double s = softplus(x);
        ASSERT_TRUE(std::isfinite(s)) << x;
        ASSERT_GE(s, std::max(0.0, x)) << x;
    }
    EXPECT_EQ(softplus(700.0) - 700.0, 0.0);
    EXPECT_GT(softplus(-700.0), 0.0);
    EXPECT_EQ(sigmoid(-800.0), 0.0);
    EXPECT_EQ(sigmoid(800.0), 1.0);
}

TEST(Scalars, ArcoshInvertsCosh) {
    for (int i = 0; i <= 2000; ++i) {
        const double t = 0.01 * i;
        ASSERT_NEAR(arcosh(std::cosh(t)), t, 1e-10) << t;
    }
}

TEST(Scalars, DomainErrors) {
    EXPECT_THROW(arcosh(0.999), Error);
    EXPECT_THROW(artanh(1.0), Error);
    EXPECT_THROW(artanh(-1.0), Error);
    EXPECT_THROW(arcosh(std::nan("")), Error);
}
