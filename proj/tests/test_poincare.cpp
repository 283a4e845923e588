#include <cmath>
#include <map>

#include <gtest/gtest.h>

#include "mpsum/poincare.hpp"
#include "mpsum/selfcheck.hpp"

using namespace mpsum;

namespace {

Vector ball_point(RngStream& rng, std::size_t dim, double max_norm = 0.99) {
    Vector p(dim);
    for (auto& v : p) v = rng.normal();
    const double target = max_norm * rng.uniform();
    const double n = norm(p);
    for (auto& v : p) v *= target / n;
    return p;
}

/// Two Gaussian blobs, centers 10 apart along the first axis.
Matrix blobs(std::size_t per_blob, std::size_t dim, double sigma, RngStream& rng) {
    Matrix m(2 * per_blob, dim);
    for (std::size_t i = 0; i < 2 * per_blob; ++i) {
        for (auto& v : m.row(i)) v = sigma * rng.normal();
        if (i >= per_blob) m(i, 0) += 10.0;
    }
    return m;
}

/// Fraction of points whose cluster's majority label equals their own label.
double purity(const std::vector<std::size_t>& assign, std::size_t per_blob) {
    std::map<std::size_t, std::array<std::size_t, 2>> table;
    for (std::size_t i = 0; i < assign.size(); ++i) ++table[assign[i]][i >= per_blob ? 1 : 0];
    std::size_t hit = 0;
    for (const auto& [c, counts] : table) hit += std::max(counts[0], counts[1]);
    return static_cast<double>(hit) / static_cast<double>(assign.size());
}

}  // namespace

TEST(PoincareDistance, HandValues) {
    const Vector a{0.3, -0.2};
    EXPECT_EQ(poincare_distance(a, a), 0.0);
    const Vector origin{0.0, 0.0}, b{0.6, 0.0};
    EXPECT_NEAR(poincare_distance(origin, b), std::log(4.0), 1e-12);
    EXPECT_NEAR(poincare_distance(origin, b), arcosh(2.125), 1e-12);
}

TEST(PoincareDistance, MetricAxiomsOnRandomTriples) {
    RngStream rng = rng_derive(1, "test/poincare");
    for (int i = 0; i < 1000; ++i) {
        const Vector a = ball_point(rng, 6), b = ball_point(rng, 6), c = ball_point(rng, 6);
        const double ab = poincare_distance(a, b);
        ASSERT_GE(ab, 0.0);
        ASSERT_EQ(ab, poincare_distance(b, a));
        ASSERT_EQ(poincare_distance(a, a), 0.0);
        ASSERT_LE(poincare_distance(a, c), ab + poincare_distance(b, c) + 1e-9);
        const Vector zero(6, 0.0);
        ASSERT_NEAR(poincare_distance(zero, b), 2.0 * artanh(norm(b)), 1e-9);
    }
}

TEST(PoincareDistance, MonotoneAlongARay) {
    const Vector zero(3, 0.0);
    double prev = 0.0;
    for (int i = 1; i < 99; ++i) {
        const double t = 0.01 * i;
        const double d = poincare_distance(zero, Vector{t * 0.6, t * 0.8, 0.0});
        ASSERT_GT(d, prev);
        prev = d;
    }
}

TEST(PoincareDistance, Errors) {
    EXPECT_THROW(poincare_distance(Vector{1.0, 0.0}, Vector{0.0, 0.0}), Error);
    EXPECT_THROW(poincare_distance(Vector{0.1}, Vector{0.0, 0.0}), Error);
}

TEST(BallScaler, FitAndClamp) {
    Matrix m(2, 2);
    m(0, 0) = 2.0;  // norm 2, second row is the zero vector
    const BallScaler s = fit_ball_scaler(m);
    EXPECT_EQ(s.scale, 0.45);
    EXPECT_NEAR(norm(s.project(m.row(0))), 0.9, 1e-15);
    EXPECT_EQ(s.project(m.row(1)), (Vector{0.0, 0.0}));
    EXPECT_NEAR(norm(s.project(Vector{0.0, 4.0})), 0.99, 1e-15);
    EXPECT_THROW(fit_ball_scaler(Matrix(3, 2)), Error);
}

TEST(Affinity, KernelValues) {
    Matrix p(3, 1);
    p.data = {0.0, 0.0, 1.0};  // distances 0, 1, 1 -> median nonzero = 1
    const Matrix w = rbf_affinity(p);
    EXPECT_EQ(w(0, 1), 1.0);
    EXPECT_EQ(w(0, 0), 0.0);
    EXPECT_NEAR(w(0, 2), std::exp(-0.5), 1e-15);
    EXPECT_EQ(w(2, 0), w(0, 2));
    EXPECT_THROW(rbf_affinity(Matrix(1, 2)), Error);
}

TEST(Spectral, TwoCliquesSeparate) {
    Matrix w(6, 6);
    for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t j = 0; j < 6; ++j)
            if (i != j && (i < 3) == (j < 3)) w(i, j) = 1.0;
    const Matrix e = spectral_embed(w, 2);
    for (std::size_t i = 0; i < 6; ++i) {
        EXPECT_NEAR(norm(e.row(i)), 1.0, 1e-12);
        const std::size_t rep = i < 3 ? 0 : 3;
        for (std::size_t d = 0; d < 2; ++d) EXPECT_NEAR(e(i, d), e(rep, d), 1e-9);
    }
    EXPECT_GT(std::sqrt(squared_distance(e.row(0), e.row(3))), 1.0);
}

TEST(Spectral, DisconnectedGraphAndErrors) {
    const Matrix e = spectral_embed(Matrix(4, 4), 2);
    for (std::size_t i = 0; i < 4; ++i) {
        const double r = norm(e.row(i));
        EXPECT_TRUE(r == 0.0 || std::abs(r - 1.0) < 1e-12);
    }
    EXPECT_THROW(spectral_embed(Matrix(3, 3), 4), Error);
    EXPECT_THROW(spectral_embed(Matrix(3, 3), 1), Error);
}

TEST(KMeans, TrivialAndDegenerate) {
    Matrix p(2, 1);
    p.data = {0.0, 10.0};
    RngStream rng = rng_derive(1, "cluster");
    const KMeansResult r = kmeans(p, 2, rng);
    EXPECT_NE(r.assignments[0], r.assignments[1]);
    EXPECT_EQ(r.means(r.assignments[0], 0), 0.0);
    EXPECT_EQ(r.means(r.assignments[1], 0), 10.0);

    Matrix same(5, 2, 3.0);
    RngStream rng2 = rng_derive(2, "cluster");
    const KMeansResult d = kmeans(same, 2, rng2);
    for (const double v : d.means.data) EXPECT_TRUE(std::isfinite(v));
    for (const auto a : d.assignments) EXPECT_EQ(a, d.assignments[0]);
    EXPECT_THROW(kmeans(p, 3, rng), Error);
}

TEST(KMeans, BlobPurity) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        RngStream data = rng_derive(seed, "test/blobs");
        const Matrix m = blobs(50, 2, 0.1, data);
        RngStream rng = rng_derive(seed, "cluster");
        EXPECT_EQ(purity(kmeans(m, 2, rng).assignments, 50), 1.0) << seed;
    }
}

TEST(SpectralClustering, BlobPurityAcrossSeeds) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        RngStream data = rng_derive(seed, "test/blobs");
        const Matrix m = blobs(50, 2, 0.1, data);
        const Matrix emb = spectral_embed(rbf_affinity(m), 2);
        RngStream rng = rng_derive(seed, "cluster");
        EXPECT_EQ(purity(kmeans(emb, 2, rng).assignments, 50), 1.0) << seed;
    }
}

TEST(Compressor, CentroidsNearBlobMeans) {
    RngStream data = rng_derive(3, "test/blobs");
    const Matrix m = blobs(30, 4, 0.1, data);
    const PoincareCompressor c = fit_compressor(m, 3, {.n_clusters = 2});
    ASSERT_EQ(c.n_clusters(), 2u);
    Vector mean_a(4, 0.0), mean_b(4, 0.0);
    for (std::size_t i = 0; i < 60; ++i) {
        const Vector p = c.scaler.project(m.row(i));
        for (std::size_t d = 0; d < 4; ++d) (i < 30 ? mean_a : mean_b)[d] += p[d] / 30.0;
    }
    const double da = std::min(squared_distance(c.centroids.row(0), mean_a), squared_distance(c.centroids.row(1), mean_a));
    const double db = std::min(squared_distance(c.centroids.row(0), mean_b), squared_distance(c.centroids.row(1), mean_b));
    EXPECT_LT(std::sqrt(da), 1e-12);
    EXPECT_LT(std::sqrt(db), 1e-12);
    for (std::size_t j = 0; j < 2; ++j) EXPECT_LT(norm(c.centroids.row(j)), 1.0);
}

TEST(Compressor, SingletonClustersAreTheScaledPoints) {
    RngStream rng = rng_derive(4, "test/singleton");
    Matrix m(5, 3);
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t d = 0; d < 3; ++d) m(i, d) = 10.0 * static_cast<double>(i) + 0.1 * rng.normal();
    const PoincareCompressor c = fit_compressor(m, 4, {.n_clusters = 5});
    for (std::size_t i = 0; i < 5; ++i) {
        const Vector p = c.scaler.project(m.row(i));
        bool found = false;
        for (std::size_t j = 0; j < 5; ++j) found = found || squared_distance(c.centroids.row(j), p) == 0.0;
        EXPECT_TRUE(found) << i;
    }
}

TEST(Compressor, DeterministicAndSubsampled) {
    RngStream rng = rng_derive(5, "test/sub");
    Matrix m(600, 4);
    for (auto& v : m.data) v = rng.normal();
    const PoincareCompressor a = fit_compressor(m, 9, {.n_clusters = 8, .max_points = 64});
    const PoincareCompressor b = fit_compressor(m, 9, {.n_clusters = 8, .max_points = 64});
    EXPECT_EQ(a, b);
    EXPECT_THROW(fit_compressor(Matrix(3, 2, 1.0), 1, {.n_clusters = 4}), Error);
}

TEST(Compress, FeatureProperties) {
    RngStream rng = rng_derive(6, "test/compress");
    Matrix m(40, 6);
    for (auto& v : m.data) v = rng.normal();
    const PoincareCompressor c = fit_compressor(m, 6);
    EXPECT_EQ(c.n_clusters(), 8u);
    for (std::size_t i = 0; i < 40; ++i) {
        const Vector f = compress(m.row(i), c);
        ASSERT_EQ(f.size(), 8u);
        for (const double v : f) EXPECT_TRUE(v >= 0.0 && std::isfinite(v));
    }
    EXPECT_THROW(compress(Vector(5, 0.0), c), Error);

    PoincareCompressor on;
    on.scaler.scale = 1.0;
    on.centroids = Matrix(2, 2);
    on.centroids.data = {0.2, 0.1, -0.3, 0.0};
    EXPECT_EQ(compress(Vector{0.2, 0.1}, on)[0], 0.0);
}

TEST(CompressBackward, MatchesFiniteDifferences) {
    RngStream rng = rng_derive(7, "test/cb");
    PoincareCompressor c;
    c.scaler.scale = 0.3;
    c.centroids = Matrix(3, 5);
    for (std::size_t j = 0; j < 3; ++j) {
        const Vector p = ball_point(rng, 5, 0.8);
        std::copy(p.begin(), p.end(), c.centroids.row(j).begin());
    }
    for (int trial = 0; trial < 50; ++trial) {
        Vector x(5);
        for (auto& v : x) v = rng.normal() * (trial % 2 == 0 ? 0.5 : 6.0);  // odd trials land in the clamp region
        Vector up(3);
        for (auto& v : up) v = rng.normal();
        const Vector g = compress_backward(x, c, up);
        auto loss = [&] { return dot(compress(x, c), up); };
        EXPECT_LE(max_gradient_error(x, g, loss, 1e-6), 1e-4) << trial;
    }
}

TEST(CompressBackward, ZeroUpstreamAndCentroidSingularity) {
    PoincareCompressor c;
    c.scaler.scale = 1.0;
    c.centroids = Matrix(2, 2);
    c.centroids.data = {0.2, 0.1, -0.3, 0.0};
    EXPECT_EQ(compress_backward(Vector{0.5, 0.5}, c, Vector{0.0, 0.0}), (Vector{0.0, 0.0}));
    const Vector g = compress_backward(Vector{0.2, 0.1}, c, Vector{1.0, 0.0});
    for (const double v : g) EXPECT_EQ(v, 0.0);
    const Vector g2 = compress_backward(Vector{0.2, 0.1}, c, Vector{1.0, 1.0});
    for (const double v : g2) EXPECT_TRUE(std::isfinite(v));
}
