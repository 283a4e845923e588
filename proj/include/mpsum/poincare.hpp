#pragma once

// Poincaré compression: spectral clustering of pair embeddings, then the
// hyperbolic distance from a (ball-projected) embedding to every centroid.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "mpsum/error.hpp"
#include "mpsum/numerics.hpp"

namespace mpsum {

/// arcosh(1 + x) for x >= 0, accurate near x = 0.
inline double arcosh1p(double x) { return std::log1p(x + std::sqrt(x * (x + 2.0))); }

inline double poincare_distance(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) fail(ErrorCode::ShapeError, "points have different dimensions");
    const double na = dot(a, a);
    const double nb = dot(b, b);
    if (!(na < 1.0) || !(nb < 1.0)) fail(ErrorCode::OutOfBall, "point lies on or outside the unit sphere");
    const double diff = squared_distance(a, b);
    return arcosh1p(2.0 * diff / ((1.0 - na) * (1.0 - nb)));
}

struct BallScaler {
    static constexpr double kFitRadius = 0.9;
    static constexpr double kMaxRadius = 0.99;

    double scale = 1.0;

    /// scale·x, hard-clamped to norm 0.99.
    Vector project(std::span<const double> x) const {
        Vector y(x.begin(), x.end());
        for (auto& v : y) v *= scale;
        const double n = norm(y);
        if (n > kMaxRadius) {
            const double shrink = kMaxRadius / n;
            for (auto& v : y) v *= shrink;
        }
        return y;
    }

    bool operator==(const BallScaler&) const = default;
};

inline BallScaler fit_ball_scaler(const Matrix& embeddings) {
    double max_norm = 0.0;
    for (std::size_t i = 0; i < embeddings.rows; ++i) max_norm = std::max(max_norm, norm(embeddings.row(i)));
    if (!(max_norm > 0.0)) fail(ErrorCode::DegenerateInput, "all embeddings are zero");
    return {BallScaler::kFitRadius / max_norm};
}

/// Full RBF graph with the median non-zero pairwise distance as bandwidth.
inline Matrix rbf_affinity(const Matrix& points) {
    const std::size_t n = points.rows;
    if (n < 2) fail(ErrorCode::DegenerateInput, "affinity needs at least two points");
    Matrix sq(n, n);
    std::vector<double> nonzero;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const double d2 = squared_distance(points.row(i), points.row(j));
            sq(i, j) = sq(j, i) = d2;
            if (d2 > 0.0) nonzero.push_back(std::sqrt(d2));
        }
    double sigma = 1.0;
    if (!nonzero.empty()) {
        std::sort(nonzero.begin(), nonzero.end());
        const std::size_t m = nonzero.size();
        sigma = m % 2 == 1 ? nonzero[m / 2] : 0.5 * (nonzero[m / 2 - 1] + nonzero[m / 2]);
    }
    const double denom = 2.0 * sigma * sigma;
    Matrix w(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            if (i != j) w(i, j) = std::exp(-sq(i, j) / denom);
    return w;
}

/// Rows of the k smallest eigenvectors of I - D^-1/2 W D^-1/2, each row
/// rescaled to unit length (zero rows stay zero).
inline Matrix spectral_embed(const Matrix& affinity, std::size_t k) {
    const std::size_t n = affinity.rows;
    if (affinity.cols != n) fail(ErrorCode::InvalidMatrix, "affinity must be square");
    if (k < 2 || k > n) fail(ErrorCode::InvalidK, "spectral embedding needs 2 <= k <= point count");
    Vector inv_sqrt_deg(n);
    for (std::size_t i = 0; i < n; ++i) {
        double d = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            if (affinity(i, j) < 0.0) fail(ErrorCode::InvalidMatrix, "affinity must be non-negative");
            d += affinity(i, j);
        }
        inv_sqrt_deg[i] = 1.0 / std::sqrt(d > 0.0 ? d : 1e-12);
    }
    Matrix lap(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            lap(i, j) = (i == j ? 1.0 : 0.0) - inv_sqrt_deg[i] * affinity(i, j) * inv_sqrt_deg[j];
    const EigenDecomposition eig = jacobi_eigh(lap);

    Matrix out(n, k);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < k; ++j) out(i, j) = eig.eigenvectors(i, j);
        const double r = norm(out.row(i));
        if (r > 0.0)
            for (auto& v : out.row(i)) v /= r;
    }
    return out;
}

struct KMeansResult {
    std::vector<std::size_t> assignments;
    Matrix means;
    std::size_t iterations = 0;
};

/// k-means++ seeding then Lloyd iterations to an assignment fixpoint.
inline KMeansResult kmeans(const Matrix& points, std::size_t k, RngStream& rng, std::size_t max_iter = 100) {
    const std::size_t n = points.rows;
    const std::size_t dim = points.cols;
    if (k == 0 || k > n) fail(ErrorCode::InvalidK, "k-means needs 1 <= k <= point count");

    KMeansResult res;
    res.means = Matrix(k, dim);
    auto set_mean = [&](std::size_t c, std::size_t p) {
        std::copy(points.row(p).begin(), points.row(p).end(), res.means.row(c).begin());
    };

    set_mean(0, rng.index(n));
    Vector d2(n, std::numeric_limits<double>::infinity());
    for (std::size_t c = 1; c < k; ++c) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            d2[i] = std::min(d2[i], squared_distance(points.row(i), res.means.row(c - 1)));
            total += d2[i];
        }
        std::size_t pick = n - 1;
        if (total > 0.0) {
            const double target = rng.uniform() * total;
            double acc = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                acc += d2[i];
                if (acc > target && d2[i] > 0.0) {
                    pick = i;
                    break;
                }
            }
        } else {
            pick = rng.index(n);
        }
        set_mean(c, pick);
    }

    res.assignments.assign(n, 0);
    std::vector<std::size_t> counts(k);
    for (std::size_t iter = 0; iter < max_iter; ++iter) {
        bool changed = iter == 0;
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t best = 0;
            double best_d = squared_distance(points.row(i), res.means.row(0));
            for (std::size_t c = 1; c < k; ++c) {
                const double d = squared_distance(points.row(i), res.means.row(c));
                if (d < best_d) best_d = d, best = c;
            }
            if (res.assignments[i] != best) changed = true;
            res.assignments[i] = best;
        }
        res.iterations = iter + 1;
        if (!changed) break;

        std::fill(res.means.data.begin(), res.means.data.end(), 0.0);
        std::fill(counts.begin(), counts.end(), 0);
        for (std::size_t i = 0; i < n; ++i) {
            ++counts[res.assignments[i]];
            auto m = res.means.row(res.assignments[i]);
            const auto p = points.row(i);
            for (std::size_t d = 0; d < dim; ++d) m[d] += p[d];
        }
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] == 0) continue;
            for (auto& v : res.means.row(c)) v /= static_cast<double>(counts[c]);
        }
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] != 0) continue;
            // Empty cluster: restart it at the point farthest from its own mean.
            std::size_t far = 0;
            double far_d = -1.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double d = squared_distance(points.row(i), res.means.row(res.assignments[i]));
                if (d > far_d) far_d = d, far = i;
            }
            set_mean(c, far);
        }
    }
    return res;
}

struct PoincareCompressor {
    BallScaler scaler;
    Matrix centroids;  // n_clusters × dim, every row inside the ball

    std::size_t n_clusters() const noexcept { return centroids.rows; }
    std::size_t dim() const noexcept { return centroids.cols; }

    bool operator==(const PoincareCompressor&) const = default;
};

struct CompressorFitOptions {
    std::size_t n_clusters = 8;
    std::size_t max_points = 512;
    std::size_t kmeans_max_iter = 100;
};

inline PoincareCompressor fit_compressor(const Matrix& pair_embeddings, std::uint64_t seed,
                                         const CompressorFitOptions& opts = {}) {
    const std::size_t m = pair_embeddings.rows;
    const std::size_t k = opts.n_clusters;
    if (k < 2) fail(ErrorCode::InvalidK, "need at least two clusters");
    if (m < k) fail(ErrorCode::DegenerateInput, "fewer embeddings than clusters");

    PoincareCompressor comp;
    comp.scaler = fit_ball_scaler(pair_embeddings);

    RngStream rng = rng_derive(seed, "cluster");
    std::vector<std::size_t> idx(m);
    for (std::size_t i = 0; i < m; ++i) idx[i] = i;
    if (m > opts.max_points) {
        for (std::size_t i = 0; i < opts.max_points; ++i) std::swap(idx[i], idx[i + rng.index(m - i)]);
        idx.resize(opts.max_points);
        std::sort(idx.begin(), idx.end());
    }

    Matrix scaled(idx.size(), pair_embeddings.cols);
    for (std::size_t r = 0; r < idx.size(); ++r) {
        const Vector p = comp.scaler.project(pair_embeddings.row(idx[r]));
        std::copy(p.begin(), p.end(), scaled.row(r).begin());
    }

    const Matrix spectral = spectral_embed(rbf_affinity(scaled), k);
    const KMeansResult km = kmeans(spectral, k, rng, opts.kmeans_max_iter);

    comp.centroids = Matrix(k, scaled.cols);
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t r = 0; r < scaled.rows; ++r) {
        const std::size_t c = km.assignments[r];
        ++counts[c];
        auto dst = comp.centroids.row(c);
        const auto src = scaled.row(r);
        for (std::size_t d = 0; d < scaled.cols; ++d) dst[d] += src[d];
    }
    for (std::size_t c = 0; c < k; ++c) {
        auto row = comp.centroids.row(c);
        if (counts[c] == 0) {
            // Can only happen when Lloyd hit max_iter right after a reseed.
            const auto src = scaled.row(std::min(c, scaled.rows - 1));
            std::copy(src.begin(), src.end(), row.begin());
        } else {
            for (auto& v : row) v /= static_cast<double>(counts[c]);
        }
        const double r = norm(row);
        if (r > BallScaler::kMaxRadius)
            for (auto& v : row) v *= BallScaler::kMaxRadius / r;
    }
    return comp;
}

/// F[j] = d(project(H_rs), c_j).
inline Vector compress(std::span<const double> h_rs, const PoincareCompressor& comp) {
    if (h_rs.size() != comp.dim()) fail(ErrorCode::ShapeError, "embedding width does not match centroids");
    const Vector p = comp.scaler.project(h_rs);
    Vector f(comp.n_clusters());
    for (std::size_t j = 0; j < f.size(); ++j) f[j] = poincare_distance(p, comp.centroids.row(j));
    return f;
}

/// dL/dH_rs given dL/dF, centroids held fixed. Terms with d(p, c_j) < 1e-7 are
/// dropped since darcosh/dx is unbounded at 1.
inline Vector compress_backward(std::span<const double> h_rs, const PoincareCompressor& comp,
                                std::span<const double> d_features) {
    if (h_rs.size() != comp.dim()) fail(ErrorCode::ShapeError, "embedding width does not match centroids");
    if (d_features.size() != comp.n_clusters()) fail(ErrorCode::ShapeError, "feature gradient has wrong width");
    const std::size_t dim = h_rs.size();
    const Vector p = comp.scaler.project(h_rs);
    const double np2 = dot(p, p);
    const double alpha = 1.0 - np2;

    Vector dp(dim, 0.0);
    for (std::size_t j = 0; j < comp.n_clusters(); ++j) {
        const double g = d_features[j];
        if (g == 0.0) continue;
        const auto c = comp.centroids.row(j);
        const double beta = 1.0 - dot(c, c);
        const double diff2 = squared_distance(p, c);
        const double x = 2.0 * diff2 / (alpha * beta);
        if (arcosh1p(x) < 1e-7) continue;
        const double dd_dx = 1.0 / std::sqrt(x * (x + 2.0));
        // dx/dp = (4/(alpha·beta))·(p - c) + (4·diff2/(alpha²·beta))·p
        const double k1 = 4.0 / (alpha * beta);
        const double k2 = 4.0 * diff2 / (alpha * alpha * beta);
        for (std::size_t d = 0; d < dim; ++d) dp[d] += g * dd_dx * (k1 * (p[d] - c[d]) + k2 * p[d]);
    }

    Vector dh(dim);
    const double scaled_norm = comp.scaler.scale * norm(h_rs);
    if (scaled_norm > BallScaler::kMaxRadius) {
        // p = r·h/‖h‖  =>  J = (r/‖h‖)(I - ĥĥᵀ)
        const double hn = norm(h_rs);
        double proj = 0.0;
        for (std::size_t d = 0; d < dim; ++d) proj += h_rs[d] / hn * dp[d];
        const double coef = BallScaler::kMaxRadius / hn;
        for (std::size_t d = 0; d < dim; ++d) dh[d] = coef * (dp[d] - h_rs[d] / hn * proj);
    } else {
        for (std::size_t d = 0; d < dim; ++d) dh[d] = comp.scaler.scale * dp[d];
    }
    return dh;
}

}  // namespace mpsum
