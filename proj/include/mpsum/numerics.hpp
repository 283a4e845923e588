#pragma once

// Deterministic numeric substrate: dense row-major matrices, labelled RNG
// streams, a cyclic Jacobi eigensolver and overflow-safe scalar functions.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mpsum/error.hpp"

namespace mpsum {

using Vector = std::vector<double>;

/// Train enables dropout and batch statistics; Eval is deterministic.
enum class Mode { Train, Eval };

struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
    std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
    bool operator==(const Matrix&) const = default;
};

inline double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

inline double frobenius_norm(const Matrix& m) { return norm(m.data); }

/// out = M·x, M is rows×cols, x has cols entries.
inline void matvec(const Matrix& m, std::span<const double> x, std::span<double> out) {
    for (std::size_t r = 0; r < m.rows; ++r) out[r] = dot(m.row(r), x);
}

inline Vector matvec(const Matrix& m, std::span<const double> x) {
    Vector out(m.rows);
    matvec(m, x, out);
    return out;
}

/// out += Mᵀ·g, g has rows entries.
inline void matvec_transposed_add(const Matrix& m, std::span<const double> g, std::span<double> out) {
    for (std::size_t r = 0; r < m.rows; ++r) {
        const double gr = g[r];
        if (gr == 0.0) continue;
        const auto row = m.row(r);
        for (std::size_t c = 0; c < m.cols; ++c) out[c] += gr * row[c];
    }
}

/// M += scale · a·bᵀ
inline void add_outer(Matrix& m, std::span<const double> a, std::span<const double> b, double scale = 1.0) {
    for (std::size_t r = 0; r < m.rows; ++r) {
        const double ar = scale * a[r];
        if (ar == 0.0) continue;
        auto row = m.row(r);
        for (std::size_t c = 0; c < m.cols; ++c) row[c] += ar * b[c];
    }
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows) fail(ErrorCode::ShapeError, "matmul inner dimensions differ");
    Matrix out(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        for (std::size_t k = 0; k < a.cols; ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            for (std::size_t j = 0; j < b.cols; ++j) out(i, j) += aik * b(k, j);
        }
    }
    return out;
}

inline Matrix transpose(const Matrix& a) {
    Matrix t(a.cols, a.rows);
    for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t j = 0; j < a.cols; ++j) t(j, i) = a(i, j);
    return t;
}

// ---------------------------------------------------------------------------
// Random streams
// ---------------------------------------------------------------------------

namespace detail {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

constexpr std::uint64_t fnv1a64(std::string_view s) noexcept {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (const char ch : s) {
        h ^= static_cast<unsigned char>(ch);
        h *= 0x100000001B3ULL;
    }
    return h;
}

}  // namespace detail

/// Counter-based stream: draw i is mix64(key + i·golden). Streams are keyed by
/// (master seed, label), so adding a consumer never shifts another stream.
class RngStream {
public:
    RngStream(std::uint64_t master_seed, std::string_view label)
        : label_(label), key_(detail::mix64(master_seed ^ detail::mix64(detail::fnv1a64(label)))) {}

    const std::string& label() const noexcept { return label_; }
    std::uint64_t key() const noexcept { return key_; }
    std::uint64_t counter() const noexcept { return counter_; }

    /// Independent sub-stream, e.g. one per epoch.
    RngStream child(std::string_view sublabel) const {
        RngStream c = *this;
        c.label_ = label_ + "/" + std::string(sublabel);
        c.key_ = detail::mix64(key_ ^ detail::mix64(detail::fnv1a64(sublabel) + detail::kGolden));
        c.counter_ = 0;
        c.has_spare_ = false;
        return c;
    }

    std::uint64_t next_u64() noexcept {
        ++counter_;
        return detail::mix64(key_ + counter_ * detail::kGolden);
    }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform integer in [0, n).
    std::size_t index(std::size_t n) noexcept {
        const unsigned __int128 wide = static_cast<unsigned __int128>(next_u64()) * n;
        return static_cast<std::size_t>(wide >> 64);
    }

    /// Standard normal via Box-Muller; the second variate is cached.
    double normal() noexcept {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * std::numbers::pi * u2;
        spare_ = radius * std::sin(theta);
        has_spare_ = true;
        return radius * std::cos(theta);
    }

    template <typename T>
    void shuffle(std::vector<T>& items) noexcept {
        for (std::size_t i = items.size(); i > 1; --i) {
            const std::size_t j = index(i);
            std::swap(items[i - 1], items[j]);
        }
    }

private:
    std::string label_;
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

inline RngStream rng_derive(std::uint64_t master_seed, std::string_view label) {
    return RngStream(master_seed, label);
}

// ---------------------------------------------------------------------------
// Scalars
// ---------------------------------------------------------------------------

inline double softplus(double x) {
    // log(1+e^x) = max(x,0) + log1p(e^-|x|)
    return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

inline double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline double arcosh(double x) {
    if (!(x >= 1.0)) fail(ErrorCode::DomainError, "arcosh requires x >= 1");
    const double u = x - 1.0;  // keeps precision near the boundary
    return std::log1p(u + std::sqrt(u * (x + 1.0)));
}

inline double artanh(double x) {
    if (!(std::abs(x) < 1.0)) fail(ErrorCode::DomainError, "artanh requires |x| < 1");
    return 0.5 * std::log1p(2.0 * x / (1.0 - x));
}

// ---------------------------------------------------------------------------
// Symmetric eigensolver
// ---------------------------------------------------------------------------

struct EigenDecomposition {
    Vector eigenvalues;   // ascending
    Matrix eigenvectors;  // column j pairs with eigenvalues[j]
};

struct JacobiOptions {
    int max_sweeps = 100;
    double tolerance = 1e-12;  // on off(A) relative to ‖M‖_F
};

/// Cyclic Jacobi rotations. Adequate for the few-hundred-row Laplacians used
/// by the spectral clustering step.
inline EigenDecomposition jacobi_eigh(const Matrix& m, JacobiOptions opts = {}) {
    if (m.rows != m.cols) fail(ErrorCode::InvalidMatrix, "matrix is not square");
    const std::size_t n = m.rows;
    double max_abs = 0.0;
    for (const double v : m.data) {
        if (!std::isfinite(v)) fail(ErrorCode::InvalidMatrix, "matrix has non-finite entries");
        max_abs = std::max(max_abs, std::abs(v));
    }
    const double sym_tol = 1e-12 * std::max(1.0, max_abs);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (std::abs(m(i, j) - m(j, i)) > sym_tol) fail(ErrorCode::InvalidMatrix, "matrix is not symmetric");

    Matrix a = m;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) a(i, j) = a(j, i) = 0.5 * (m(i, j) + m(j, i));
    Matrix v = Matrix::identity(n);

    const double threshold = opts.tolerance * frobenius_norm(m);
    auto off_norm = [&] {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) s += 2.0 * a(i, j) * a(i, j);
        return std::sqrt(s);
    };

    bool converged = off_norm() <= threshold;
    for (int sweep = 0; sweep < opts.max_sweeps && !converged; ++sweep) {
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (apq == 0.0) continue;
                // Rotation annihilating a(p,q), Golub & Van Loan sym.schur2.
                const double tau = (a(q, q) - a(p, p)) / (2.0 * apq);
                const double t = (tau >= 0.0 ? 1.0 : -1.0) / (std::abs(tau) + std::sqrt(1.0 + tau * tau));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a(k, p);
                    const double akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a(p, k);
                    const double aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
                a(p, q) = a(q, p) = 0.0;
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = v(k, p);
                    const double vkq = v(k, q);
                    v(k, p) = c * vkp - s * vkq;
                    v(k, q) = s * vkp + c * vkq;
                }
            }
        }
        converged = off_norm() <= threshold;
    }
    if (!converged) fail(ErrorCode::NoConvergence, "Jacobi sweeps exhausted");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return a(x, x) < a(y, y); });

    EigenDecomposition out;
    out.eigenvalues.resize(n);
    out.eigenvectors = Matrix(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        out.eigenvalues[j] = a(order[j], order[j]);
        for (std::size_t k = 0; k < n; ++k) out.eigenvectors(k, j) = v(k, order[j]);
    }
    return out;
}

}  // namespace mpsum
