#pragma once

// Building blocks of the selective state-space encoder: vocabulary, config,
// parameter initialisation, zero-order-hold discretisation and the two scans.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mpsum/error.hpp"
#include "mpsum/numerics.hpp"

namespace mpsum {

// ---------------------------------------------------------------------------
// Vocabulary / tokenizer
// ---------------------------------------------------------------------------

inline std::vector<std::string> split_whitespace(std::string_view text) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        const std::size_t start = i;
        while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        if (i > start) out.emplace_back(text.substr(start, i - start));
    }
    return out;
}

class Vocabulary {
public:
    static constexpr std::int32_t kPad = 0;
    static constexpr std::int32_t kUnk = 1;

    Vocabulary() : tokens_{"<pad>", "<unk>"} {
        ids_.emplace(tokens_[0], kPad);
        ids_.emplace(tokens_[1], kUnk);
    }

    /// Rebuild from an ordered token list (index = id), e.g. from a checkpoint.
    static Vocabulary from_tokens(std::vector<std::string> tokens) {
        if (tokens.size() < 2 || tokens[0] != "<pad>" || tokens[1] != "<unk>")
            fail(ErrorCode::FormatError, "vocabulary must start with <pad>, <unk>");
        Vocabulary v;
        v.tokens_.clear();
        v.ids_.clear();
        for (auto& t : tokens) {
            if (!v.ids_.emplace(t, static_cast<std::int32_t>(v.tokens_.size())).second)
                fail(ErrorCode::FormatError, "duplicate vocabulary token '" + t + "'");
            v.tokens_.push_back(std::move(t));
        }
        return v;
    }

    std::int32_t add(const std::string& token) {
        auto [it, inserted] = ids_.emplace(token, static_cast<std::int32_t>(tokens_.size()));
        if (inserted) tokens_.push_back(token);
        return it->second;
    }

    std::int32_t id(const std::string& token) const {
        const auto it = ids_.find(token);
        return it == ids_.end() ? kUnk : it->second;
    }

    std::size_t size() const noexcept { return tokens_.size(); }
    const std::vector<std::string>& tokens() const noexcept { return tokens_; }

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, std::int32_t> ids_;
};

/// Ids are assigned in first-occurrence order over the (preprocessed) corpus.
inline Vocabulary build_vocab(const std::vector<std::string>& texts) {
    if (texts.empty()) fail(ErrorCode::EmptyCorpus, "cannot build a vocabulary from zero texts");
    Vocabulary v;
    for (const auto& text : texts)
        for (const auto& tok : split_whitespace(text)) v.add(tok);
    return v;
}

inline std::vector<std::int32_t> tokenize(std::string_view text, const Vocabulary& vocab, std::size_t max_len = 128) {
    std::vector<std::int32_t> ids;
    for (const auto& tok : split_whitespace(text)) {
        if (ids.size() == max_len) break;
        ids.push_back(vocab.id(tok));
    }
    return ids;
}

// ---------------------------------------------------------------------------
// Config and parameters
// ---------------------------------------------------------------------------

enum class Pooling { Mean, Last };

struct EncoderConfig {
    std::size_t d_model = 64;
    std::size_t expand = 2;
    std::size_t d_state = 16;
    std::size_t n_layers = 2;
    std::size_t max_len = 128;
    double delta_taylor_threshold = 1e-4;
    std::size_t chunk_size = 32;
    Pooling pooling = Pooling::Mean;

    std::size_t d_inner() const noexcept { return d_model * expand; }

    void validate() const {
        if (d_model == 0 || expand == 0 || d_state == 0 || n_layers == 0 || max_len == 0 || chunk_size == 0)
            fail(ErrorCode::ConfigError, "encoder dimensions must be positive");
        if (!(delta_taylor_threshold > 0.0)) fail(ErrorCode::ConfigError, "delta_taylor_threshold must be positive");
    }
};

struct LayerParams {
    Matrix w_in;     // d_inner × d_model
    Matrix w_delta;  // d_inner × d_inner
    Vector b_delta;  // d_inner
    Matrix w_b;      // d_state × d_inner
    Matrix w_c;      // d_state × d_inner
    Matrix a;        // d_inner × d_state, strictly negative
    Matrix w_out;    // d_model × d_inner

    bool operator==(const LayerParams&) const = default;
};

struct MambaParams {
    Matrix embedding;  // |V| × d_model
    std::vector<LayerParams> layers;

    bool operator==(const MambaParams&) const = default;
};

/// Dense HiPPO-LegS transition matrix, 0-indexed:
///   A(n,k) = -sqrt(2n+1)·sqrt(2k+1) for n > k, -(n+1) for n == k, 0 above.
inline Matrix hippo_legs_matrix(std::size_t n_state) {
    if (n_state < 1) fail(ErrorCode::InvalidSize, "HiPPO matrix needs N >= 1");
    Matrix a(n_state, n_state);
    for (std::size_t n = 0; n < n_state; ++n) {
        for (std::size_t k = 0; k < n; ++k)
            a(n, k) = -std::sqrt(2.0 * static_cast<double>(n) + 1.0) * std::sqrt(2.0 * static_cast<double>(k) + 1.0);
        a(n, n) = -static_cast<double>(n + 1);
    }
    return a;
}

namespace detail {

inline Matrix gaussian_matrix(std::size_t rows, std::size_t cols, double stddev, RngStream& rng) {
    Matrix m(rows, cols);
    for (auto& v : m.data) v = stddev * rng.normal();
    return m;
}

}  // namespace detail

/// softplus(b) = 0.01 so the initial step size is small.
inline double initial_delta_bias() { return std::log(std::expm1(0.01)); }

inline MambaParams init_params(const EncoderConfig& cfg, std::size_t vocab_size, std::uint64_t seed) {
    cfg.validate();
    RngStream rng = rng_derive(seed, "init");
    const std::size_t d_inner = cfg.d_inner();
    const Matrix hippo = hippo_legs_matrix(cfg.d_state);

    MambaParams p;
    p.embedding = detail::gaussian_matrix(vocab_size, cfg.d_model, 1.0, rng);
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        LayerParams layer;
        const double in_std = 1.0 / std::sqrt(static_cast<double>(cfg.d_model));
        const double inner_std = 1.0 / std::sqrt(static_cast<double>(d_inner));
        layer.w_in = detail::gaussian_matrix(d_inner, cfg.d_model, in_std, rng);
        layer.w_delta = detail::gaussian_matrix(d_inner, d_inner, inner_std, rng);
        layer.b_delta.assign(d_inner, initial_delta_bias());
        layer.w_b = detail::gaussian_matrix(cfg.d_state, d_inner, inner_std, rng);
        layer.w_c = detail::gaussian_matrix(cfg.d_state, d_inner, inner_std, rng);
        layer.w_out = detail::gaussian_matrix(cfg.d_model, d_inner, inner_std, rng);
        layer.a = Matrix(d_inner, cfg.d_state);
        for (std::size_t ch = 0; ch < d_inner; ++ch)
            for (std::size_t n = 0; n < cfg.d_state; ++n) layer.a(ch, n) = hippo(n, n);
        p.layers.push_back(std::move(layer));
    }
    return p;
}

// ---------------------------------------------------------------------------
// Zero-order-hold discretisation (diagonal A)
// ---------------------------------------------------------------------------

namespace debug {
/// Fault-injection hook for `mpsum selfcheck --inject-fault`: flips the sign
/// of the input matrix term. Never set outside the self-check.
inline bool flip_discretization_sign = false;
}  // namespace debug

struct Discretized {
    double a_bar;
    double b_bar;
};

/// Input-matrix factor phi(delta, a) = (exp(delta·a) - 1)/a and dphi/ddelta.
/// Below |delta·a| < threshold the 3-term Taylor form replaces the 0/0 quotient.
struct ZohFactor {
    double a_bar;
    double phi;
    double dphi_ddelta;
};

inline ZohFactor zoh_factor(double delta, double a, double taylor_threshold = 1e-4) {
    const double z = delta * a;
    const double a_bar = std::exp(z);
    ZohFactor f{a_bar, 0.0, 0.0};
    if (std::abs(z) < taylor_threshold) {
        f.phi = delta * (1.0 + z / 2.0 + z * z / 6.0);
        f.dphi_ddelta = 1.0 + z + z * z / 2.0;
    } else {
        f.phi = std::expm1(z) / a;
        f.dphi_ddelta = a_bar;
    }
    if (debug::flip_discretization_sign) f.phi = -f.phi, f.dphi_ddelta = -f.dphi_ddelta;
    return f;
}

inline Discretized discretize(double delta, double a, double b_in, double taylor_threshold = 1e-4) {
    if (!(a < 0.0)) fail(ErrorCode::UnstableA, "diagonal A entries must be negative");
    if (!(delta > 0.0)) fail(ErrorCode::DomainError, "delta must be positive");
    const ZohFactor f = zoh_factor(delta, a, taylor_threshold);
    return {f.a_bar, f.phi * b_in};
}

// ---------------------------------------------------------------------------
// Scans over h_k = a_bar_k ⊙ h_{k-1} + drive_k,  y_k[ch] = Σ_n C_k[n]·h_k[ch,n]
// ---------------------------------------------------------------------------

/// Rows are time steps. a_bar and drive are T × (channels·state) with lane
/// index ch·state + n; c is T × state and shared by every channel.
struct ScanInputs {
    std::size_t channels = 0;
    std::size_t state = 0;
    Matrix a_bar;
    Matrix drive;
    Matrix c;

    std::size_t steps() const noexcept { return a_bar.rows; }

    void validate() const {
        const std::size_t lanes = channels * state;
        if (a_bar.cols != lanes || drive.cols != lanes || c.cols != state)
            fail(ErrorCode::ShapeError, "scan lane widths disagree");
        if (a_bar.rows != drive.rows || a_bar.rows != c.rows) fail(ErrorCode::ShapeError, "scan sequence lengths differ");
    }
};

/// Returns the T × channels outputs of the recurrence starting from h_0 = 0.
inline Matrix selective_scan_seq(const ScanInputs& in) {
    in.validate();
    const std::size_t steps = in.steps();
    Matrix y(steps, in.channels);
    Vector h(in.channels * in.state, 0.0);
    for (std::size_t t = 0; t < steps; ++t) {
        const auto a_bar = in.a_bar.row(t);
        const auto drive = in.drive.row(t);
        const auto c = in.c.row(t);
        for (std::size_t ch = 0; ch < in.channels; ++ch) {
            double acc = 0.0;
            for (std::size_t n = 0; n < in.state; ++n) {
                const std::size_t lane = ch * in.state + n;
                h[lane] = a_bar[lane] * h[lane] + drive[lane];
                acc += c[n] * h[lane];
            }
            y(t, ch) = acc;
        }
    }
    return y;
}

/// Element of the linear-recurrence monoid: the affine map h -> a·h + b.
struct ScanElement {
    double a = 1.0;
    double b = 0.0;
};

/// (a1,b1) ⊗ (a2,b2) = (a1·a2, a2·b1 + b2): apply the left map, then the right.
constexpr ScanElement combine(ScanElement lhs, ScanElement rhs) noexcept {
    return {lhs.a * rhs.a, rhs.a * lhs.b + rhs.b};
}

/// In-place inclusive Blelloch scan (up-sweep / down-sweep) over one lane.
inline void blelloch_inclusive_scan(std::vector<ScanElement>& elems) {
    const std::size_t n = elems.size();
    if (n == 0) return;
    std::size_t size = 1;
    while (size < n) size <<= 1;
    std::vector<ScanElement> tree(size);
    std::copy(elems.begin(), elems.end(), tree.begin());

    for (std::size_t stride = 1; stride < size; stride <<= 1)
        for (std::size_t i = 2 * stride - 1; i < size; i += 2 * stride) tree[i] = combine(tree[i - stride], tree[i]);

    tree[size - 1] = ScanElement{};
    for (std::size_t stride = size >> 1; stride >= 1; stride >>= 1) {
        for (std::size_t i = 2 * stride - 1; i < size; i += 2 * stride) {
            const ScanElement left = tree[i - stride];
            tree[i - stride] = tree[i];
            tree[i] = combine(tree[i], left);
        }
    }
    // tree now holds the exclusive prefix; fold in each element.
    for (std::size_t i = 0; i < n; ++i) elems[i] = combine(tree[i], elems[i]);
}

inline Matrix selective_scan_parallel(const ScanInputs& in) {
    in.validate();
    const std::size_t steps = in.steps();
    const std::size_t lanes = in.channels * in.state;
    Matrix h(steps, lanes);
    std::vector<ScanElement> lane_elems(steps);
    for (std::size_t lane = 0; lane < lanes; ++lane) {
        for (std::size_t t = 0; t < steps; ++t) lane_elems[t] = {in.a_bar(t, lane), in.drive(t, lane)};
        blelloch_inclusive_scan(lane_elems);
        for (std::size_t t = 0; t < steps; ++t) h(t, lane) = lane_elems[t].b;
    }
    Matrix y(steps, in.channels);
    for (std::size_t t = 0; t < steps; ++t)
        for (std::size_t ch = 0; ch < in.channels; ++ch) {
            double acc = 0.0;
            for (std::size_t n = 0; n < in.state; ++n) acc += in.c(t, n) * h(t, ch * in.state + n);
            y(t, ch) = acc;
        }
    return y;
}

}  // namespace mpsum
