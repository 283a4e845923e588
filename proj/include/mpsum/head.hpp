#pragma once

// Relevance head: batch norm -> dropout -> linear logit, trained with binary
// cross-entropy, decoupled-decay Adam and a one-cycle schedule.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <vector>

#include "mpsum/error.hpp"
#include "mpsum/numerics.hpp"

namespace mpsum {

// ---------------------------------------------------------------------------
// Batch normalisation
// ---------------------------------------------------------------------------

struct BatchNormState {
    Vector gamma;
    Vector beta;
    Vector running_mean;
    Vector running_var;
    double momentum = 0.1;
    double eps = 1e-5;

    static BatchNormState create(std::size_t n) {
        return {Vector(n, 1.0), Vector(n, 0.0), Vector(n, 0.0), Vector(n, 1.0)};
    }

    std::size_t size() const noexcept { return gamma.size(); }
    bool operator==(const BatchNormState&) const = default;
};

struct BatchNormCache {
    Mode mode = Mode::Eval;
    Matrix x_hat;   // B × n
    Vector inv_std; // n
};

/// Train mode normalises with the biased batch variance and moves the running
/// statistics by `momentum`; eval mode reads the running statistics only.
inline Matrix batchnorm_forward(const Matrix& x, BatchNormState& state, Mode mode, BatchNormCache* cache = nullptr) {
    const std::size_t batch = x.rows;
    const std::size_t n = x.cols;
    if (n != state.size()) fail(ErrorCode::ShapeError, "batch-norm width mismatch");
    Vector mean(n, 0.0);
    Vector var(n, 0.0);
    if (mode == Mode::Train) {
        if (batch < 2) fail(ErrorCode::BatchTooSmall, "train-mode batch norm needs at least two rows");
        for (std::size_t i = 0; i < batch; ++i)
            for (std::size_t j = 0; j < n; ++j) mean[j] += x(i, j);
        for (auto& m : mean) m /= static_cast<double>(batch);
        for (std::size_t i = 0; i < batch; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                const double d = x(i, j) - mean[j];
                var[j] += d * d;
            }
        for (auto& v : var) v /= static_cast<double>(batch);
        for (std::size_t j = 0; j < n; ++j) {
            state.running_mean[j] = (1.0 - state.momentum) * state.running_mean[j] + state.momentum * mean[j];
            state.running_var[j] = (1.0 - state.momentum) * state.running_var[j] + state.momentum * var[j];
        }
    } else {
        mean = state.running_mean;
        var = state.running_var;
    }

    Vector inv_std(n);
    for (std::size_t j = 0; j < n; ++j) inv_std[j] = 1.0 / std::sqrt(var[j] + state.eps);
    Matrix x_hat(batch, n);
    Matrix out(batch, n);
    for (std::size_t i = 0; i < batch; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            x_hat(i, j) = (x(i, j) - mean[j]) * inv_std[j];
            out(i, j) = x_hat(i, j) * state.gamma[j] + state.beta[j];
        }
    if (cache != nullptr) *cache = {mode, std::move(x_hat), std::move(inv_std)};
    return out;
}

struct BatchNormGrads {
    Vector gamma;
    Vector beta;
};

inline Matrix batchnorm_backward(const Matrix& d_out, const BatchNormState& state, const BatchNormCache& cache,
                                 BatchNormGrads& grads) {
    const std::size_t batch = d_out.rows;
    const std::size_t n = d_out.cols;
    grads.gamma.assign(n, 0.0);
    grads.beta.assign(n, 0.0);
    for (std::size_t i = 0; i < batch; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            grads.gamma[j] += d_out(i, j) * cache.x_hat(i, j);
            grads.beta[j] += d_out(i, j);
        }
    Matrix d_x(batch, n);
    if (cache.mode == Mode::Eval) {
        for (std::size_t i = 0; i < batch; ++i)
            for (std::size_t j = 0; j < n; ++j) d_x(i, j) = d_out(i, j) * state.gamma[j] * cache.inv_std[j];
        return d_x;
    }
    const double b = static_cast<double>(batch);
    for (std::size_t j = 0; j < n; ++j) {
        const double k = state.gamma[j] * cache.inv_std[j] / b;
        for (std::size_t i = 0; i < batch; ++i)
            d_x(i, j) = k * (b * d_out(i, j) - grads.beta[j] - cache.x_hat(i, j) * grads.gamma[j]);
    }
    return d_x;
}

// ---------------------------------------------------------------------------
// Dropout
// ---------------------------------------------------------------------------

/// Inverted dropout. `mask` receives 0 or 1/(1-p) per entry (empty in eval).
inline Matrix dropout(const Matrix& x, double p, RngStream& rng, Mode mode, Matrix* mask = nullptr) {
    if (!(p >= 0.0 && p < 1.0)) fail(ErrorCode::ConfigError, "dropout probability must be in [0,1)");
    if (mode == Mode::Eval || p == 0.0) {
        if (mask != nullptr) *mask = Matrix();
        return x;
    }
    Matrix m(x.rows, x.cols);
    const double keep = 1.0 / (1.0 - p);
    for (auto& v : m.data) v = rng.uniform() < p ? 0.0 : keep;
    Matrix out = x;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= m.data[i];
    if (mask != nullptr) *mask = std::move(m);
    return out;
}

// ---------------------------------------------------------------------------
// Linear scorer and loss
// ---------------------------------------------------------------------------

struct LinearHead {
    Vector w;
    double b = 0.0;

    bool operator==(const LinearHead&) const = default;
};

inline double linear_forward(std::span<const double> h, const LinearHead& head) {
    if (h.size() != head.w.size()) fail(ErrorCode::ShapeError, "linear head width mismatch");
    return dot(head.w, h) + head.b;
}

struct BceResult {
    double loss = 0.0;
    Vector grad;  // dL/dlogit, already divided by the batch size
};

inline BceResult bce_loss(std::span<const double> logits, std::span<const double> labels) {
    if (logits.size() != labels.size()) fail(ErrorCode::ShapeError, "logits and labels differ in length");
    if (logits.empty()) fail(ErrorCode::DegenerateInput, "empty batch");
    BceResult r;
    r.grad.resize(logits.size());
    const double inv = 1.0 / static_cast<double>(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) {
        const double y = labels[i];
        if (y != 0.0 && y != 1.0) fail(ErrorCode::InvalidLabel, "labels must be 0 or 1");
        const double z = logits[i];
        r.loss += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
        r.grad[i] = (sigmoid(z) - y) * inv;
    }
    r.loss *= inv;
    return r;
}

// ---------------------------------------------------------------------------
// Optimiser and schedule
// ---------------------------------------------------------------------------

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.5;
};

struct AdamSlot {
    Vector m;
    Vector v;

    explicit AdamSlot(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

/// Adam with decoupled weight decay applied after the moment step.
class AdamW {
public:
    explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

    /// Call once per optimiser step before updating any parameter.
    void begin_step() noexcept { ++step_; }
    std::size_t step() const noexcept { return step_; }
    const AdamWConfig& config() const noexcept { return cfg_; }

    void update(std::span<double> param, std::span<const double> grad, AdamSlot& slot, double lr, bool decay) const {
        if (param.size() != grad.size() || slot.m.size() != param.size())
            fail(ErrorCode::ShapeError, "optimiser slot does not match parameter");
        const double t = static_cast<double>(step_);
        const double bc1 = 1.0 - std::pow(cfg_.beta1, t);
        const double bc2 = 1.0 - std::pow(cfg_.beta2, t);
        for (std::size_t i = 0; i < param.size(); ++i) {
            const double g = grad[i];
            slot.m[i] = cfg_.beta1 * slot.m[i] + (1.0 - cfg_.beta1) * g;
            slot.v[i] = cfg_.beta2 * slot.v[i] + (1.0 - cfg_.beta2) * g * g;
            const double m_hat = slot.m[i] / bc1;
            const double v_hat = slot.v[i] / bc2;
            param[i] -= lr * m_hat / (std::sqrt(v_hat) + cfg_.eps);
            if (decay) param[i] *= 1.0 - lr * cfg_.weight_decay;
        }
    }

private:
    AdamWConfig cfg_;
    std::size_t step_ = 0;
};

struct OneCycleSchedule {
    double max_lr = 2e-5;
    std::size_t total_steps = 1;
    double pct_start = 0.3;
    double div_factor = 25.0;
    double final_div_factor = 1e4;

    double initial_lr() const noexcept { return max_lr / div_factor; }
    double min_lr() const noexcept { return initial_lr() / final_div_factor; }

    std::size_t peak_step() const noexcept {
        const auto peak = static_cast<std::size_t>(std::llround(pct_start * static_cast<double>(total_steps)));
        return std::clamp<std::size_t>(peak, 1, total_steps);
    }
};

namespace detail {
inline double cosine_anneal(double start, double end, double pct) {
    return end + (start - end) / 2.0 * (1.0 + std::cos(std::numbers::pi * pct));
}
}  // namespace detail

inline double onecycle_lr(std::size_t step, const OneCycleSchedule& s) {
    if (s.total_steps == 0 || step > s.total_steps) fail(ErrorCode::InvalidStep, "step outside [0, total_steps]");
    const std::size_t peak = s.peak_step();
    if (step <= peak) {
        if (step == 0) return s.initial_lr();
        if (step == peak) return s.max_lr;
        return detail::cosine_anneal(s.initial_lr(), s.max_lr, static_cast<double>(step) / static_cast<double>(peak));
    }
    if (step == s.total_steps) return s.min_lr();
    const double pct = static_cast<double>(step - peak) / static_cast<double>(s.total_steps - peak);
    return detail::cosine_anneal(s.max_lr, s.min_lr(), pct);
}

// ---------------------------------------------------------------------------
// Full head
// ---------------------------------------------------------------------------

struct ClassifierHead {
    BatchNormState bn;
    LinearHead linear;
    double dropout = 0.5;

    static ClassifierHead create(std::size_t n_features, double dropout_p = 0.5) {
        return {BatchNormState::create(n_features), {Vector(n_features, 0.0), 0.0}, dropout_p};
    }

    bool operator==(const ClassifierHead&) const = default;
};

struct HeadCache {
    BatchNormCache bn;
    Matrix dropout_mask;
    Matrix dropped;  // input to the linear layer
};

struct HeadGrads {
    BatchNormGrads bn;
    Vector w;
    double b = 0.0;
};

/// Logits for a batch of feature rows. Train mode mutates running stats.
inline Vector head_forward(const Matrix& features, ClassifierHead& head, Mode mode, RngStream* rng,
                           HeadCache* cache = nullptr) {
    HeadCache local;
    HeadCache& c = cache != nullptr ? *cache : local;
    const Matrix normed = batchnorm_forward(features, head.bn, mode, &c.bn);
    if (mode == Mode::Train && head.dropout > 0.0) {
        if (rng == nullptr) fail(ErrorCode::InternalError, "train-mode dropout needs a stream");
        c.dropped = mpsum::dropout(normed, head.dropout, *rng, mode, &c.dropout_mask);
    } else {
        c.dropped = normed;
        c.dropout_mask = Matrix();
    }
    Vector logits(features.rows);
    for (std::size_t i = 0; i < features.rows; ++i) logits[i] = linear_forward(c.dropped.row(i), head.linear);
    return logits;
}

inline Vector head_predict(const Matrix& features, const ClassifierHead& head) {
    ClassifierHead copy = head;  // eval mode never writes, but batchnorm_forward takes a mutable state
    return head_forward(features, copy, Mode::Eval, nullptr);
}

/// Returns dL/dfeatures and fills parameter gradients.
inline Matrix head_backward(std::span<const double> d_logits, const ClassifierHead& head, const HeadCache& cache,
                            HeadGrads& grads) {
    const std::size_t batch = cache.dropped.rows;
    const std::size_t n = cache.dropped.cols;
    grads.w.assign(n, 0.0);
    grads.b = 0.0;
    Matrix d_dropped(batch, n);
    for (std::size_t i = 0; i < batch; ++i) {
        const double g = d_logits[i];
        grads.b += g;
        for (std::size_t j = 0; j < n; ++j) {
            grads.w[j] += g * cache.dropped(i, j);
            d_dropped(i, j) = g * head.linear.w[j];
        }
    }
    if (cache.dropout_mask.rows != 0)
        for (std::size_t i = 0; i < d_dropped.data.size(); ++i) d_dropped.data[i] *= cache.dropout_mask.data[i];
    return batchnorm_backward(d_dropped, head.bn, cache.bn, grads.bn);
}

}  // namespace mpsum
