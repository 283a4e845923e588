#pragma once

// Selective SSM encoder: forward pass with a light tape, and a reverse-mode
// pass that produces LoRA gradients. Hidden states are not kept on the tape;
// only one state snapshot per chunk is, and the backward pass replays each
// chunk from its snapshot.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "mpsum/error.hpp"
#include "mpsum/lora.hpp"
#include "mpsum/numerics.hpp"
#include "mpsum/ssm.hpp"

namespace mpsum {

struct Encoder {
    EncoderConfig config;
    Vocabulary vocab;
    MambaParams params;
};

inline Encoder make_encoder(const EncoderConfig& cfg, Vocabulary vocab, std::uint64_t seed) {
    Encoder e{cfg, std::move(vocab), {}};
    e.params = init_params(cfg, e.vocab.size(), seed);
    return e;
}

enum class StateStorage {
    Recompute,  // chunk snapshots only; states replayed during backward
    Stored,     // every h_t kept; reference path for tests
};

struct ProjectionTape {
    bool has_adapter = false;
    std::size_t adapter_index = 0;
    Matrix mask;  // T × in, inverted-dropout scale folded in; empty => no dropout
    Matrix z;     // T × r, down·x̃
};

struct LayerTape {
    Matrix x;          // T × d_model
    Matrix u;          // T × d_inner
    Matrix pre_delta;  // T × d_inner
    Matrix delta;      // T × d_inner
    Matrix b;          // T × d_state
    Matrix c;          // T × d_state
    Matrix y;          // T × d_inner
    std::vector<Vector> snapshots;  // h_{t0-1} for each chunk start t0
    Matrix states;                  // T × lanes, StateStorage::Stored only
    ProjectionTape in_proj;
    ProjectionTape out_proj;
};

struct EncoderTape {
    std::vector<std::int32_t> tokens;
    std::vector<LayerTape> layers;
    Matrix output;  // T × d_model
    Vector pooled;  // d_model
    StateStorage storage = StateStorage::Recompute;

    bool empty() const noexcept { return tokens.empty(); }
};

namespace detail {

inline std::size_t adapter_index(const LoraAdapters& adapters, const LoraAdapter* a) {
    return static_cast<std::size_t>(a - adapters.adapters.data());
}

/// out_t = W·x_t (+ s·up·down·x̃_t when an adapter wraps W).
inline Matrix project_forward(const Matrix& w, const Matrix& x, const LoraAdapters* adapters, const LoraAdapter* adapter,
                              Mode mode, RngStream* dropout_rng, ProjectionTape& tape) {
    const std::size_t steps = x.rows;
    Matrix out(steps, w.rows);
    for (std::size_t t = 0; t < steps; ++t) matvec(w, x.row(t), out.row(t));
    if (adapter == nullptr) return out;

    tape.has_adapter = true;
    tape.adapter_index = adapter_index(*adapters, adapter);
    const bool use_dropout = mode == Mode::Train && adapter->dropout > 0.0;
    if (use_dropout) {
        if (dropout_rng == nullptr) fail(ErrorCode::InternalError, "training-mode adapter dropout needs a stream");
        tape.mask = Matrix(steps, x.cols);
        const double keep_scale = 1.0 / (1.0 - adapter->dropout);
        for (auto& m : tape.mask.data) m = dropout_rng->uniform() < adapter->dropout ? 0.0 : keep_scale;
    }
    tape.z = Matrix(steps, adapter->rank);
    const double s = adapter->scale();
    Vector xt(x.cols);
    Vector delta(w.rows);
    for (std::size_t t = 0; t < steps; ++t) {
        const auto xrow = x.row(t);
        for (std::size_t i = 0; i < x.cols; ++i) xt[i] = use_dropout ? xrow[i] * tape.mask(t, i) : xrow[i];
        matvec(adapter->down, xt, tape.z.row(t));
        matvec(adapter->up, tape.z.row(t), delta);
        auto orow = out.row(t);
        for (std::size_t o = 0; o < w.rows; ++o) orow[o] += s * delta[o];
    }
    return out;
}

/// Returns dL/dx for the projection and accumulates adapter gradients.
inline Matrix project_backward(const Matrix& w, const Matrix& x, const Matrix& d_out, const LoraAdapters* adapters,
                               const ProjectionTape& tape, LoraGradients* grads) {
    const std::size_t steps = x.rows;
    Matrix d_in(steps, x.cols);
    for (std::size_t t = 0; t < steps; ++t) matvec_transposed_add(w, d_out.row(t), d_in.row(t));
    if (!tape.has_adapter) return d_in;

    const LoraAdapter& a = adapters->adapters[tape.adapter_index];
    const double s = a.scale();
    const bool masked = tape.mask.rows != 0;
    Vector dz(a.rank);
    Vector xt(x.cols);
    Vector dxt(x.cols);
    for (std::size_t t = 0; t < steps; ++t) {
        const auto g = d_out.row(t);
        std::fill(dz.begin(), dz.end(), 0.0);
        matvec_transposed_add(a.up, g, dz);
        for (auto& v : dz) v *= s;
        const auto xrow = x.row(t);
        for (std::size_t i = 0; i < x.cols; ++i) xt[i] = masked ? xrow[i] * tape.mask(t, i) : xrow[i];
        if (grads != nullptr) {
            add_outer(grads->up[tape.adapter_index], g, tape.z.row(t), s);
            add_outer(grads->down[tape.adapter_index], dz, xt);
        }
        std::fill(dxt.begin(), dxt.end(), 0.0);
        matvec_transposed_add(a.down, dz, dxt);
        auto drow = d_in.row(t);
        for (std::size_t i = 0; i < x.cols; ++i) drow[i] += masked ? dxt[i] * tape.mask(t, i) : dxt[i];
    }
    return d_in;
}

/// Advances h by one step of the recurrence for every (channel, state) lane.
inline void scan_step(const LayerParams& layer, const LayerTape& lt, std::size_t t, double taylor, Vector& h) {
    const std::size_t d_inner = lt.u.cols;
    const std::size_t d_state = lt.b.cols;
    for (std::size_t ch = 0; ch < d_inner; ++ch) {
        const double delta = lt.delta(t, ch);
        const double u = lt.u(t, ch);
        for (std::size_t n = 0; n < d_state; ++n) {
            const ZohFactor f = zoh_factor(delta, layer.a(ch, n), taylor);
            const std::size_t lane = ch * d_state + n;
            h[lane] = f.a_bar * h[lane] + f.phi * lt.b(t, n) * u;
        }
    }
}

}  // namespace detail

/// Forward pass for one token sequence. In Train mode adapter inputs receive
/// dropout drawn from `dropout_rng`.
inline EncoderTape encode_forward(std::span<const std::int32_t> tokens, const Encoder& enc,
                                  const LoraAdapters* adapters = nullptr, Mode mode = Mode::Eval,
                                  RngStream* dropout_rng = nullptr, StateStorage storage = StateStorage::Recompute) {
    const EncoderConfig& cfg = enc.config;
    const MambaParams& params = enc.params;
    const std::size_t steps = tokens.size();
    const std::size_t d_model = cfg.d_model;
    const std::size_t d_inner = cfg.d_inner();
    const std::size_t d_state = cfg.d_state;
    const std::size_t lanes = d_inner * d_state;
    if (params.layers.size() != cfg.n_layers || params.embedding.cols != d_model)
        fail(ErrorCode::ShapeError, "encoder parameters do not match config");

    EncoderTape tape;
    tape.tokens.assign(tokens.begin(), tokens.end());
    tape.storage = storage;
    tape.pooled.assign(d_model, 0.0);
    if (steps == 0) return tape;

    Matrix x(steps, d_model);
    for (std::size_t t = 0; t < steps; ++t) {
        const auto id = tokens[t];
        if (id < 0 || static_cast<std::size_t>(id) >= params.embedding.rows)
            fail(ErrorCode::InternalError, "token id outside the vocabulary");
        const auto row = params.embedding.row(static_cast<std::size_t>(id));
        std::copy(row.begin(), row.end(), x.row(t).begin());
    }

    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        const LayerParams& layer = params.layers[l];
        LayerTape lt;
        const LoraAdapter* in_ad = adapters ? adapters->find(l, LoraTarget::InProj) : nullptr;
        const LoraAdapter* out_ad = adapters ? adapters->find(l, LoraTarget::OutProj) : nullptr;

        lt.u = detail::project_forward(layer.w_in, x, adapters, in_ad, mode, dropout_rng, lt.in_proj);
        lt.pre_delta = Matrix(steps, d_inner);
        lt.delta = Matrix(steps, d_inner);
        lt.b = Matrix(steps, d_state);
        lt.c = Matrix(steps, d_state);
        for (std::size_t t = 0; t < steps; ++t) {
            const auto u = lt.u.row(t);
            matvec(layer.w_delta, u, lt.pre_delta.row(t));
            for (std::size_t ch = 0; ch < d_inner; ++ch) {
                lt.pre_delta(t, ch) += layer.b_delta[ch];
                lt.delta(t, ch) = softplus(lt.pre_delta(t, ch));
            }
            matvec(layer.w_b, u, lt.b.row(t));
            matvec(layer.w_c, u, lt.c.row(t));
        }

        lt.y = Matrix(steps, d_inner);
        if (storage == StateStorage::Stored) lt.states = Matrix(steps, lanes);
        Vector h(lanes, 0.0);
        for (std::size_t t = 0; t < steps; ++t) {
            if (t % cfg.chunk_size == 0) lt.snapshots.push_back(h);
            detail::scan_step(layer, lt, t, cfg.delta_taylor_threshold, h);
            if (storage == StateStorage::Stored) std::copy(h.begin(), h.end(), lt.states.row(t).begin());
            for (std::size_t ch = 0; ch < d_inner; ++ch) {
                double acc = 0.0;
                for (std::size_t n = 0; n < d_state; ++n) acc += lt.c(t, n) * h[ch * d_state + n];
                lt.y(t, ch) = acc;
            }
        }

        Matrix out = detail::project_forward(layer.w_out, lt.y, adapters, out_ad, mode, dropout_rng, lt.out_proj);
        for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += x.data[i];
        lt.x = std::move(x);
        x = std::move(out);
        tape.layers.push_back(std::move(lt));
    }

    if (cfg.pooling == Pooling::Mean) {
        for (std::size_t t = 0; t < steps; ++t)
            for (std::size_t d = 0; d < d_model; ++d) tape.pooled[d] += x(t, d);
        for (auto& v : tape.pooled) v /= static_cast<double>(steps);
    } else {
        const auto last = x.row(steps - 1);
        tape.pooled.assign(last.begin(), last.end());
    }
    tape.output = std::move(x);
    return tape;
}

struct Embedding {
    Vector values;
    bool empty = false;  // text had no tokens; values are zero
};

inline Embedding encode(std::string_view text, const Encoder& enc, const LoraAdapters* adapters = nullptr) {
    const auto ids = tokenize(text, enc.vocab, enc.config.max_len);
    EncoderTape tape = encode_forward(ids, enc, adapters);
    return {std::move(tape.pooled), ids.empty()};
}

/// H_rs = H_r followed by H_s.
inline Vector encode_pair(std::string_view review, std::string_view sentence, const Encoder& enc,
                          const LoraAdapters* adapters = nullptr) {
    Vector out = encode(review, enc, adapters).values;
    const Vector s = encode(sentence, enc, adapters).values;
    out.insert(out.end(), s.begin(), s.end());
    return out;
}

/// Reverse pass for one tape. Only adapter matrices receive gradients; the
/// base weights are frozen.
inline void encode_backward(const EncoderTape& tape, std::span<const double> d_pooled, const Encoder& enc,
                            const LoraAdapters& adapters, LoraGradients& grads) {
    if (adapters.empty()) fail(ErrorCode::NoTrainableParams, "encoder backward needs LoRA adapters");
    const EncoderConfig& cfg = enc.config;
    if (d_pooled.size() != cfg.d_model) fail(ErrorCode::ShapeError, "upstream gradient has wrong width");
    if (tape.empty()) return;

    const std::size_t steps = tape.tokens.size();
    const std::size_t d_inner = cfg.d_inner();
    const std::size_t d_state = cfg.d_state;
    const std::size_t lanes = d_inner * d_state;
    const double taylor = cfg.delta_taylor_threshold;

    Matrix d_out(steps, cfg.d_model);
    if (cfg.pooling == Pooling::Mean) {
        const double inv = 1.0 / static_cast<double>(steps);
        for (std::size_t t = 0; t < steps; ++t)
            for (std::size_t d = 0; d < cfg.d_model; ++d) d_out(t, d) = d_pooled[d] * inv;
    } else {
        std::copy(d_pooled.begin(), d_pooled.end(), d_out.row(steps - 1).begin());
    }

    for (std::size_t l = cfg.n_layers; l-- > 0;) {
        const LayerParams& layer = enc.params.layers[l];
        const LayerTape& lt = tape.layers[l];

        Matrix d_y = detail::project_backward(layer.w_out, lt.y, d_out, &adapters, lt.out_proj, &grads);

        Matrix d_u(steps, d_inner);
        Matrix d_delta(steps, d_inner);
        Matrix d_b(steps, d_state);
        Matrix d_c(steps, d_state);
        Vector carry(lanes, 0.0);  // dL/dh_t flowing back from t+1, already multiplied by a_bar_{t+1}

        const std::size_t chunk = cfg.chunk_size;
        const std::size_t n_chunks = (steps + chunk - 1) / chunk;
        Matrix local;  // states within the current chunk
        for (std::size_t ci = n_chunks; ci-- > 0;) {
            const std::size_t t0 = ci * chunk;
            const std::size_t t1 = std::min(steps, t0 + chunk);
            if (tape.storage == StateStorage::Recompute) {
                local = Matrix(t1 - t0, lanes);
                Vector h = lt.snapshots[ci];
                for (std::size_t t = t0; t < t1; ++t) {
                    detail::scan_step(layer, lt, t, taylor, h);
                    std::copy(h.begin(), h.end(), local.row(t - t0).begin());
                }
            }
            auto state_at = [&](std::size_t t) -> std::span<const double> {
                return tape.storage == StateStorage::Stored ? lt.states.row(t) : local.row(t - t0);
            };
            for (std::size_t t = t1; t-- > t0;) {
                const auto h_t = state_at(t);
                const std::span<const double> h_prev =
                    t == 0 ? std::span<const double>(lt.snapshots[0])
                           : (t == t0 && tape.storage == StateStorage::Recompute ? std::span<const double>(lt.snapshots[ci])
                                                                                  : state_at(t - 1));
                for (std::size_t ch = 0; ch < d_inner; ++ch) {
                    const double dy = d_y(t, ch);
                    const double delta = lt.delta(t, ch);
                    const double u = lt.u(t, ch);
                    double du = 0.0;
                    double ddelta = 0.0;
                    for (std::size_t n = 0; n < d_state; ++n) {
                        const std::size_t lane = ch * d_state + n;
                        const double bn = lt.b(t, n);
                        const double a = layer.a(ch, n);
                        const ZohFactor f = zoh_factor(delta, a, taylor);
                        const double g = carry[lane] + dy * lt.c(t, n);
                        d_c(t, n) += dy * h_t[lane];
                        const double d_abar = g * h_prev[lane];
                        const double d_bbar = g * u;
                        du += g * f.phi * bn;
                        d_b(t, n) += d_bbar * f.phi;
                        ddelta += d_abar * a * f.a_bar + d_bbar * bn * f.dphi_ddelta;
                        carry[lane] = f.a_bar * g;
                    }
                    d_u(t, ch) += du;
                    d_delta(t, ch) = ddelta;
                }
            }
        }

        Vector d_pre(d_inner);
        for (std::size_t t = 0; t < steps; ++t) {
            for (std::size_t ch = 0; ch < d_inner; ++ch) d_pre[ch] = d_delta(t, ch) * sigmoid(lt.pre_delta(t, ch));
            auto du = d_u.row(t);
            matvec_transposed_add(layer.w_delta, d_pre, du);
            matvec_transposed_add(layer.w_b, d_b.row(t), du);
            matvec_transposed_add(layer.w_c, d_c.row(t), du);
        }

        Matrix d_x = detail::project_backward(layer.w_in, lt.x, d_u, &adapters, lt.in_proj, &grads);
        for (std::size_t i = 0; i < d_x.data.size(); ++i) d_x.data[i] += d_out.data[i];
        d_out = std::move(d_x);
    }
}

/// Batch form: eval-mode forward per text, then accumulate adapter gradients
/// for the given upstream gradients (one d_model vector per text).
inline LoraGradients encode_backward(const std::vector<std::string>& texts, const std::vector<Vector>& upstream,
                                     const Encoder& enc, const LoraAdapters& adapters,
                                     StateStorage storage = StateStorage::Recompute) {
    if (adapters.empty()) fail(ErrorCode::NoTrainableParams, "encoder backward needs LoRA adapters");
    if (texts.size() != upstream.size()) fail(ErrorCode::ShapeError, "one upstream gradient per text required");
    LoraGradients grads = LoraGradients::zeros_like(adapters);
    for (std::size_t i = 0; i < texts.size(); ++i) {
        const auto ids = tokenize(texts[i], enc.vocab, enc.config.max_len);
        const EncoderTape tape = encode_forward(ids, enc, &adapters, Mode::Eval, nullptr, storage);
        encode_backward(tape, upstream[i], enc, adapters, grads);
    }
    return grads;
}

}  // namespace mpsum
