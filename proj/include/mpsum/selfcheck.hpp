#pragma once

// Invariant suites behind `mpsum selfcheck`. Each suite is small enough to
// run in a few seconds and returns a one-line verdict.

#include <cmath>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "mpsum/head.hpp"
#include "mpsum/numerics.hpp"
#include "mpsum/poincare.hpp"
#include "mpsum/rouge.hpp"
#include "mpsum/ssm.hpp"
#include "mpsum/summarize.hpp"
#include "mpsum/training.hpp"

namespace mpsum {

struct SuiteResult {
    std::string name;
    bool passed = false;
    std::string detail;
};

/// Random discretised scan inputs with HiPPO-diagonal A and softplus Δ.
inline ScanInputs random_scan_inputs(std::size_t steps, std::size_t channels, std::size_t state, RngStream& rng) {
    ScanInputs in{channels, state, Matrix(steps, channels * state), Matrix(steps, channels * state), Matrix(steps, state)};
    for (std::size_t t = 0; t < steps; ++t) {
        const double x_scale = rng.normal();
        Vector b(state);
        for (auto& v : b) v = rng.normal();
        for (auto& v : in.c.row(t)) v = rng.normal();
        for (std::size_t ch = 0; ch < channels; ++ch) {
            const double delta = softplus(rng.normal() - 2.0);
            const double x = x_scale * rng.normal();
            for (std::size_t n = 0; n < state; ++n) {
                const Discretized d = discretize(delta, -static_cast<double>(n + 1), b[n]);
                in.a_bar(t, ch * state + n) = d.a_bar;
                in.drive(t, ch * state + n) = d.b_bar * x;
            }
        }
    }
    return in;
}

/// |a-b| / max(|a|, |b|, floor). The floor keeps near-zero entries, where
/// finite differences only carry round-off, from dominating the ratio.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Central-difference check of `grad` against `loss` over every entry of `params`.
inline double max_gradient_error(std::span<double> params, std::span<const double> grad,
                                 const std::function<double()>& loss, double h = 1e-6) {
    double worst = 0.0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double saved = params[i];
        params[i] = saved + h;
        const double up = loss();
        params[i] = saved - h;
        const double down = loss();
        params[i] = saved;
        worst = std::max(worst, relative_error(grad[i], (up - down) / (2.0 * h)));
    }
    return worst;
}

namespace detail {

inline std::string fmt(double v) {
    std::ostringstream s;
    s.precision(3);
    s << std::scientific << v;
    return s.str();
}

/// Tiny labelled corpus with a small encoder, compressor and adapters
/// whose B factor is randomised so every adapter gradient is non-trivial.
struct GradFixture {
    TrainingSet set;
    Model model;
};

inline GradFixture make_grad_fixture(std::uint64_t seed, std::size_t d_model) {
    GradFixture f;
    f.set.review_texts = {"the coffee tasted bitter and burnt but the price was fair",
                          "great grinder sharp blades easy cleaning loud motor"};
    f.set.examples = {{0, "the coffee tasted bitter", 1.0},
                      {0, "the price was fair", 0.0},
                      {1, "great grinder sharp blades", 1.0},
                      {1, "loud motor", 0.0},
                      {1, "easy cleaning", 0.0}};
    EncoderConfig cfg;
    cfg.d_model = d_model;
    cfg.d_state = 4;
    cfg.n_layers = 2;
    cfg.chunk_size = 3;
    std::vector<std::string> texts = f.set.review_texts;
    f.model.encoder = make_encoder(cfg, build_vocab(texts), seed);
    LoraConfig lc;
    lc.rank = 2;
    lc.alpha = 4.0;
    f.model.adapters = attach_lora(f.model.encoder.params, lc, seed);
    RngStream rng = rng_derive(seed, "selfcheck");
    for (auto& a : f.model.adapters->adapters)
        for (auto& v : a.up.data) v = 0.3 * rng.normal();

    // Centroids stay frozen during fine-tuning, so random interior points serve
    // as well as fitted ones and keep every pair away from the distance kink
    // at a centroid.
    const EncodedSet enc = encode_set(f.set, f.model.encoder, f.model.adapter_ptr(), 1);
    Matrix pairs(f.set.examples.size(), 2 * d_model);
    for (std::size_t i = 0; i < f.set.examples.size(); ++i) {
        const Vector p = enc.pair(f.set, i);
        std::copy(p.begin(), p.end(), pairs.row(i).begin());
    }
    PoincareCompressor comp;
    comp.scaler = fit_ball_scaler(pairs);
    comp.centroids = Matrix(2, 2 * d_model);
    for (std::size_t j = 0; j < comp.centroids.rows; ++j) {
        auto row = comp.centroids.row(j);
        for (auto& v : row) v = rng.normal();
        const double scale = (0.2 + 0.4 * rng.uniform()) / norm(row);
        for (auto& v : row) v *= scale;
    }
    f.model.compressor = std::move(comp);
    f.model.head = ClassifierHead::create(2, 0.0);
    for (auto& v : f.model.head.linear.w) v = rng.normal();
    for (auto& v : f.model.head.bn.gamma) v = 1.0 + 0.2 * rng.normal();
    for (auto& v : f.model.head.bn.beta) v = 0.2 * rng.normal();
    f.model.head.linear.b = 0.1;
    return f;
}

}  // namespace detail

inline SuiteResult check_scan() {
    SuiteResult r{"scan/discretization", true, ""};
    RngStream rng = rng_derive(7, "selfcheck/scan");
    double worst = 0.0;
    for (int c = 0; c < 10; ++c) {
        const ScanInputs in = random_scan_inputs(128, 32, 16, rng);
        const Matrix a = selective_scan_seq(in);
        const Matrix b = selective_scan_parallel(in);
        for (std::size_t i = 0; i < a.data.size(); ++i) worst = std::max(worst, std::abs(a.data[i] - b.data[i]));
    }
    const Discretized d = discretize(0.1, -1.0, 1.0);
    const double a_err = std::abs(d.a_bar - 0.9048374180359595);
    const double b_err = std::abs(d.b_bar - 0.09516258196404048);
    const ZohFactor exact = zoh_factor(1e-4, -1.0, 1e-5);
    const ZohFactor taylor = zoh_factor(1e-4, -1.0, 1e-3);
    const double branch = std::abs(exact.phi - taylor.phi);
    r.passed = worst <= 1e-10 && a_err <= 1e-7 && b_err <= 1e-7 && branch <= 1e-12;
    r.detail = "scan max diff " + detail::fmt(worst) + ", a_bar err " + detail::fmt(a_err) + ", b_bar err " +
               detail::fmt(b_err) + ", branch gap " + detail::fmt(branch);
    return r;
}

inline SuiteResult check_gradients() {
    SuiteResult r{"gradients", true, ""};
    double worst_head = 0.0, worst_lora = 0.0;
    for (std::uint64_t seed = 1; seed <= 2; ++seed) {
        detail::GradFixture f = detail::make_grad_fixture(seed, 4);
        const std::vector<std::size_t> batch{0, 1, 2, 3, 4};
        ClassifierHead head = f.model.head;
        const LoraLossResult res = lora_loss_and_grads(f.model, head, f.set, batch, nullptr);
        auto loss = [&] {
            ClassifierHead h = f.model.head;
            return lora_loss_and_grads(f.model, h, f.set, batch, nullptr).loss;
        };
        worst_head = std::max(worst_head, max_gradient_error(f.model.head.bn.gamma, res.head.bn.gamma, loss));
        worst_head = std::max(worst_head, max_gradient_error(f.model.head.bn.beta, res.head.bn.beta, loss));
        worst_head = std::max(worst_head, max_gradient_error(f.model.head.linear.w, res.head.w, loss));
        for (std::size_t a = 0; a < f.model.adapters->adapters.size(); ++a) {
            auto& ad = f.model.adapters->adapters[a];
            worst_lora = std::max(worst_lora, max_gradient_error(ad.down.data, res.adapters.down[a].data, loss));
            worst_lora = std::max(worst_lora, max_gradient_error(ad.up.data, res.adapters.up[a].data, loss));
        }
    }
    r.passed = worst_head <= 1e-4 && worst_lora <= 1e-4;
    r.detail = "head rel err " + detail::fmt(worst_head) + ", lora rel err " + detail::fmt(worst_lora);
    return r;
}

inline SuiteResult check_poincare() {
    SuiteResult r{"poincare metric", true, ""};
    RngStream rng = rng_derive(11, "selfcheck/poincare");
    auto point = [&] {
        Vector p(5);
        for (auto& v : p) v = rng.normal();
        const double target = 0.99 * rng.uniform();
        const double n = norm(p);
        for (auto& v : p) v *= target / n;
        return p;
    };
    double tri = 0.0, origin = 0.0;
    bool exact = true;
    const Vector zero(5, 0.0);
    for (int i = 0; i < 200; ++i) {
        const Vector a = point(), b = point(), c = point();
        const double ab = poincare_distance(a, b);
        exact = exact && ab == poincare_distance(b, a) && ab >= 0.0 && poincare_distance(a, a) == 0.0;
        tri = std::max(tri, ab - (poincare_distance(a, c) + poincare_distance(c, b)));
        origin = std::max(origin, std::abs(poincare_distance(zero, b) - 2.0 * artanh(norm(b))));
    }
    r.passed = exact && tri <= 1e-9 && origin <= 1e-9;
    r.detail = std::string("symmetry/identity ") + (exact ? "exact" : "violated") + ", triangle excess " +
               detail::fmt(std::max(tri, 0.0)) + ", origin err " + detail::fmt(origin);
    return r;
}

inline SuiteResult check_eigensolver() {
    SuiteResult r{"eigensolver", true, ""};
    RngStream rng = rng_derive(13, "selfcheck/eigen");
    const std::size_t n = 30;
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j <= i; ++j) m(i, j) = m(j, i) = rng.normal();
    const EigenDecomposition e = jacobi_eigh(m);
    Matrix resid = matmul(m, e.eigenvectors);
    double trace = 0.0, eig_sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        trace += m(i, i);
        eig_sum += e.eigenvalues[i];
        for (std::size_t k = 0; k < n; ++k) resid(k, i) -= e.eigenvalues[i] * e.eigenvectors(k, i);
    }
    const double rel = frobenius_norm(resid) / frobenius_norm(m);
    r.passed = rel <= 1e-8 && std::abs(trace - eig_sum) <= 1e-8;
    r.detail = "residual " + detail::fmt(rel) + ", trace gap " + detail::fmt(std::abs(trace - eig_sum));
    return r;
}

inline SuiteResult check_rouge() {
    SuiteResult r{"rouge", true, ""};
    const Tokens cand{"the", "cat"}, ref{"the", "cat", "sat"};
    const RougeTriple t = rouge_all(cand, ref);
    const bool ok = std::abs(t.r1.f1 - 0.8) <= 1e-12 && std::abs(t.r2.f1 - 2.0 / 3.0) <= 1e-12 &&
                    std::abs(t.rl.f1 - 0.8) <= 1e-12 && lcs_len({"a", "b", "c", "b"}, {"b", "c", "b", "a"}) == 3 &&
                    rouge_n({}, ref, 1).f1 == 0.0;
    r.passed = ok;
    r.detail = "R1 " + format_score(t.r1.f1) + ", R2 " + format_score(t.r2.f1) + ", RL " + format_score(t.rl.f1);
    return r;
}

inline SuiteResult check_schedule() {
    SuiteResult r{"schedule/optimizer", true, ""};
    const OneCycleSchedule s{2e-5, 100};
    const double e0 = std::abs(onecycle_lr(0, s) - 8e-7);
    const double e1 = std::abs(onecycle_lr(s.peak_step(), s) - 2e-5);
    const double e2 = std::abs(onecycle_lr(100, s) - 8e-11);
    AdamW opt;
    AdamSlot slot(1);
    Vector w{1.0};
    const Vector g{0.0};
    double expected = 1.0;
    for (int k = 0; k < 5; ++k) {
        opt.begin_step();
        opt.update(w, g, slot, 1e-3, true);
        expected *= 1.0 - 1e-3 * 0.5;
    }
    r.passed = e0 <= 1e-12 && e1 <= 1e-12 && e2 <= 1e-12 && w[0] == expected;
    r.detail = "endpoint errs " + detail::fmt(std::max({e0, e1, e2})) + ", decay " + (w[0] == expected ? "exact" : "off");
    return r;
}

inline std::vector<SuiteResult> run_selfcheck() {
    std::vector<SuiteResult> out;
    for (auto* suite : {check_scan, check_gradients, check_poincare, check_eigensolver, check_rouge, check_schedule}) {
        try {
            out.push_back(suite());
        } catch (const std::exception& e) {
            out.push_back({"suite", false, e.what()});
        }
    }
    return out;
}

}  // namespace mpsum
