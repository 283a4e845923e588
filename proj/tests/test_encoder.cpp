#include <gtest/gtest.h>

#include "mpsum/encoder.hpp"
#include "mpsum/selfcheck.hpp"

using namespace mpsum;

namespace {

const std::vector<std::string> kCorpus = {"the grinder is loud but the coffee tastes great every single morning",
                                          "shipping was slow and the lid cracked", "great value"};

struct Fixture {
    Encoder enc;
    LoraAdapters adapters;
};

Fixture make(std::uint64_t seed, EncoderConfig cfg = {}, bool random_up = true) {
    if (cfg.d_model == 64) {
        cfg.d_model = 8;
        cfg.d_state = 4;
        cfg.chunk_size = 4;
    }
    Fixture f{make_encoder(cfg, build_vocab(kCorpus), seed), {}};
    f.adapters = attach_lora(f.enc.params, LoraConfig{}, seed);
    if (random_up) {
        RngStream rng = rng_derive(seed, "test/up");
        for (auto& a : f.adapters.adapters)
            for (auto& v : a.up.data) v = 0.05 * rng.normal();
    }
    return f;
}

/// Scalar probe L = Σ_i w_i · encode(text_i), the FD oracle target.
double probe(const Fixture& f, const std::vector<Vector>& w) {
    double s = 0.0;
    for (std::size_t i = 0; i < kCorpus.size(); ++i) s += dot(w[i], encode(kCorpus[i], f.enc, &f.adapters).values);
    return s;
}

std::vector<Vector> random_upstream(std::size_t d, std::uint64_t seed) {
    RngStream rng = rng_derive(seed, "test/upstream");
    std::vector<Vector> w(kCorpus.size(), Vector(d));
    for (auto& v : w)
        for (auto& x : v) x = rng.normal();
    return w;
}

double fd_error(Fixture& f, const std::vector<Vector>& w, const LoraGradients& g) {
    double worst = 0.0;
    auto loss = [&] { return probe(f, w); };
    for (std::size_t a = 0; a < f.adapters.adapters.size(); ++a) {
        worst = std::max(worst, max_gradient_error(f.adapters.adapters[a].down.data, g.down[a].data, loss, 1e-5));
        worst = std::max(worst, max_gradient_error(f.adapters.adapters[a].up.data, g.up[a].data, loss, 1e-5));
    }
    return worst;
}

}  // namespace

TEST(Encoder, BackwardMatchesFiniteDifferencesAcrossSeeds) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        Fixture f = make(seed);
        const auto w = random_upstream(8, seed);
        const LoraGradients g = encode_backward(kCorpus, w, f.enc, f.adapters);
        EXPECT_LE(fd_error(f, w, g), 1e-4) << "seed " << seed;
    }
}

TEST(Encoder, BackwardThroughTaylorBranch) {
    Fixture f = make(3);
    for (auto& layer : f.enc.params.layers)
        for (auto& b : layer.b_delta) b = -14.0;  // Δ ≈ 8e-7 so |Δa| < 1e-4 everywhere
    const auto w = random_upstream(8, 3);
    const LoraGradients g = encode_backward(kCorpus, w, f.enc, f.adapters);
    EXPECT_LE(fd_error(f, w, g), 1e-4);
}

TEST(Encoder, BackwardWithLastPooling) {
    EncoderConfig cfg;
    cfg.d_model = 8;
    cfg.d_state = 4;
    cfg.chunk_size = 5;
    cfg.pooling = Pooling::Last;
    Fixture f = make(4, cfg);
    const auto w = random_upstream(8, 4);
    const LoraGradients g = encode_backward(kCorpus, w, f.enc, f.adapters);
    EXPECT_LE(fd_error(f, w, g), 1e-4);
}

TEST(Encoder, RecomputeEqualsStoredStates) {
    for (const std::size_t chunk : {1u, 3u, 4u, 32u, 200u}) {
        EncoderConfig cfg;
        cfg.d_model = 8;
        cfg.d_state = 4;
        cfg.chunk_size = chunk;
        Fixture f = make(7, cfg);
        const auto w = random_upstream(8, 7);
        const LoraGradients a = encode_backward(kCorpus, w, f.enc, f.adapters, StateStorage::Recompute);
        const LoraGradients b = encode_backward(kCorpus, w, f.enc, f.adapters, StateStorage::Stored);
        for (std::size_t i = 0; i < a.down.size(); ++i) {
            for (std::size_t k = 0; k < a.down[i].data.size(); ++k) ASSERT_NEAR(a.down[i].data[k], b.down[i].data[k], 1e-10);
            for (std::size_t k = 0; k < a.up[i].data.size(); ++k) ASSERT_NEAR(a.up[i].data[k], b.up[i].data[k], 1e-10);
        }
    }
}

TEST(Encoder, ZeroUpstreamGivesZeroGradients) {
    Fixture f = make(8);
    const std::vector<Vector> zero(kCorpus.size(), Vector(8, 0.0));
    const LoraGradients g = encode_backward(kCorpus, zero, f.enc, f.adapters);
    for (const auto& m : g.down)
        for (const double v : m.data) EXPECT_EQ(v, 0.0);
    for (const auto& m : g.up)
        for (const double v : m.data) EXPECT_EQ(v, 0.0);
}

TEST(Encoder, BackwardWithoutAdaptersIsAnError) {
    Fixture f = make(9);
    try {
        encode_backward(kCorpus, random_upstream(8, 9), f.enc, LoraAdapters{});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::NoTrainableParams);
    }
}

TEST(Encoder, FreshAdaptersAreBitwiseNeutral) {
    Fixture f = make(10, {}, false);
    for (const auto& text : kCorpus) EXPECT_EQ(encode(text, f.enc, &f.adapters).values, encode(text, f.enc).values);
}

TEST(Encoder, ZeroAlphaIsNeutral) {
    Fixture f = make(11);
    for (auto& a : f.adapters.adapters) a.alpha = 0.0;
    for (const auto& text : kCorpus) EXPECT_EQ(encode(text, f.enc, &f.adapters).values, encode(text, f.enc).values);
}

TEST(Encoder, SingleTokenMeanIsThatPosition) {
    Fixture f = make(12);
    const auto ids = tokenize("great", f.enc.vocab);
    const EncoderTape tape = encode_forward(ids, f.enc);
    const auto row = tape.output.row(0);
    EXPECT_EQ(tape.pooled, Vector(row.begin(), row.end()));
}

TEST(Encoder, EmptyTextIsZeroAndFlagged) {
    Fixture f = make(13);
    const Embedding e = encode("", f.enc);
    EXPECT_TRUE(e.empty);
    EXPECT_EQ(e.values, Vector(8, 0.0));
}

TEST(Encoder, PairIsReviewThenSentence) {
    Fixture f = make(14);
    const Vector r = encode(kCorpus[0], f.enc).values, s = encode(kCorpus[1], f.enc).values;
    const Vector p = encode_pair(kCorpus[0], kCorpus[1], f.enc);
    ASSERT_EQ(p.size(), 16u);
    EXPECT_EQ(Vector(p.begin(), p.begin() + 8), r);
    EXPECT_EQ(Vector(p.begin() + 8, p.end()), s);
    const Vector q = encode_pair(kCorpus[1], kCorpus[0], f.enc);
    EXPECT_EQ(Vector(q.begin(), q.begin() + 8), s);
    const Vector same = encode_pair(kCorpus[2], kCorpus[2], f.enc);
    EXPECT_EQ(Vector(same.begin(), same.begin() + 8), Vector(same.begin() + 8, same.end()));
}

TEST(Encoder, DefaultPairWidthAndDeterminism) {
    const Encoder enc = make_encoder(EncoderConfig{}, build_vocab(kCorpus), 42);
    EXPECT_EQ(encode_pair(kCorpus[0], kCorpus[1], enc).size(), 128u);
    const Encoder again = make_encoder(EncoderConfig{}, build_vocab(kCorpus), 42);
    EXPECT_EQ(encode(kCorpus[0], enc).values, encode(kCorpus[0], again).values);
}

TEST(Encoder, ForwardDoesNotDependOnChunkSize) {
    EncoderConfig a;
    a.d_model = 8;
    a.d_state = 4;
    a.chunk_size = 1;
    EncoderConfig b = a;
    b.chunk_size = 64;
    const Encoder ea = make_encoder(a, build_vocab(kCorpus), 2), eb = make_encoder(b, build_vocab(kCorpus), 2);
    EXPECT_EQ(encode(kCorpus[0], ea).values, encode(kCorpus[0], eb).values);
}

TEST(Encoder, HiddenStatesStayBounded) {
    Fixture f = make(15);
    const auto ids = tokenize(kCorpus[0], f.enc.vocab);
    const EncoderTape tape = encode_forward(ids, f.enc, nullptr, Mode::Eval, nullptr, StateStorage::Stored);
    for (const auto& lt : tape.layers)
        for (const double h : lt.states.data) EXPECT_TRUE(std::isfinite(h) && std::abs(h) < 1e3);
}

TEST(Encoder, TrainModeDropoutOnlyTouchesAdapterPath) {
    Fixture f = make(16, {}, false);  // B = 0: adapter path contributes nothing either way
    RngStream rng = rng_derive(1, "dropout");
    const auto ids = tokenize(kCorpus[0], f.enc.vocab);
    const EncoderTape train = encode_forward(ids, f.enc, &f.adapters, Mode::Train, &rng);
    EXPECT_EQ(train.pooled, encode(kCorpus[0], f.enc).values);
}

TEST(Lora, EffectiveWeightAndShapes) {
    Matrix w(2, 3, 1.0);
    LoraAdapter a;
    a.rank = 1;
    a.alpha = 2.0;
    a.down = Matrix(1, 3);
    a.down.data = {1, 2, 3};
    a.up = Matrix(2, 1);
    a.up.data = {1, -1};
    const Matrix e = lora_effective(w, a);
    EXPECT_EQ(e.data, (Vector{3, 5, 7, -1, -3, -5}));
    EXPECT_EQ(w, Matrix(2, 3, 1.0));
    a.up = Matrix(3, 1);
    EXPECT_THROW(lora_effective(w, a), Error);
}

TEST(Lora, AttachTargetsInAndOutProjections) {
    Fixture f = make(17, {}, false);
    ASSERT_EQ(f.adapters.adapters.size(), 4u);
    for (const auto& a : f.adapters.adapters) {
        EXPECT_EQ(a.rank, 4u);
        EXPECT_EQ(a.alpha, 32.0);
        EXPECT_EQ(a.dropout, 0.1);
        for (const double v : a.up.data) EXPECT_EQ(v, 0.0);
        const Matrix& base = lora_base_weight(f.enc.params.layers[a.layer], a.target);
        EXPECT_EQ(a.down.cols, base.cols);
        EXPECT_EQ(a.up.rows, base.rows);
    }
}
