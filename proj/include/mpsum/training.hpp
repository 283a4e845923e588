#pragma once

// The two training regimes: head-only on a frozen encoder, and LoRA
// fine-tuning that pushes gradients head -> batch norm -> Poincaré features ->
// encoder adapters.

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mpsum/checkpoint.hpp"
#include "mpsum/config.hpp"
#include "mpsum/encoder.hpp"
#include "mpsum/head.hpp"
#include "mpsum/lora.hpp"
#include "mpsum/model.hpp"
#include "mpsum/poincare.hpp"
#include "mpsum/text.hpp"

namespace mpsum {

struct TrainingExample {
    std::size_t review = 0;  // index into TrainingSet::review_texts
    std::string sentence;
    double label = 0.0;
};

struct TrainingSet {
    std::vector<std::string> review_texts;
    std::vector<TrainingExample> examples;

    Vector labels() const {
        Vector y;
        for (const auto& e : examples) y.push_back(e.label);
        return y;
    }
};

/// Labeled sentences of labeled reviews. Both classes must be present.
inline TrainingSet build_training_set(const std::vector<PreparedReview>& reviews) {
    TrainingSet set;
    std::size_t positives = 0;
    for (const auto& r : reviews) {
        if (!r.labeled()) continue;
        const std::size_t idx = set.review_texts.size();
        set.review_texts.push_back(r.review_text());
        for (const auto& s : r.sentences) {
            if (!s.label) continue;
            set.examples.push_back({idx, s.text, static_cast<double>(*s.label)});
            positives += *s.label == 1 ? 1 : 0;
        }
    }
    if (positives == 0 || positives == set.examples.size())
        fail(ErrorCode::DegenerateLabels, "training data needs both relevant and irrelevant sentences");
    return set;
}

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0.0;  // mean batch loss (dropout on)
    double eval_loss = 0.0;   // full-set loss, eval mode
    double accuracy = 0.0;    // full-set accuracy at the decision threshold
};

struct LoraStepRecord {
    std::size_t step = 0;
    std::optional<double> batch_loss;  // absent on the closing record
    std::optional<double> full_loss;  // eval-mode loss on the whole training set
};

struct TrainResult {
    Checkpoint checkpoint;
    std::vector<EpochRecord> epochs;
    std::vector<LoraStepRecord> lora_steps;
};

/// Shuffled index batches; a trailing batch of one joins its predecessor so
/// train-mode batch norm always sees at least two rows.
inline std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size, RngStream& rng) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    rng.shuffle(order);
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t start = 0; start < n; start += batch_size)
        batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                             order.begin() + static_cast<std::ptrdiff_t>(std::min(n, start + batch_size)));
    if (batches.size() > 1 && batches.back().size() == 1) {
        batches[batches.size() - 2].push_back(batches.back().front());
        batches.pop_back();
    }
    return batches;
}

inline std::size_t batches_per_epoch(std::size_t n, std::size_t batch_size) {
    std::size_t b = (n + batch_size - 1) / batch_size;
    if (b > 1 && n % batch_size == 1) --b;
    return b;
}

/// Adam slots for γ, β, w, b.
struct HeadOptimizerState {
    AdamSlot gamma, beta, w, b;

    explicit HeadOptimizerState(std::size_t n) : gamma(n), beta(n), w(n), b(1) {}

    void apply(ClassifierHead& head, const HeadGrads& g, const AdamW& opt, double lr) {
        opt.update(head.bn.gamma, g.bn.gamma, gamma, lr, false);
        opt.update(head.bn.beta, g.bn.beta, beta, lr, false);
        opt.update(head.linear.w, g.w, w, lr, true);
        const Vector gb{g.b};
        opt.update(std::span<double>(&head.linear.b, 1), gb, b, lr, false);
    }
};

/// Eval-mode encodings for every review and example.
struct EncodedSet {
    std::vector<Vector> reviews;
    std::vector<Vector> sentences;

    Vector pair(const TrainingSet& set, std::size_t i) const {
        return concat(reviews[set.examples[i].review], sentences[i]);
    }
};

inline EncodedSet encode_set(const TrainingSet& set, const Encoder& enc, const LoraAdapters* adapters, std::size_t jobs) {
    EncodedSet out;
    out.reviews.resize(set.review_texts.size());
    out.sentences.resize(set.examples.size());
    parallel_for(set.review_texts.size(), jobs,
                 [&](std::size_t i) { out.reviews[i] = encode(set.review_texts[i], enc, adapters).values; });
    parallel_for(set.examples.size(), jobs,
                 [&](std::size_t i) { out.sentences[i] = encode(set.examples[i].sentence, enc, adapters).values; });
    return out;
}

inline Matrix feature_matrix(const TrainingSet& set, const EncodedSet& enc, const Model& model) {
    Matrix f(set.examples.size(), model.feature_width());
    for (std::size_t i = 0; i < set.examples.size(); ++i) {
        const Vector row = pair_features(enc.pair(set, i), model);
        std::copy(row.begin(), row.end(), f.row(i).begin());
    }
    return f;
}

struct EvalStats {
    double loss = 0.0;
    double accuracy = 0.0;
};

inline EvalStats evaluate_features(const Matrix& features, const Vector& labels, const ClassifierHead& head,
                                   double threshold) {
    const Vector logits = head_predict(features, head);
    EvalStats s;
    s.loss = bce_loss(logits, labels).loss;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < logits.size(); ++i)
        if ((sigmoid(logits[i]) >= threshold ? 1.0 : 0.0) == labels[i]) ++correct;
    s.accuracy = static_cast<double>(correct) / static_cast<double>(logits.size());
    return s;
}

inline Matrix gather_rows(const Matrix& m, const std::vector<std::size_t>& idx) {
    Matrix out(idx.size(), m.cols);
    for (std::size_t r = 0; r < idx.size(); ++r) std::copy(m.row(idx[r]).begin(), m.row(idx[r]).end(), out.row(r).begin());
    return out;
}

/// Trains γ, β, w, b on fixed features. Returns the per-epoch trace.
inline std::vector<EpochRecord> fit_head(ClassifierHead& head, const Matrix& features, const Vector& labels,
                                         const RunConfig& cfg) {
    const std::size_t n = features.rows;
    RngStream shuffle_rng = rng_derive(cfg.seed, "shuffle");
    RngStream dropout_rng = rng_derive(cfg.seed, "dropout");
    const OneCycleSchedule schedule{cfg.lr, cfg.epochs * batches_per_epoch(n, cfg.batch_size)};
    AdamW opt(AdamWConfig{.weight_decay = cfg.weight_decay});
    HeadOptimizerState slots(features.cols);

    std::vector<EpochRecord> trace;
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        double loss_sum = 0.0;
        const auto batches = make_batches(n, cfg.batch_size, shuffle_rng);
        for (const auto& batch : batches) {
            const Matrix x = gather_rows(features, batch);
            Vector y;
            for (const auto i : batch) y.push_back(labels[i]);
            HeadCache cache;
            const Vector logits = head_forward(x, head, Mode::Train, &dropout_rng, &cache);
            const BceResult loss = bce_loss(logits, y);
            HeadGrads grads;
            head_backward(loss.grad, head, cache, grads);
            const double lr = onecycle_lr(step, schedule);
            opt.begin_step();
            slots.apply(head, grads, opt, lr);
            loss_sum += loss.loss;
            ++step;
        }
        const EvalStats stats = evaluate_features(features, labels, head, cfg.threshold);
        trace.push_back({epoch + 1, loss_sum / static_cast<double>(batches.size()), stats.loss, stats.accuracy});
    }
    return trace;
}

inline ClassifierHead init_head(std::size_t n_features, const RunConfig& cfg) {
    ClassifierHead head = ClassifierHead::create(n_features, cfg.dropout);
    RngStream rng = rng_derive(cfg.seed, "init").child("head");
    const double bound = 1.0 / std::sqrt(static_cast<double>(n_features));
    for (auto& w : head.linear.w) w = bound * (2.0 * rng.uniform() - 1.0);
    return head;
}

/// Frozen encoder, compressor fit on every training pair, head trained on the
/// cached features.
inline TrainResult train_head(const std::vector<PreparedReview>& dataset, const RunConfig& cfg, std::size_t jobs = 1) {
    cfg.validate();
    const TrainingSet set = build_training_set(dataset);
    TrainResult result;
    result.checkpoint.config = cfg;
    Model& model = result.checkpoint.model;
    model.encoder = make_encoder(cfg.encoder, build_vocab(corpus_texts(dataset)), cfg.seed);

    const EncodedSet encoded = encode_set(set, model.encoder, nullptr, jobs);
    if (cfg.use_compression) {
        Matrix pairs(set.examples.size(), 2 * cfg.encoder.d_model);
        for (std::size_t i = 0; i < set.examples.size(); ++i) {
            const Vector p = encoded.pair(set, i);
            std::copy(p.begin(), p.end(), pairs.row(i).begin());
        }
        model.compressor = fit_compressor(pairs, cfg.seed, {.n_clusters = cfg.n_clusters});
    }
    const Matrix features = feature_matrix(set, encoded, model);
    model.head = init_head(model.feature_width(), cfg);
    result.epochs = fit_head(model.head, features, set.labels(), cfg);
    return result;
}

// ---------------------------------------------------------------------------
// LoRA fine-tuning
// ---------------------------------------------------------------------------

struct LoraLossResult {
    double loss = 0.0;
    LoraGradients adapters;
    HeadGrads head;
};

/// Loss and gradients for one batch through the whole stack. With a null
/// `dropout_rng` both dropouts are off; batch norm still uses batch statistics
/// and, in that case, runs on a copy of the head so running stats stay put.
inline LoraLossResult lora_loss_and_grads(const Model& model, ClassifierHead& head, const TrainingSet& set,
                                          const std::vector<std::size_t>& batch, RngStream* dropout_rng,
                                          StateStorage storage = StateStorage::Recompute) {
    if (!model.adapters || model.adapters->empty()) fail(ErrorCode::NoTrainableParams, "no LoRA adapters attached");
    const LoraAdapters& adapters = *model.adapters;
    const Encoder& enc = model.encoder;
    const std::size_t d_model = enc.config.d_model;
    const Mode enc_mode = dropout_rng != nullptr ? Mode::Train : Mode::Eval;

    std::map<std::size_t, EncoderTape> review_tapes;
    for (const auto i : batch) {
        const std::size_t r = set.examples[i].review;
        if (review_tapes.contains(r)) continue;
        const auto ids = tokenize(set.review_texts[r], enc.vocab, enc.config.max_len);
        review_tapes.emplace(r, encode_forward(ids, enc, &adapters, enc_mode, dropout_rng, storage));
    }
    std::vector<EncoderTape> sentence_tapes;
    std::vector<Vector> pairs;
    Matrix features(batch.size(), model.feature_width());
    Vector labels;
    for (std::size_t k = 0; k < batch.size(); ++k) {
        const auto& ex = set.examples[batch[k]];
        const auto ids = tokenize(ex.sentence, enc.vocab, enc.config.max_len);
        sentence_tapes.push_back(encode_forward(ids, enc, &adapters, enc_mode, dropout_rng, storage));
        pairs.push_back(concat(review_tapes.at(ex.review).pooled, sentence_tapes.back().pooled));
        const Vector f = pair_features(pairs.back(), model);
        std::copy(f.begin(), f.end(), features.row(k).begin());
        labels.push_back(ex.label);
    }

    ClassifierHead no_dropout_head;
    ClassifierHead* h = &head;
    if (dropout_rng == nullptr) {
        no_dropout_head = head;
        no_dropout_head.dropout = 0.0;
        h = &no_dropout_head;
    }
    HeadCache cache;
    const Vector logits = head_forward(features, *h, Mode::Train, dropout_rng, &cache);
    const BceResult bce = bce_loss(logits, labels);

    LoraLossResult out;
    out.loss = bce.loss;
    out.adapters = LoraGradients::zeros_like(adapters);
    const Matrix d_features = head_backward(bce.grad, *h, cache, out.head);
    for (std::size_t k = 0; k < batch.size(); ++k) {
        const Vector d_pair = model.compressor ? compress_backward(pairs[k], *model.compressor, d_features.row(k))
                                               : Vector(d_features.row(k).begin(), d_features.row(k).end());
        const std::span<const double> d_all(d_pair);
        encode_backward(review_tapes.at(set.examples[batch[k]].review), d_all.first(d_model), enc, adapters,
                        out.adapters);
        encode_backward(sentence_tapes[k], d_all.subspan(d_model), enc, adapters, out.adapters);
    }
    return out;
}

/// Full-set eval-mode loss and accuracy for the current adapters and head.
inline EvalStats evaluate_model(const Model& model, const TrainingSet& set, double threshold, std::size_t jobs = 1) {
    const EncodedSet encoded = encode_set(set, model.encoder, model.adapter_ptr(), jobs);
    return evaluate_features(feature_matrix(set, encoded, model), set.labels(), model.head, threshold);
}

/// Attaches fresh adapters to `ck.model` and fine-tunes adapters + head.
/// Centroids, scaler and base encoder weights stay frozen.
inline std::vector<LoraStepRecord> lora_finetune(Checkpoint& ck, const TrainingSet& set, std::size_t jobs = 1,
                                                 std::size_t full_loss_every = 10) {
    const RunConfig& cfg = ck.config;
    Model& model = ck.model;
    model.adapters = attach_lora(model.encoder.params, cfg.lora, cfg.seed);

    const std::size_t n = set.examples.size();
    const std::size_t total = cfg.lora_epochs * batches_per_epoch(n, cfg.batch_size);
    const OneCycleSchedule schedule{cfg.effective_lora_lr(), total};
    AdamW opt(AdamWConfig{.weight_decay = cfg.weight_decay});
    HeadOptimizerState head_slots(model.feature_width());
    std::vector<AdamSlot> down_slots, up_slots;
    for (const auto& a : model.adapters->adapters) {
        down_slots.emplace_back(a.down.data.size());
        up_slots.emplace_back(a.up.data.size());
    }
    RngStream shuffle_rng = rng_derive(cfg.seed, "shuffle").child("lora");
    RngStream dropout_rng = rng_derive(cfg.seed, "dropout").child("lora");

    std::vector<LoraStepRecord> trace;
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < cfg.lora_epochs; ++epoch) {
        for (const auto& batch : make_batches(n, cfg.batch_size, shuffle_rng)) {
            LoraStepRecord rec;
            rec.step = step;
            if (full_loss_every != 0 && step % full_loss_every == 0)
                rec.full_loss = evaluate_model(model, set, cfg.threshold, jobs).loss;
            const LoraLossResult r = lora_loss_and_grads(model, model.head, set, batch, &dropout_rng);
            rec.batch_loss = r.loss;
            const double lr = onecycle_lr(step, schedule);
            opt.begin_step();
            head_slots.apply(model.head, r.head, opt, lr);
            for (std::size_t a = 0; a < model.adapters->adapters.size(); ++a) {
                auto& ad = model.adapters->adapters[a];
                opt.update(ad.down.data, r.adapters.down[a].data, down_slots[a], lr, true);
                opt.update(ad.up.data, r.adapters.up[a].data, up_slots[a], lr, true);
            }
            trace.push_back(rec);
            ++step;
        }
    }
    LoraStepRecord last;
    last.step = step;
    last.full_loss = evaluate_model(model, set, cfg.threshold, jobs).loss;
    trace.push_back(last);
    return trace;
}

/// Head training followed by LoRA fine-tuning from the converged head.
inline TrainResult train_lora(const std::vector<PreparedReview>& dataset, const RunConfig& cfg, std::size_t jobs = 1) {
    TrainResult result = train_head(dataset, cfg, jobs);
    result.checkpoint.config.lora.enabled = true;
    const TrainingSet set = build_training_set(dataset);
    result.lora_steps = lora_finetune(result.checkpoint, set, jobs);
    return result;
}

}  // namespace mpsum
