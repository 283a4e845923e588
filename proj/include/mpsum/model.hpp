#pragma once

// The assembled scorer: encoder (+ optional adapters) -> Poincaré features
// -> head. Also the small thread helper used for read-only scoring.

#include <algorithm>
#include <cstddef>
#include <exception>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "mpsum/encoder.hpp"
#include "mpsum/head.hpp"
#include "mpsum/lora.hpp"
#include "mpsum/poincare.hpp"

namespace mpsum {

/// Runs fn(i) for i in [0, n) on up to `jobs` threads. Each index must write
/// only its own output slot; results are then independent of `jobs`.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t jobs, Fn&& fn) {
    if (jobs <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    const std::size_t workers = std::min(jobs, n);
    std::exception_ptr first_error;
    std::mutex error_mutex;
    std::vector<std::thread> threads;
    threads.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        threads.emplace_back([&, w] {
            try {
                for (std::size_t i = w; i < n; i += workers) fn(i);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!first_error) first_error = std::current_exception();
            }
        });
    }
    for (auto& t : threads) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

struct Model {
    Encoder encoder;
    std::optional<LoraAdapters> adapters;
    std::optional<PoincareCompressor> compressor;  // absent when compression is switched off
    ClassifierHead head;

    const LoraAdapters* adapter_ptr() const { return adapters ? &*adapters : nullptr; }

    std::size_t feature_width() const {
        return compressor ? compressor->n_clusters() : 2 * encoder.config.d_model;
    }
};

inline Vector concat(std::span<const double> a, std::span<const double> b) {
    Vector out(a.begin(), a.end());
    out.insert(out.end(), b.begin(), b.end());
    return out;
}

inline Vector pair_features(std::span<const double> h_rs, const Model& model) {
    if (model.compressor) return compress(h_rs, *model.compressor);
    return Vector(h_rs.begin(), h_rs.end());
}

/// Relevance probabilities for every sentence of one review.
inline Vector score_sentences(const std::string& review_text, const std::vector<std::string>& sentences,
                              const Model& model, std::size_t jobs = 1) {
    if (sentences.empty()) return {};
    const Vector h_r = encode(review_text, model.encoder, model.adapter_ptr()).values;
    Matrix features(sentences.size(), model.feature_width());
    parallel_for(sentences.size(), jobs, [&](std::size_t i) {
        const Vector h_s = encode(sentences[i], model.encoder, model.adapter_ptr()).values;
        const Vector f = pair_features(concat(h_r, h_s), model);
        std::copy(f.begin(), f.end(), features.row(i).begin());
    });
    Vector logits = head_predict(features, model.head);
    for (auto& z : logits) z = sigmoid(z);
    return logits;
}

}  // namespace mpsum
