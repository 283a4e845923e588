#pragma once

// Sentence selection + paraphrase + concatenation, and corpus evaluation
// against gold summaries.

#include <algorithm>
#include <cstdio>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mpsum/model.hpp"
#include "mpsum/paraphrase.hpp"
#include "mpsum/rouge.hpp"
#include "mpsum/text.hpp"

namespace mpsum {

struct SummaryResult {
    std::vector<std::string> sentences;  // every preprocessed sentence, review order
    Vector scores;                       // relevance probability per sentence
    std::vector<std::size_t> selected_index;
    std::vector<std::string> selected;
    std::vector<std::string> paraphrased;
    std::string final_summary;

    bool empty() const noexcept { return selected.empty(); }
};

struct SummarizeOptions {
    double threshold = 0.5;
    std::optional<std::size_t> top_k;
    std::size_t jobs = 1;
};

/// Indices to keep, in review order. top_k picks the k highest scores with
/// ties going to the earlier sentence.
inline std::vector<std::size_t> select_sentences(const Vector& scores, const SummarizeOptions& opts) {
    std::vector<std::size_t> keep;
    if (opts.top_k) {
        std::vector<std::size_t> order(scores.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
        order.resize(std::min(*opts.top_k, order.size()));
        keep = std::move(order);
        std::sort(keep.begin(), keep.end());
    } else {
        for (std::size_t i = 0; i < scores.size(); ++i)
            if (scores[i] >= opts.threshold) keep.push_back(i);
    }
    return keep;
}

inline std::string join_spaces(const std::vector<std::string>& parts) {
    std::string out;
    for (const auto& p : parts) {
        if (p.empty()) continue;
        if (!out.empty()) out.push_back(' ');
        out += p;
    }
    return out;
}

/// `sentences` are already preprocessed, in review order.
inline SummaryResult summarize_sentences(const std::vector<std::string>& sentences, const Model& model,
                                         const Paraphraser& paraphraser, const SummarizeOptions& opts = {}) {
    if (sentences.empty()) fail(ErrorCode::EmptyReview, "review has no sentences");
    SummaryResult res;
    res.sentences = sentences;
    res.scores = score_sentences(join_spaces(sentences), sentences, model, opts.jobs);
    res.selected_index = select_sentences(res.scores, opts);
    for (const auto i : res.selected_index) res.selected.push_back(sentences[i]);
    res.paraphrased = paraphraser.paraphrase(res.selected);
    res.final_summary = join_spaces(res.paraphrased);
    return res;
}

inline std::vector<std::string> preprocessed_sentences(std::string_view raw_review) {
    std::vector<std::string> out;
    for (const auto& s : unlabeled_sentences(raw_review)) out.push_back(s.text);
    return out;
}

inline SummaryResult summarize(std::string_view raw_review, const Model& model, const Paraphraser& paraphraser,
                               const SummarizeOptions& opts = {}) {
    return summarize_sentences(preprocessed_sentences(raw_review), model, paraphraser, opts);
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct ReviewEvaluation {
    std::string review_id;
    std::string generated;
    std::string gold;
    RougeTriple scores;
};

struct EvaluationReport {
    CorpusRouge corpus;
    std::vector<ReviewEvaluation> per_review;
};

/// Every review must carry a gold summary.
inline EvaluationReport evaluate_dataset(const std::vector<PreparedReview>& dataset, const Model& model,
                                         const Paraphraser& paraphraser, const SummarizeOptions& opts = {}) {
    if (dataset.empty()) fail(ErrorCode::EmptyCorpus, "evaluation dataset is empty");
    for (const auto& r : dataset)
        if (!r.summary || trim(*r.summary).empty())
            fail(ErrorCode::NoGold, "review '" + r.review_id + "' has no gold summary");

    EvaluationReport report;
    std::vector<std::pair<Tokens, Tokens>> pairs;
    for (const auto& r : dataset) {
        std::vector<std::string> sentences;
        for (const auto& s : r.sentences) sentences.push_back(s.text);
        if (sentences.empty()) fail(ErrorCode::EmptyReview, "review '" + r.review_id + "' has no sentences");
        const SummaryResult sum = summarize_sentences(sentences, model, paraphraser, opts);
        ReviewEvaluation ev{r.review_id, sum.final_summary, *r.summary, {}};
        pairs.emplace_back(rouge_tokens(ev.generated), rouge_tokens(ev.gold));
        ev.scores = rouge_all(pairs.back().first, pairs.back().second);
        report.per_review.push_back(std::move(ev));
    }
    report.corpus = corpus_rouge(pairs);
    return report;
}

inline nlohmann::ordered_json to_json(const EvaluationReport& r) {
    nlohmann::ordered_json j;
    j["rouge1"] = r.corpus.rouge1;
    j["rouge2"] = r.corpus.rouge2;
    j["rougeL"] = r.corpus.rougeL;
    j["per_review"] = nlohmann::ordered_json::array();
    for (const auto& e : r.per_review) {
        j["per_review"].push_back({{"review_id", e.review_id},
                                   {"generated", e.generated},
                                   {"gold", e.gold},
                                   {"rouge1", e.scores.r1.f1},
                                   {"rouge2", e.scores.r2.f1},
                                   {"rougeL", e.scores.rl.f1}});
    }
    return j;
}

inline std::string format_score(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", v);
    return buf;
}

/// Fixed-width table: one header row, one corpus row.
inline std::string render_table(const CorpusRouge& c, const std::string& label = "MPoincareSum") {
    const std::size_t w = std::max<std::size_t>(label.size(), 5);
    auto pad = [](std::string s, std::size_t width) {
        s.resize(std::max(width, s.size()), ' ');
        return s;
    };
    std::ostringstream out;
    out << pad("Model", w) << "  " << pad("R1", 5) << "  " << pad("R2", 5) << "  " << "RL" << "\n";
    out << pad(label, w) << "  " << format_score(c.rouge1) << "  " << format_score(c.rouge2) << "  "
        << format_score(c.rougeL) << "\n";
    return out.str();
}

}  // namespace mpsum
