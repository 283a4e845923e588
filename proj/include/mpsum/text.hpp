#pragma once

// Dataset ingestion, cleaning, sentence splitting and relevance annotation.

#include <cctype>
#include <cstddef>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "mpsum/encoder.hpp"
#include "mpsum/error.hpp"
#include "mpsum/rouge.hpp"
#include "mpsum/ssm.hpp"

namespace mpsum {

struct Review {
    std::string review_id;
    std::string text;
    std::optional<std::string> summary;

    bool operator==(const Review&) const = default;
};

// ---------------------------------------------------------------------------
// Cleaning and splitting
// ---------------------------------------------------------------------------

inline bool is_url_token(std::string_view tok) {
    return tok.starts_with("http://") || tok.starts_with("https://") || tok.starts_with("www.");
}

/// Lowercase, drop URL tokens, digits and punctuation, collapse whitespace.
inline std::string preprocess(std::string_view raw) {
    std::string lower(raw);
    for (auto& ch : lower) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    std::string out;
    out.reserve(lower.size());
    for (const auto& tok : split_whitespace(lower)) {
        if (is_url_token(tok)) continue;
        std::string kept;
        for (const char ch : tok) {
            const auto uc = static_cast<unsigned char>(ch);
            if (std::isdigit(uc) || std::ispunct(uc)) continue;
            kept.push_back(ch);
        }
        if (kept.empty()) continue;
        if (!out.empty()) out.push_back(' ');
        out += kept;
    }
    return out;
}

inline Tokens rouge_tokens(std::string_view text) { return split_whitespace(preprocess(text)); }

inline std::string trim(std::string_view s) {
    std::size_t b = 0;
    std::size_t e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

/// Splits after '.', '!', '?' or ';' when followed by whitespace or end of
/// text. The delimiter stays with its sentence; blank fragments are dropped.
inline std::vector<std::string> split_sentences(std::string_view raw) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (std::size_t i = 0; i < raw.size(); ++i) {
        const char ch = raw[i];
        if (ch != '.' && ch != '!' && ch != '?' && ch != ';') continue;
        const bool boundary = i + 1 == raw.size() || std::isspace(static_cast<unsigned char>(raw[i + 1]));
        if (!boundary) continue;
        std::string piece = trim(raw.substr(start, i + 1 - start));
        if (!piece.empty()) out.push_back(std::move(piece));
        start = i + 1;
    }
    if (start < raw.size()) {
        std::string piece = trim(raw.substr(start));
        if (!piece.empty()) out.push_back(std::move(piece));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Input dataset (JSON Lines)
// ---------------------------------------------------------------------------

inline std::vector<Review> parse_reviews(std::istream& in) {
    std::vector<Review> reviews;
    std::set<std::string> seen;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const std::string where = "line " + std::to_string(line_no);
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            fail(ErrorCode::ParseError, where + ": " + e.what());
        }
        if (!j.is_object()) fail(ErrorCode::ParseError, where + ": expected a JSON object");
        if (!j.contains("review_id") || !j["review_id"].is_string())
            fail(ErrorCode::ParseError, where + ": missing string field 'review_id'");
        if (!j.contains("text") || !j["text"].is_string())
            fail(ErrorCode::ParseError, where + ": missing string field 'text'");
        Review r;
        r.review_id = j["review_id"].get<std::string>();
        r.text = j["text"].get<std::string>();
        if (j.contains("summary") && !j["summary"].is_null()) {
            if (!j["summary"].is_string()) fail(ErrorCode::ParseError, where + ": 'summary' must be a string");
            r.summary = j["summary"].get<std::string>();
        }
        if (!seen.insert(r.review_id).second)
            fail(ErrorCode::DuplicateId, where + ": duplicate review_id '" + r.review_id + "'");
        reviews.push_back(std::move(r));
    }
    return reviews;
}

inline std::vector<Review> load_reviews(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::IoError, "cannot open '" + path + "'");
    return parse_reviews(in);
}

inline void write_reviews(std::ostream& out, const std::vector<Review>& reviews) {
    for (const auto& r : reviews) {
        nlohmann::ordered_json j;
        j["review_id"] = r.review_id;
        j["text"] = r.text;
        if (r.summary) j["summary"] = *r.summary;
        out << j.dump() << '\n';
    }
}

// ---------------------------------------------------------------------------
// Annotation
// ---------------------------------------------------------------------------

struct LabeledSentence {
    std::string raw;
    std::string text;                  // preprocess(raw)
    std::optional<int> label;          // absent for reviews without a gold summary
    std::optional<double> rouge_score; // mean of ROUGE-1/2/L F1 against the gold summary
    std::optional<double> sim_score;   // cosine(H_s, H_r)

    bool operator==(const LabeledSentence&) const = default;
};

struct PreparedReview {
    std::string review_id;
    std::optional<std::string> summary;
    std::vector<LabeledSentence> sentences;

    /// Text used for the review embedding H_r.
    std::string review_text() const {
        std::string out;
        for (const auto& s : sentences) {
            if (s.text.empty()) continue;
            if (!out.empty()) out.push_back(' ');
            out += s.text;
        }
        return out;
    }

    bool labeled() const noexcept { return summary.has_value(); }
    bool operator==(const PreparedReview&) const = default;
};

struct AnnotateOptions {
    double tau_rouge = 0.15;
    double tau_sim = 0.8;
    bool use_sim = false;
};

inline double cosine(std::span<const double> a, std::span<const double> b) {
    const double na = norm(a);
    const double nb = norm(b);
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot(a, b) / (na * nb);
}

inline std::vector<LabeledSentence> unlabeled_sentences(std::string_view raw_text) {
    std::vector<LabeledSentence> out;
    for (auto& raw : split_sentences(raw_text)) {
        LabeledSentence s;
        s.text = preprocess(raw);
        s.raw = std::move(raw);
        out.push_back(std::move(s));
    }
    return out;
}

/// label = 1 iff mean ROUGE F1 vs gold >= tau_rouge, or (with use_sim)
/// cosine(H_s, H_r) >= tau_sim. `encoder` is only read when use_sim is set.
inline std::vector<LabeledSentence> annotate(const Review& review, const Encoder* encoder,
                                             const AnnotateOptions& opts = {}) {
    if (!review.summary || trim(*review.summary).empty()) fail(ErrorCode::NoGold, "review '" + review.review_id + "' has no gold summary");
    if (opts.use_sim && encoder == nullptr) fail(ErrorCode::ConfigError, "similarity labelling needs an encoder");
    const Tokens gold = rouge_tokens(*review.summary);
    std::vector<LabeledSentence> sentences = unlabeled_sentences(review.text);

    Vector review_emb;
    if (opts.use_sim) {
        PreparedReview tmp{review.review_id, review.summary, sentences};
        review_emb = encode(tmp.review_text(), *encoder).values;
    }
    for (auto& s : sentences) {
        s.rouge_score = rouge_all(split_whitespace(s.text), gold).mean_f1();
        bool relevant = *s.rouge_score >= opts.tau_rouge;
        if (opts.use_sim) {
            s.sim_score = cosine(encode(s.text, *encoder).values, review_emb);
            relevant = relevant || *s.sim_score >= opts.tau_sim;
        }
        s.label = relevant ? 1 : 0;
    }
    return sentences;
}

/// Reviews without a (non-blank) gold summary come back unlabeled and are
/// excluded from supervised training.
inline PreparedReview prepare_review(const Review& review, const Encoder* encoder, const AnnotateOptions& opts = {}) {
    PreparedReview p;
    p.review_id = review.review_id;
    if (review.summary && !trim(*review.summary).empty()) {
        p.summary = review.summary;
        p.sentences = annotate(review, encoder, opts);
    } else {
        p.sentences = unlabeled_sentences(review.text);
    }
    return p;
}

// ---------------------------------------------------------------------------
// Prepared dataset (JSON Lines)
// ---------------------------------------------------------------------------

inline nlohmann::ordered_json to_json(const PreparedReview& r) {
    nlohmann::ordered_json j;
    j["review_id"] = r.review_id;
    j["summary"] = r.summary ? nlohmann::ordered_json(*r.summary) : nlohmann::ordered_json(nullptr);
    auto& arr = j["sentences"] = nlohmann::ordered_json::array();
    for (const auto& s : r.sentences) {
        nlohmann::ordered_json js;
        js["raw"] = s.raw;
        js["text"] = s.text;
        js["label"] = s.label ? nlohmann::ordered_json(*s.label) : nlohmann::ordered_json(nullptr);
        js["rouge_score"] = s.rouge_score ? nlohmann::ordered_json(*s.rouge_score) : nlohmann::ordered_json(nullptr);
        if (s.sim_score) js["sim_score"] = *s.sim_score;
        arr.push_back(std::move(js));
    }
    return j;
}

inline void write_prepared(std::ostream& out, const std::vector<PreparedReview>& reviews) {
    for (const auto& r : reviews) out << to_json(r).dump() << '\n';
}

inline void save_prepared(const std::string& path, const std::vector<PreparedReview>& reviews) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorCode::IoError, "cannot write '" + path + "'");
    write_prepared(out, reviews);
}

inline std::vector<PreparedReview> parse_prepared(std::istream& in) {
    std::vector<PreparedReview> out;
    std::set<std::string> seen;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const std::string where = "line " + std::to_string(line_no);
        try {
            const auto j = nlohmann::json::parse(line);
            PreparedReview r;
            r.review_id = j.at("review_id").get<std::string>();
            if (j.contains("summary") && !j["summary"].is_null()) r.summary = j["summary"].get<std::string>();
            for (const auto& js : j.at("sentences")) {
                LabeledSentence s;
                s.raw = js.at("raw").get<std::string>();
                s.text = js.at("text").get<std::string>();
                if (js.contains("label") && !js["label"].is_null()) {
                    const int label = js["label"].get<int>();
                    if (label != 0 && label != 1) fail(ErrorCode::InvalidLabel, where + ": label must be 0 or 1");
                    s.label = label;
                }
                if (js.contains("rouge_score") && !js["rouge_score"].is_null()) s.rouge_score = js["rouge_score"].get<double>();
                if (js.contains("sim_score") && !js["sim_score"].is_null()) s.sim_score = js["sim_score"].get<double>();
                r.sentences.push_back(std::move(s));
            }
            if (!seen.insert(r.review_id).second)
                fail(ErrorCode::DuplicateId, where + ": duplicate review_id '" + r.review_id + "'");
            out.push_back(std::move(r));
        } catch (const nlohmann::json::exception& e) {
            fail(ErrorCode::ParseError, where + ": " + e.what());
        }
    }
    return out;
}

inline std::vector<PreparedReview> load_prepared(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::IoError, "cannot open '" + path + "'");
    return parse_prepared(in);
}

/// Every preprocessed text the encoder will see, in dataset order.
inline std::vector<std::string> corpus_texts(const std::vector<PreparedReview>& reviews) {
    std::vector<std::string> texts;
    for (const auto& r : reviews)
        for (const auto& s : r.sentences) texts.push_back(s.text);
    return texts;
}

}  // namespace mpsum
