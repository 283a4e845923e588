#pragma once

#include <algorithm>
#include <cstddef>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "mpsum/error.hpp"

namespace mpsum {

using Tokens = std::vector<std::string>;

struct RougeScore {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

inline RougeScore make_rouge_score(double overlap, double cand_total, double ref_total) {
    RougeScore s;
    s.precision = cand_total > 0.0 ? overlap / cand_total : 0.0;
    s.recall = ref_total > 0.0 ? overlap / ref_total : 0.0;
    const double sum = s.precision + s.recall;
    s.f1 = sum > 0.0 ? 2.0 * s.precision * s.recall / sum : 0.0;
    return s;
}

namespace detail {

inline std::map<std::string, std::size_t> ngram_counts(const Tokens& tokens, std::size_t n) {
    std::map<std::string, std::size_t> counts;
    if (tokens.size() < n) return counts;
    for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
        std::string key = tokens[i];
        for (std::size_t k = 1; k < n; ++k) {
            key.push_back('\x1f');
            key += tokens[i + k];
        }
        ++counts[key];
    }
    return counts;
}

}  // namespace detail

/// Clipped n-gram overlap.
inline RougeScore rouge_n(const Tokens& candidate, const Tokens& reference, std::size_t n) {
    if (n == 0) fail(ErrorCode::DomainError, "ROUGE-n needs n >= 1");
    const auto cand = detail::ngram_counts(candidate, n);
    const auto ref = detail::ngram_counts(reference, n);
    std::size_t overlap = 0;
    for (const auto& [gram, count] : cand) {
        const auto it = ref.find(gram);
        if (it != ref.end()) overlap += std::min(count, it->second);
    }
    const auto total = [](std::size_t len, std::size_t k) { return len >= k ? static_cast<double>(len - k + 1) : 0.0; };
    return make_rouge_score(static_cast<double>(overlap), total(candidate.size(), n), total(reference.size(), n));
}

inline std::size_t lcs_len(const Tokens& a, const Tokens& b) {
    if (a.empty() || b.empty()) return 0;
    std::vector<std::size_t> prev(b.size() + 1, 0);
    std::vector<std::size_t> cur(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j)
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

inline RougeScore rouge_l(const Tokens& candidate, const Tokens& reference) {
    const auto lcs = static_cast<double>(lcs_len(candidate, reference));
    return make_rouge_score(lcs, static_cast<double>(candidate.size()), static_cast<double>(reference.size()));
}

struct RougeTriple {
    RougeScore r1;
    RougeScore r2;
    RougeScore rl;

    double mean_f1() const noexcept { return (r1.f1 + r2.f1 + rl.f1) / 3.0; }
};

inline RougeTriple rouge_all(const Tokens& candidate, const Tokens& reference) {
    return {rouge_n(candidate, reference, 1), rouge_n(candidate, reference, 2), rouge_l(candidate, reference)};
}

struct CorpusRouge {
    double rouge1 = 0.0;
    double rouge2 = 0.0;
    double rougeL = 0.0;
    std::vector<RougeTriple> per_pair;
};

/// Unweighted mean of per-pair F1.
inline CorpusRouge corpus_rouge(const std::vector<std::pair<Tokens, Tokens>>& generated_gold) {
    if (generated_gold.empty()) fail(ErrorCode::DegenerateInput, "corpus ROUGE needs at least one pair");
    CorpusRouge c;
    for (const auto& [gen, gold] : generated_gold) {
        const RougeTriple t = rouge_all(gen, gold);
        c.rouge1 += t.r1.f1;
        c.rouge2 += t.r2.f1;
        c.rougeL += t.rl.f1;
        c.per_pair.push_back(t);
    }
    const auto n = static_cast<double>(generated_gold.size());
    c.rouge1 /= n;
    c.rouge2 /= n;
    c.rougeL /= n;
    return c;
}

}  // namespace mpsum
