// BLEU-1 (corpus-level clipped unigram precision with brevity penalty) and
// ROUGE-L (LCS-based F-measure, beta = 1.2, macro-averaged).
#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "gummp/errors.hpp"

namespace gummp {

using TokenSeq = std::vector<std::string>;

namespace detail {

struct Bleu1Counts {
    size_t clipped = 0, cand_len = 0, ref_len = 0;
};

inline Bleu1Counts bleu1_counts(const TokenSeq& cand, const TokenSeq& ref) {
    Bleu1Counts c;
    c.cand_len = cand.size();
    c.ref_len = ref.size();
    std::map<std::string, size_t> ref_counts;
    for (const auto& t : ref) ++ref_counts[t];
    std::map<std::string, size_t> cand_counts;
    for (const auto& t : cand) ++cand_counts[t];
    for (const auto& [tok, n] : cand_counts) {
        auto it = ref_counts.find(tok);
        if (it != ref_counts.end()) c.clipped += std::min(n, it->second);
    }
    return c;
}

inline double bleu1_score(const Bleu1Counts& c) {
    if (c.cand_len == 0) return 0.0;
    double precision = static_cast<double>(c.clipped) / static_cast<double>(c.cand_len);
    double bp = std::min(1.0, std::exp(1.0 - static_cast<double>(c.ref_len) /
                                                 static_cast<double>(c.cand_len)));
    return precision * bp;
}

}  // namespace detail

inline size_t lcs_length(const TokenSeq& a, const TokenSeq& b) {
    if (a.empty() || b.empty()) return 0;
    std::vector<size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (size_t i = 1; i <= a.size(); ++i) {
        for (size_t j = 1; j <= b.size(); ++j) {
            cur[j] = (a[i - 1] == b[j - 1]) ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

// Corpus-level BLEU-1: unigram matches and lengths pooled over all pairs,
// brevity penalty from the pooled lengths.
inline double bleu1(const std::vector<TokenSeq>& candidates, const std::vector<TokenSeq>& references) {
    if (candidates.empty()) throw DegenerateInputError("bleu1: empty candidate set");
    if (candidates.size() != references.size())
        throw ShapeError("bleu1: " + std::to_string(candidates.size()) + " candidates vs " +
                         std::to_string(references.size()) + " references");
    detail::Bleu1Counts total;
    for (size_t i = 0; i < candidates.size(); ++i) {
        auto c = detail::bleu1_counts(candidates[i], references[i]);
        total.clipped += c.clipped;
        total.cand_len += c.cand_len;
        total.ref_len += c.ref_len;
    }
    return detail::bleu1_score(total);
}

inline double bleu1_sentence(const TokenSeq& cand, const TokenSeq& ref) {
    return detail::bleu1_score(detail::bleu1_counts(cand, ref));
}

constexpr double kRougeBeta = 1.2;

inline double rouge_l(const TokenSeq& cand, const TokenSeq& ref) {
    size_t lcs = lcs_length(cand, ref);
    if (lcs == 0) return 0.0;
    double r = static_cast<double>(lcs) / static_cast<double>(ref.size());
    double p = static_cast<double>(lcs) / static_cast<double>(cand.size());
    double b2 = kRougeBeta * kRougeBeta;
    return (1.0 + b2) * r * p / (r + b2 * p);
}

struct EvalReport {
    double bleu1 = 0.0;    // corpus-level
    double rouge_l = 0.0;  // macro average of sentence ROUGE-L
    struct PerExample {
        std::string id;
        double bleu1 = 0.0;
        double rouge_l = 0.0;
    };
    std::vector<PerExample> per_example;

    size_t n_examples() const { return per_example.size(); }
};

inline EvalReport evaluate(const std::vector<std::string>& ids,
                           const std::vector<TokenSeq>& candidates,
                           const std::vector<TokenSeq>& references) {
    EvalReport rep;
    rep.bleu1 = bleu1(candidates, references);
    double rouge_acc = 0.0;
    for (size_t i = 0; i < candidates.size(); ++i) {
        EvalReport::PerExample pe;
        pe.id = i < ids.size() ? ids[i] : std::to_string(i);
        pe.bleu1 = bleu1_sentence(candidates[i], references[i]);
        pe.rouge_l = rouge_l(candidates[i], references[i]);
        rouge_acc += pe.rouge_l;
        rep.per_example.push_back(std::move(pe));
    }
    rep.rouge_l = rouge_acc / static_cast<double>(candidates.size());
    return rep;
}

inline std::string report_json(const EvalReport& rep) {
    nlohmann::json per = nlohmann::json::array();
    for (const auto& pe : rep.per_example)
        per.push_back({{"id", pe.id}, {"bleu1", pe.bleu1}, {"rougeL", pe.rouge_l}});
    nlohmann::json j{{"bleu1", rep.bleu1},
                     {"rougeL", rep.rouge_l},
                     {"n_examples", rep.n_examples()},
                     {"per_example", per}};
    return j.dump();
}

}  // namespace gummp
