// Tokenization, vocabulary construction and the extended-vocabulary map
// that lets the copy mechanism emit out-of-vocabulary source tokens.
#pragma once

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "gummp/errors.hpp"
#include "gummp/ndarray.hpp"

namespace gummp {

// Lowercase, split on whitespace, punctuation characters become standalone
// tokens. Idempotent on its own output.
inline std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    auto flush = [&]() {
        if (!cur.empty()) {
            out.push_back(cur);
            cur.clear();
        }
    };
    for (char ch : text) {
        unsigned char c = static_cast<unsigned char>(ch);
        if (std::isspace(c)) {
            flush();
        } else if (std::ispunct(c)) {
            flush();
            out.emplace_back(1, ch);
        } else {
            cur.push_back(static_cast<char>(std::tolower(c)));
        }
    }
    flush();
    return out;
}

class Vocabulary {
public:
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;
    static constexpr int kBos = 2;
    static constexpr int kEos = 3;
    static constexpr int kNumSpecials = 4;

    Vocabulary() { add_specials_(); }

    // Specials plus the (max_size - 4) most frequent corpus tokens; frequency
    // ties broken lexicographically.
    static Vocabulary build(const std::vector<std::vector<std::string>>& corpus, size_t max_size) {
        if (max_size < kNumSpecials + 1)
            throw ConfigError("vocabulary max_size must be at least 5, got " +
                              std::to_string(max_size));
        if (corpus.empty()) throw ConfigError("vocabulary corpus is empty");
        std::map<std::string, size_t> freq;
        for (const auto& seq : corpus)
            for (const auto& tok : seq) ++freq[tok];
        std::vector<std::pair<std::string, size_t>> items(freq.begin(), freq.end());
        std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
            if (a.second != b.second) return a.second > b.second;
            return a.first < b.first;
        });
        Vocabulary v;
        size_t capacity = max_size - kNumSpecials;
        for (size_t i = 0; i < items.size() && i < capacity; ++i) v.add_(items[i].first);
        return v;
    }

    size_t size() const { return tokens_.size(); }

    int id_of(const std::string& tok) const {
        auto it = index_.find(tok);
        return it == index_.end() ? kUnk : it->second;
    }

    bool contains(const std::string& tok) const { return index_.count(tok) != 0; }

    const std::string& token_of(int id) const {
        if (id < 0 || static_cast<size_t>(id) >= tokens_.size())
            throw ContractError("token id " + std::to_string(id) + " out of range " +
                                std::to_string(tokens_.size()));
        return tokens_[id];
    }

    std::vector<int> encode(const std::vector<std::string>& toks) const {
        std::vector<int> ids;
        ids.reserve(toks.size());
        for (const auto& t : toks) ids.push_back(id_of(t));
        return ids;
    }

    // One token per line, line number == id, specials first.
    void save(const std::string& path) const {
        std::ofstream os(path, std::ios::binary);
        if (!os) throw IntegrityError("cannot write vocabulary file " + path);
        for (const auto& t : tokens_) os << t << "\n";
    }

    static Vocabulary load(const std::string& path) {
        std::ifstream is(path, std::ios::binary);
        if (!is) throw IntegrityError("cannot read vocabulary file " + path);
        Vocabulary v;
        v.tokens_.clear();
        v.index_.clear();
        std::string line;
        while (std::getline(is, line)) v.add_(line);
        if (v.size() < kNumSpecials || v.tokens_[kPad] != "<pad>" || v.tokens_[kUnk] != "<unk>" ||
            v.tokens_[kBos] != "<s>" || v.tokens_[kEos] != "</s>")
            throw IntegrityError("vocabulary file " + path + " lacks the special tokens");
        return v;
    }

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> index_;

    void add_specials_() {
        add_("<pad>");
        add_("<unk>");
        add_("<s>");
        add_("</s>");
    }

    void add_(const std::string& tok) {
        index_.emplace(tok, static_cast<int>(tokens_.size()));
        tokens_.push_back(tok);
    }
};

// Per-example map from out-of-vocabulary source surface forms to temporary
// ids V, V+1, ... in first-occurrence order over passages then question.
struct ExtendedVocabMap {
    size_t base_size = 0;
    std::vector<std::string> oov_tokens;              // extended id = base_size + index
    std::unordered_map<std::string, int> to_extended;  // surface -> extended id

    size_t extended_size() const { return base_size + oov_tokens.size(); }

    int extended_id(const std::string& tok) const {
        auto it = to_extended.find(tok);
        return it == to_extended.end() ? -1 : it->second;
    }

    const std::string& surface_of(int ext_id) const {
        return oov_tokens.at(static_cast<size_t>(ext_id) - base_size);
    }
};

// Builds the OOV map plus each source position's extended-or-base id.
struct ExtendedIds {
    ExtendedVocabMap map;
    std::vector<std::vector<int>> passage_ids;  // per passage, per position
    std::vector<int> question_ids;
};

inline ExtendedIds map_extended(const std::vector<std::vector<std::string>>& passages,
                                const std::vector<std::string>& question,
                                const Vocabulary& vocab) {
    ExtendedIds out;
    out.map.base_size = vocab.size();
    auto resolve = [&](const std::string& tok) -> int {
        if (vocab.contains(tok)) return vocab.id_of(tok);
        auto it = out.map.to_extended.find(tok);
        if (it != out.map.to_extended.end()) return it->second;
        int ext = static_cast<int>(out.map.base_size + out.map.oov_tokens.size());
        out.map.to_extended.emplace(tok, ext);
        out.map.oov_tokens.push_back(tok);
        return ext;
    };
    for (const auto& p : passages) {
        std::vector<int> ids;
        ids.reserve(p.size());
        for (const auto& tok : p) ids.push_back(resolve(tok));
        out.passage_ids.push_back(std::move(ids));
    }
    out.question_ids.reserve(question.size());
    for (const auto& tok : question) out.question_ids.push_back(resolve(tok));
    return out;
}

}  // namespace gummp
